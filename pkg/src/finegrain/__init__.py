"""Weakly supervised point selection, background flattening and multi-scale
fusion for fine-grained classification, on a small numpy autodiff core."""

__version__ = "0.1.0"
