import numpy as np
import pytest

from finegrain.diffcore import set_precision


@pytest.fixture(autouse=True)
def float64():
    """Every test runs in 64-bit mode unless it switches explicitly."""
    set_precision(64)
    yield
    set_precision(64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_check(loss_fn, tensors, h=1e-5, tol=1e-4, max_entries=60, seed=0):
    """Compare every (or up to ``max_entries`` random) tape gradient entries with central differences."""
    from finegrain.diffcore import backward, numerical_grad, relative_error

    loss = loss_fn()
    backward(loss, tensors)
    pick = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()
        flat = list(np.ndindex(t.shape)) if t.ndim else [()]
        if len(flat) > max_entries:
            flat = [flat[i] for i in pick.choice(len(flat), max_entries, replace=False)]
        for idx in flat:
            num = numerical_grad(lambda: float(loss_fn().data), t, idx, h)
            err = relative_error(float(analytic[idx]), num, floor=1e-6)
            worst = max(worst, err)
            assert err < tol, (t.name, idx, analytic[idx], num)
    return worst


def micro_model(seed=0, **overrides):
    """Two-block 8x8 model with 3 classes, used for gradient oracles."""
    from finegrain.backbone import BackboneConfig
    from finegrain.combiner import CombinerConfig
    from finegrain.model import ModelConfig, PlugInModel
    from finegrain.selector import SelectorConfig

    kw = dict(
        num_classes=3,
        backbone=BackboneConfig(num_blocks=2, input_resolution=8, widths=[4, 6], fpn_width=8),
        selector=SelectorConfig(num_selects=[4, 2]),
        combiner=CombinerConfig(variant="GCN", gcn_layers=1, pooling_ratios=["1/2"]),
    )
    kw.update(overrides)
    return PlugInModel(ModelConfig(**kw), np.random.default_rng(seed))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
