"""Small stride-2 conv backbone plus a top-down feature pyramid."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Conv2d, Module, Tensor, ops


@dataclass
class BackboneConfig:
    num_blocks: int = 4
    input_resolution: int = 64
    widths: list[int] = field(default_factory=lambda: [16, 32, 48, 64])
    fpn_width: int = 64
    in_channels: int = 3

    def __post_init__(self):
        if len(self.widths) != self.num_blocks:
            raise ValueError(f"{self.num_blocks} blocks need {self.num_blocks} widths, got {self.widths}")
        if self.input_resolution % (2 ** self.num_blocks):
            raise ValueError(
                f"input resolution {self.input_resolution} not divisible by 2^{self.num_blocks}"
            )

    def spatial(self, block: int) -> int:
        """Side length of block ``block`` (1-based) output."""
        return self.input_resolution // 2 ** block


@dataclass
class FeatureMap:
    block_index: int  # 1-based
    features: Tensor  # (N, C, H, W)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @property
    def hw(self) -> tuple[int, int]:
        return self.features.shape[2], self.features.shape[3]


class Block(Module):
    """stride-2 conv -> relu -> conv -> relu"""

    def __init__(self, rng, c_in, c_out):
        self.down = Conv2d(rng, c_in, c_out, 3, stride=2)
        self.conv = Conv2d(rng, c_out, c_out, 3, stride=1)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv(ops.relu(self.down(x))))


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        chans = [cfg.in_channels] + list(cfg.widths)
        self.blocks = [Block(rng, chans[i], chans[i + 1]) for i in range(cfg.num_blocks)]

    def extract(self, images: Tensor) -> list[FeatureMap]:
        """Run the blocks; returns one pre-pyramid map per block."""
        if images.ndim == 3:
            images = ops.reshape(images, (1,) + images.shape)
        r = self.cfg.input_resolution
        if images.ndim != 4 or images.shape[1:] != (self.cfg.in_channels, r, r):
            raise ValueError(
                f"backbone expects images of shape (N, {self.cfg.in_channels}, {r}, {r}), got {images.shape}"
            )
        maps = []
        x = images
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            maps.append(FeatureMap(i, x))
        return maps


class FPN(Module):
    """Lateral 1x1 projections to a shared width, summed top-down.

    The coarsest level is its projection alone; each finer level adds the
    nearest-neighbour 2x upsampling of the level above.
    """

    def __init__(self, in_widths: list[int], width: int, rng: np.random.Generator):
        self.width = width
        self.lateral = [Conv2d(rng, c, width, 1, padding=0, gain=1.0) for c in in_widths]

    def __call__(self, maps: list[FeatureMap]) -> list[FeatureMap]:
        return fpn_fuse(maps, self.lateral)


def fpn_fuse(maps: list[FeatureMap], lateral: list) -> list[FeatureMap]:
    ids = [m.block_index for m in maps]
    if ids != list(range(ids[0], ids[0] + len(ids))):
        raise ValueError(f"fpn_fuse: block indices must be contiguous and ascending, got {ids}")
    if len(lateral) != len(maps):
        raise ValueError(f"fpn_fuse: {len(lateral)} projections for {len(maps)} maps")
    out: list[FeatureMap | None] = [None] * len(maps)
    top = None
    for i in reversed(range(len(maps))):
        proj = lateral[i](maps[i].features)
        if top is not None:
            proj = ops.add(proj, ops.upsample2x_nearest(top))
        out[i] = FeatureMap(maps[i].block_index, proj)
        top = proj
    return out
