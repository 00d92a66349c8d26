"""Synthetic fine-grained dataset with one planted class motif per image.

Each class owns an 8x8 binary pattern. Every image shows its class pattern
once, among ``clutter`` distractor tiles drawn in exactly the same style from
patterns that match no class. Only the identity of one tile tells classes
apart, so the ground-truth discriminative region is known per image.

Layout written by :func:`synth_generate`::

    <out>/train/<class>/<nnnn>.png   <out>/train/motifs.index
    <out>/test/<class>/<nnnn>.png    <out>/test/motifs.index

``motifs.index`` has one line per image: ``path class y0 x0 y1 x1`` with the
path relative to the split root and the box half-open in pixels.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

MOTIF_SIDE = 8
MIN_HAMMING = 16


@dataclass
class SyntheticSpec:
    num_classes: int = 10
    train_per_class: int = 100
    test_per_class: int = 50
    canvas: int = 64
    clutter: int = 1  # distractor tiles per image
    motif_scale: int = 2  # pixels per motif cell
    margin: int = 8  # keep tiles clear of the border so a centre crop keeps them
    noise: float = 0.06

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def tile(self) -> int:
        return MOTIF_SIDE * self.motif_scale

    def validate(self) -> None:
        if self.num_classes < 1 or self.train_per_class < 0 or self.test_per_class < 0:
            raise ValueError(f"invalid counts in {self}")
        if self.canvas - 2 * self.margin < self.tile:
            raise ValueError(f"a {self.tile}px tile does not fit a {self.canvas}px canvas with margin {self.margin}")


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.count_nonzero(a != b))


def far_from(cand: np.ndarray, patterns) -> bool:
    """True when ``cand`` is >= MIN_HAMMING from every pattern and its mirror image.

    Training flips images horizontally, so a mirrored pattern must not pass
    for another one.
    """
    return all(hamming(cand, m) >= MIN_HAMMING and hamming(cand, m[:, ::-1]) >= MIN_HAMMING
               for m in patterns)


def class_motifs(num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """(num_classes, 8, 8) binary patterns, pairwise Hamming distance >= 16, mirrors included."""
    motifs: list[np.ndarray] = []
    while len(motifs) < num_classes:
        cand = (rng.random((MOTIF_SIDE, MOTIF_SIDE)) < 0.5).astype(np.uint8)
        if far_from(cand, motifs):
            motifs.append(cand)
    return np.stack(motifs)


def distractor(motifs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    while True:
        cand = (rng.random((MOTIF_SIDE, MOTIF_SIDE)) < 0.5).astype(np.uint8)
        if far_from(cand, motifs):
            return cand


def _draw_tile(canvas: np.ndarray, pattern: np.ndarray, y: int, x: int, scale: int,
               rng: np.random.Generator) -> None:
    on = rng.uniform(0.75, 1.0, size=3)
    off = rng.uniform(0.0, 0.25, size=3)
    cells = np.kron(pattern, np.ones((scale, scale), dtype=np.uint8)).astype(bool)
    side = cells.shape[0]
    canvas[y:y + side, x:x + side] = np.where(cells[..., None], on, off)


def render_image(label: int, motifs: np.ndarray, spec: SyntheticSpec,
                 rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """(H, W, 3) uint8 image and the motif box ``(y0, x0, y1, x1)``."""
    size, tile = spec.canvas, spec.tile
    lo, hi = spec.margin, size - spec.margin - tile
    base = rng.uniform(0.3, 0.7, size=3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    tilt = rng.uniform(-0.15, 0.15, size=(2, 3))
    img = base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1]
    for _ in range(spec.clutter):
        y, x = rng.integers(lo, hi + 1, size=2)
        _draw_tile(img, distractor(motifs, rng), int(y), int(x), spec.motif_scale, rng)
    y0, x0 = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    _draw_tile(img, motifs[label], y0, x0, spec.motif_scale, rng)
    img = img + rng.normal(0.0, spec.noise, size=img.shape)
    pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return pixels, (y0, x0, y0 + tile, x0 + tile)


def _write_split(root: Path, per_class: int, motifs: np.ndarray, spec: SyntheticSpec,
                 rng: np.random.Generator) -> None:
    lines = []
    width = max(2, len(str(spec.num_classes - 1)))
    for label in range(spec.num_classes):
        cls_dir = root / f"class_{label:0{width}d}"
        cls_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            pixels, (y0, x0, y1, x1) = render_image(label, motifs, spec, rng)
            rel = f"{cls_dir.name}/{i:04d}.png"
            Image.fromarray(pixels, mode="RGB").save(root / rel, format="PNG", optimize=False)
            lines.append(f"{rel} {label} {y0} {x0} {y1} {x1}")
    (root / "motifs.index").write_text("\n".join(lines) + "\n")


def synth_generate(spec: SyntheticSpec, out_dir: str | os.PathLike, seed: int) -> Path:
    """Write train/ and test/ splits; identical seed and spec give identical bytes."""
    spec.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"synth_generate: cannot write to {out}: {exc}") from exc
    rng = np.random.default_rng(seed)
    motifs = class_motifs(spec.num_classes, rng)
    _write_split(out / "train", spec.train_per_class, motifs, spec, np.random.default_rng([seed, 1]))
    _write_split(out / "test", spec.test_per_class, motifs, spec, np.random.default_rng([seed, 2]))
    meta = {"seed": seed, "spec": asdict(spec), "motifs": motifs.tolist()}
    (out / "synthetic.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out


def read_motif_index(root: str | os.PathLike) -> dict[str, tuple[int, tuple[int, int, int, int]]]:
    """``relative path -> (class, (y0, x0, y1, x1))``; empty if the index is absent."""
    path = Path(root) / "motifs.index"
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rel, label, y0, x0, y1, x1 = line.split()
        out[rel] = (int(label), (int(y0), int(x0), int(y1), int(x1)))
    return out
