"""Class-per-folder ingestion and the train/test augmentation pipeline."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .synth import read_motif_index

IMAGE_EXTENSIONS = (".png", ".ppm")


@dataclass
class Dataset:
    root: Path
    class_names: list[str]
    paths: list[str]  # relative to root
    labels: np.ndarray
    images: np.ndarray  # (N, H, W, 3) uint8
    motif_boxes: np.ndarray | None = None  # (N, 4) y0 x0 y1 x1, or None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.paths)


def load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:  # PIL raises several unrelated types
        raise ValueError(f"cannot decode image {path}: {exc}") from exc


def ingest(path: str | os.PathLike) -> Dataset:
    """Read ``<root>/<class>/<image>.png|ppm``; class ids follow sorted folder names."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_names:
        raise ValueError(f"no class folders under {root}")
    paths, labels = [], []
    for label, name in enumerate(class_names):
        files = sorted(
            p for p in (root / name).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise ValueError(f"class folder {root / name} holds no images")
        for f in files:
            paths.append(f"{name}/{f.name}")
            labels.append(label)
    images = [load_image(root / p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"images under {root} differ in size: {sorted(shapes)}")
    index = read_motif_index(root)
    boxes = None
    if index:
        missing = [p for p in paths if p not in index]
        if missing:
            raise ValueError(f"motifs.index lacks {len(missing)} images, e.g. {missing[0]}")
        boxes = np.array([index[p][1] for p in paths], dtype=np.int64)
    return Dataset(root, class_names, paths, np.array(labels, dtype=np.int64), np.stack(images), boxes)


@dataclass
class AugmentConfig:
    scale_size: int = 85  # 64 * 600/448 rounded
    flip_p: float = 0.5
    blur_p: float = 0.5
    blur_sigma: list[float] = field(default_factory=lambda: [0.1, 2.0])


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (h, w) == (size, size):
        return img
    return ndimage.zoom(img, (size / h, size / w, 1), order=1, mode="nearest", grid_mode=True)


def normalize(img: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float (3, H, W) in [-1, 1]."""
    return (img.astype(np.float64).transpose(2, 0, 1) / 127.5) - 1.0


def center_offset(scaled: int, crop: int) -> int:
    return (scaled - crop) // 2


def augment(image: np.ndarray, mode: str, crop: int, cfg: AugmentConfig,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Scale, crop (random in train, centred in test), then in train flip and blur.

    ``image`` is (H, W, 3) uint8 or float; returns float (3, crop, crop).
    """
    x = normalize(image) if image.dtype == np.uint8 else np.asarray(image, dtype=np.float64).transpose(2, 0, 1)
    x = _resize(x.transpose(1, 2, 0), cfg.scale_size).transpose(2, 0, 1)
    if cfg.scale_size < crop:
        raise ValueError(f"scale size {cfg.scale_size} smaller than crop {crop}")
    if mode == "test":
        o = center_offset(cfg.scale_size, crop)
        return np.ascontiguousarray(x[:, o:o + crop, o:o + crop])
    if mode != "train":
        raise ValueError(f"augment mode must be 'train' or 'test', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode augmentation needs a seeded generator")
    y0, x0 = (int(v) for v in rng.integers(0, cfg.scale_size - crop + 1, size=2))
    x = x[:, y0:y0 + crop, x0:x0 + crop]
    if rng.random() < cfg.flip_p:
        x = x[:, :, ::-1]
    if rng.random() < cfg.blur_p:
        sigma = rng.uniform(*cfg.blur_sigma)
        x = ndimage.gaussian_filter(x, sigma=(0, sigma, sigma), mode="nearest")
    return np.ascontiguousarray(x)


def hflip(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x[:, :, ::-1])


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample stream so results cannot depend on loading order."""
    return np.random.default_rng([seed, epoch, index])


def test_view_box(box, source: int, crop: int, cfg: AugmentConfig) -> tuple[float, float, float, float]:
    """Map a source-pixel box into the test-mode (scaled, centre-cropped) frame, clipped."""
    s = cfg.scale_size / source
    o = center_offset(cfg.scale_size, crop)
    y0, x0, y1, x1 = (v * s - o for v in box)
    clip = lambda v: min(max(v, 0.0), float(crop))  # noqa: E731
    return clip(y0), clip(x0), clip(y1), clip(x1)
