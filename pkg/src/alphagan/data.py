"""Desk-scale datasets: 2D Gaussian mixtures, procedural shape images, IDX files."""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class GaussianMixtureSpec:
    means: np.ndarray
    sigma: float
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if means.ndim != 2 or means.shape[1] != 2:
            raise ValueError("mixture means must be 2D points")
        if weights.shape != (means.shape[0],) or np.any(weights < 0):
            raise ValueError("weights must be a non-negative vector, one per mean")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)

    @property
    def n_modes(self) -> int:
        return self.means.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.n_modes, size=n, p=self.weights)
        return self.means[idx] + self.sigma * rng.standard_normal((n, 2))


@dataclass
class Dataset:
    kind: str  # "points2d" or "images"
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    image_shape: tuple[int, ...] | None = None
    train_labels: np.ndarray | None = None
    valid_labels: np.ndarray | None = None
    test_labels: np.ndarray | None = None
    mixture: GaussianMixtureSpec | None = None
    n_classes: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("points2d", "images"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        for split in (self.train, self.valid, self.test):
            split.flags.writeable = False
        if self.kind == "images":
            filled = [s for s in (self.train, self.valid, self.test) if s.size]
            if any(s.min() < -1.0 or s.max() > 1.0 for s in filled):
                raise ValueError("image datasets must be normalised to [-1, 1]")

    @property
    def dim(self) -> int:
        return self.train.shape[1]

    @property
    def labelled(self) -> bool:
        return self.train_labels is not None

    def splits(self) -> dict[str, np.ndarray]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


def row_hashes(rows: np.ndarray) -> set[bytes]:
    return {hashlib.sha1(np.ascontiguousarray(r).tobytes()).digest() for r in rows}


def splits_disjoint(ds: Dataset) -> bool:
    a, b, c = (row_hashes(s) for s in (ds.train, ds.valid, ds.test))
    return not (a & b or a & c or b & c)


def _split_sizes(n_per_split) -> tuple[int, int, int]:
    sizes = (n_per_split,) * 3 if isinstance(n_per_split, int) else tuple(n_per_split)
    if len(sizes) != 3 or any(int(s) < 1 for s in sizes):
        raise ValueError(f"need three positive split sizes, got {n_per_split}")
    return tuple(int(s) for s in sizes)


def _mixture_dataset(mixture: GaussianMixtureSpec, n_per_split, seed: int, meta: dict) -> Dataset:
    sizes = _split_sizes(n_per_split)
    rng = np.random.default_rng(seed)
    train, valid, test = (mixture.sample(n, rng) for n in sizes)
    return Dataset("points2d", train, valid, test, mixture=mixture, meta=meta)


def ring_mixture(n_modes: int = 8, radius: float = 2.0, sigma: float = 0.02) -> GaussianMixtureSpec:
    if n_modes < 2:
        raise ValueError("a ring needs at least two modes")
    if not radius > 0:
        raise ValueError("radius must be positive")
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    means[np.abs(means) < 1e-12] = 0.0
    return GaussianMixtureSpec(means, sigma, np.full(n_modes, 1.0 / n_modes))


def ring_of_gaussians(
    n_modes: int = 8,
    radius: float = 2.0,
    sigma: float = 0.02,
    n_per_split=(20000, 5000, 5000),
    seed: int = 0,
) -> Dataset:
    mixture = ring_mixture(n_modes, radius, sigma)
    meta = {"name": "ring", "n_modes": n_modes, "radius": radius, "sigma": sigma}
    return _mixture_dataset(mixture, n_per_split, seed, meta)


def grid_mixture(side: int = 5, spacing: float = 2.0, sigma: float = 0.05) -> GaussianMixtureSpec:
    if side < 1:
        raise ValueError("grid side must be positive")
    coords = (np.arange(side) - (side - 1) / 2.0) * spacing
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    means = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return GaussianMixtureSpec(means, sigma, np.full(side * side, 1.0 / (side * side)))


def grid_of_gaussians(
    side: int = 5,
    spacing: float = 2.0,
    sigma: float = 0.05,
    n_per_split=(20000, 5000, 5000),
    seed: int = 0,
) -> Dataset:
    mixture = grid_mixture(side, spacing, sigma)
    meta = {"name": "grid", "side": side, "spacing": spacing, "sigma": sigma}
    return _mixture_dataset(mixture, n_per_split, seed, meta)


# -- procedural shapes ---------------------------------------------------------

_BAR_ANGLES = (0.0, np.pi / 2, np.pi / 4, 3 * np.pi / 4)
_BLOB_CENTRES = ((0.3, 0.3), (0.3, 0.7), (0.7, 0.3), (0.7, 0.7))


def _render_shape(label: int, side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    yy, xx = (yy + 0.5) / side, (xx + 0.5) / side
    if label < len(_BAR_ANGLES):
        angle = _BAR_ANGLES[label] + rng.uniform(-0.12, 0.12)
        cy, cx = 0.5 + rng.uniform(-0.15, 0.15, size=2)
        half_width = rng.uniform(0.06, 0.1)
        half_length = rng.uniform(0.3, 0.42)
        dx, dy = xx - cx, yy - cy
        along = dx * np.cos(angle) + dy * np.sin(angle)
        across = -dx * np.sin(angle) + dy * np.cos(angle)
        inside = (np.abs(across) <= half_width) & (np.abs(along) <= half_length)
        img = inside.astype(np.float64)
    else:
        cy, cx = np.asarray(_BLOB_CENTRES[label - len(_BAR_ANGLES)]) + rng.uniform(-0.06, 0.06, size=2)
        radius = rng.uniform(0.12, 0.18)
        img = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius**2))
    intensity = rng.uniform(0.7, 1.0)
    return np.clip(2.0 * intensity * img - 1.0, -1.0, 1.0)


def procedural_shapes(n_classes: int = 4, image_side: int = 16, n_per_split=(4000, 800, 800), seed: int = 0) -> Dataset:
    """Labelled raster images: bars at four orientations, then blobs at four positions.

    Each split holds an equal number of images per class.
    """
    max_classes = len(_BAR_ANGLES) + len(_BLOB_CENTRES)
    if not 2 <= n_classes <= max_classes:
        raise ValueError(f"n_classes must lie in [2, {max_classes}]")
    if image_side < 8:
        raise ValueError("image_side must be at least 8")
    sizes = _split_sizes(n_per_split)
    if any(n % n_classes for n in sizes):
        raise ValueError("split sizes must be multiples of n_classes")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for n in sizes:
        y = rng.permutation(np.repeat(np.arange(n_classes), n // n_classes))
        x = np.stack([_render_shape(int(k), image_side, rng).ravel() for k in y])
        images.append(x)
        labels.append(y)
    meta = {"name": "shapes", "n_classes": n_classes, "image_side": image_side}
    return Dataset(
        "images",
        *images,
        image_shape=(image_side, image_side),
        train_labels=labels[0],
        valid_labels=labels[1],
        test_labels=labels[2],
        n_classes=n_classes,
        meta=meta,
    )


# -- IDX ingestion ---------------------------------------------------------------

def _read_header(buf: bytes, path, magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise TruncatedFileError(f"{path}: truncated file (header needs {need} bytes, found {len(buf)})")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return struct.unpack(f">{ndim}I", buf[4:need])


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    count, rows, cols = _read_header(buf, path, IDX_IMAGES_MAGIC, 3)
    body = buf[16:]
    expected = count * rows * cols
    if len(body) < expected:
        raise TruncatedFileError(f"{path}: truncated file ({len(body)} of {expected} pixel bytes)")
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (count,) = _read_header(buf, path, IDX_LABELS_MAGIC, 1)
    body = buf[8:]
    if len(body) < count:
        raise TruncatedFileError(f"{path}: truncated file ({len(body)} of {count} label bytes)")
    return np.frombuffer(body, dtype=np.uint8, count=count).copy()


def idx_load(images_path, labels_path=None, seed: int = 0) -> Dataset:
    """Load IDX images (and optional labels), scale pixels to [-1, 1], split 80/10/10."""
    if not os.path.exists(images_path):
        raise FileNotFoundError(images_path)
    raw = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if labels.shape[0] != raw.shape[0]:
            raise CountMismatchError(
                f"image/label count mismatch: {raw.shape[0]} images, {labels.shape[0]} labels"
            )
    count, rows, cols = raw.shape
    pixels = raw.reshape(count, rows * cols).astype(np.float64) / 127.5 - 1.0
    order = np.random.default_rng(seed).permutation(count)
    n_train, n_valid = int(0.8 * count), int(0.1 * count)
    parts = np.split(order, [n_train, n_train + n_valid])
    splits = [pixels[p] for p in parts]
    label_splits = [labels[p] for p in parts] if labels is not None else [None] * 3
    n_classes = int(labels.max()) + 1 if labels is not None and labels.size else None
    return Dataset(
        "images",
        *splits,
        image_shape=(rows, cols),
        train_labels=label_splits[0],
        valid_labels=label_splits[1],
        test_labels=label_splits[2],
        n_classes=n_classes,
        meta={"name": "idx", "images": str(images_path), "labels": str(labels_path) if labels_path else None},
    )


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


# -- dataset specs -----------------------------------------------------------------

DATASET_BUILDERS = {
    "ring": ring_of_gaussians,
    "grid": grid_of_gaussians,
    "shapes": procedural_shapes,
    "idx": idx_load,
}


def make_dataset(spec: dict) -> Dataset:
    """Build a dataset from ``{"name": ..., **keyword arguments}``.

    ``name`` is one of ``ring``, ``grid``, ``shapes`` or ``idx``; the other
    keys are passed to the matching builder.
    """
    if not isinstance(spec, dict) or "name" not in spec:
        raise ValueError("dataset spec must be an object with a 'name' key")
    params = dict(spec)
    name = params.pop("name")
    if name not in DATASET_BUILDERS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {sorted(DATASET_BUILDERS)}")
    if "n_per_split" in params and isinstance(params["n_per_split"], list):
        params["n_per_split"] = tuple(params["n_per_split"])
    try:
        return DATASET_BUILDERS[name](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for dataset {name!r}: {exc}") from exc
