"""Synthetic sharp/blurred image pairs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..io import CorruptArtifactError, dump_json, load_json, read_blob, write_blob

BLUR_KINDS = ("gaussian", "box", "linear-motion", "identity")


@dataclass(frozen=True)
class DatasetSpec:
    count: int = 96
    size: int = 32
    channels: int = 1
    blur_kinds: tuple[str, ...] = ("gaussian", "box", "linear-motion")
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blur_kinds", tuple(self.blur_kinds))
        bad = set(self.blur_kinds) - set(BLUR_KINDS)
        if bad or not self.blur_kinds:
            raise ValueError(f"unknown blur kinds {sorted(bad)}")
        if self.count < 1 or self.size < 8 or self.channels < 1 or self.noise_sigma < 0:
            raise ValueError(f"invalid dataset spec {self}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blur_kinds"] = list(self.blur_kinds)
        return d


@dataclass
class PairedDataset:
    sharp: np.ndarray
    blurred: np.ndarray
    spec: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if self.sharp.shape != self.blurred.shape:
            raise ValueError("sharp and blurred arrays must have the same shape")

    def __len__(self) -> int:
        return self.sharp.shape[0]

    def subset(self, indices) -> "PairedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return PairedDataset(self.sharp[idx], self.blurred[idx], self.spec)

    def split(self, val_fraction: float = 0.25) -> tuple["PairedDataset", "PairedDataset"]:
        """Leading images for training, trailing ``val_fraction`` for validation."""
        n_val = max(1, int(round(len(self) * val_fraction)))
        n_train = len(self) - n_val
        if n_train < 1:
            raise ValueError("dataset too small to split")
        return self.subset(range(n_train)), self.subset(range(n_train, len(self)))


def _grid(size: int):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    return y, x


def _sharp_image(rng: np.random.Generator, size: int) -> np.ndarray:
    y, x = _grid(size)
    img = np.full((size, size), rng.uniform(0.3, 0.7))
    for _ in range(rng.integers(3, 6)):
        shape = rng.integers(0, 3)
        if shape == 0:
            cy, cx = rng.uniform(0, size, 2)
            s = rng.uniform(1.5, 5.0)
            img += rng.uniform(-0.45, 0.45) * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))
        elif shape == 1:
            theta = rng.uniform(0, math.pi)
            off = rng.uniform(-size / 3, size / 3)
            d = (x - size / 2) * math.cos(theta) + (y - size / 2) * math.sin(theta) - off
            img += rng.uniform(-0.3, 0.3) * (d > 0)
        else:
            period = int(rng.integers(2, 6))
            y0, x0 = rng.integers(0, size // 2, 2)
            h, w = rng.integers(size // 4, size // 2, 2)
            board = ((y // period + x // period) % 2) * 2.0 - 1.0
            mask = (y >= y0) & (y < y0 + h) & (x >= x0) & (x < x0 + w)
            img += rng.uniform(0.1, 0.3) * board * mask
    return np.clip(img, 0.0, 1.0)


def blur_kernel(kind: str, rng: np.random.Generator) -> np.ndarray:
    """A normalised blur kernel of the given kind."""
    if kind == "identity":
        return np.ones((1, 1))
    if kind == "gaussian":
        s = rng.uniform(0.8, 1.6)
        r = np.arange(-3, 4, dtype=np.float64)
        g = np.exp(-r ** 2 / (2 * s * s))
        k = np.outer(g, g)
    elif kind == "box":
        n = int(rng.choice([3, 5]))
        k = np.ones((n, n))
    elif kind == "linear-motion":
        length = int(rng.choice([5, 7, 9]))
        theta = rng.uniform(0, math.pi)
        k = np.zeros((length, length))
        c = (length - 1) / 2
        for t in np.linspace(-c, c, 4 * length):
            py, px = c + t * math.sin(theta), c + t * math.cos(theta)
            y0, x0 = int(math.floor(py)), int(math.floor(px))
            fy, fx = py - y0, px - x0
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    if 0 <= y0 + dy < length and 0 <= x0 + dx < length:
                        k[y0 + dy, x0 + dx] += wy * wx
    else:
        raise ValueError(f"unknown blur kind {kind!r}")
    return k / k.sum()


def generate_dataset(spec: DatasetSpec) -> PairedDataset:
    """Seeded random sharp images and their blurred, noisy, clamped copies.

    Values are rounded to float32 so a save/load round trip is exact.
    """
    rng = np.random.default_rng(spec.seed)
    n, c, s = spec.count, spec.channels, spec.size
    sharp = np.empty((n, c, s, s))
    blurred = np.empty((n, c, s, s))
    for i in range(n):
        kind = spec.blur_kinds[int(rng.integers(len(spec.blur_kinds)))]
        k = blur_kernel(kind, rng)
        for ch in range(c):
            img = _sharp_image(rng, s)
            b = ndimage.convolve(img, k, mode="reflect")
            if spec.noise_sigma > 0:
                b = b + rng.normal(0.0, spec.noise_sigma, size=b.shape)
            sharp[i, ch] = img
            blurred[i, ch] = np.clip(b, 0.0, 1.0)
    sharp = sharp.astype(np.float32).astype(np.float64)
    blurred = blurred.astype(np.float32).astype(np.float64)
    return PairedDataset(sharp, blurred, spec)


def save_dataset(directory: Path, ds: PairedDataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "shape": list(ds.sharp.shape),
        "dtype": "<f4",
        "spec": ds.spec.to_dict(),
        "sharp": {"file": "sharp.f32", "sha256": write_blob(directory / "sharp.f32", ds.sharp, "<f4")},
        "blurred": {"file": "blurred.f32", "sha256": write_blob(directory / "blurred.f32", ds.blurred, "<f4")},
    }
    dump_json(directory / "manifest.json", manifest)


def load_dataset(directory: Path) -> PairedDataset:
    directory = Path(directory)
    m = load_json(directory / "manifest.json")
    try:
        shape = tuple(m["shape"])
        spec = DatasetSpec(**{**m["spec"], "blur_kinds": tuple(m["spec"]["blur_kinds"])})
        sharp = read_blob(directory / m["sharp"]["file"], "<f4", shape, m["sharp"]["sha256"])
        blurred = read_blob(directory / m["blurred"]["file"], "<f4", shape, m["blurred"]["sha256"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptArtifactError(f"bad dataset manifest in {directory}: {e}") from None
    return PairedDataset(sharp, blurred, spec)
