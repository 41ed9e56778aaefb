"""Synthetic phantoms, user-image ingestion, and the (s, y, mask, z) measurement pipeline.

Dataset directory layout::

    manifest.txt          key = value lines (count, size, seed, mask parameters, ...)
    mask.ktsr             H x W, values exactly 0.0 / 1.0
    samples/{index}/s.ktsr  2 x H x W fully sampled complex image
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as E
from .engine import Tensor
from .io import load_tensor, read_pgm, save_tensor
from .kspace import (SamplingMask, fft2, ifft2, is_power_of_two, make_mask, undersample)

SUPERSAMPLE = 4


@dataclass
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    angle: float
    intensity: float


@dataclass
class Phantom:
    image: np.ndarray
    ellipses: list = field(default_factory=list)


def _coverage(size: int, e: Ellipse) -> np.ndarray:
    """Fraction of each pixel inside the ellipse, by SUPERSAMPLE x SUPERSAMPLE point sampling."""
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    c, s = math.cos(e.angle), math.sin(e.angle)
    dx, dy = xx - e.cx, yy - e.cy
    u = (c * dx + s * dy) / e.a
    v = (-s * dx + c * dy) / e.b
    inside = (u * u + v * v <= 1.0).astype(np.float64)
    return inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def _smooth(img: np.ndarray) -> np.ndarray:
    k = np.array([0.25, 0.5, 0.25])
    p = np.pad(img, 1, mode="reflect")
    rows = k[0] * p[:-2] + k[1] * p[1:-1] + k[2] * p[2:]
    return k[0] * rows[:, :-2] + k[1] * rows[:, 1:-1] + k[2] * rows[:, 2:]


def _random_ellipses(rng: np.random.Generator, count: int) -> list:
    out = [Ellipse(cx=rng.uniform(-0.1, 0.1), cy=rng.uniform(-0.1, 0.1),
                   a=rng.uniform(0.5, 0.8), b=rng.uniform(0.5, 0.8),
                   angle=rng.uniform(0, math.pi), intensity=rng.uniform(0.6, 1.0))]
    for _ in range(count - 1):
        out.append(Ellipse(cx=rng.uniform(-0.5, 0.5), cy=rng.uniform(-0.5, 0.5),
                           a=rng.uniform(0.04, 0.35), b=rng.uniform(0.04, 0.35),
                           angle=rng.uniform(0, math.pi), intensity=rng.uniform(-0.4, 0.5)))
    return out


def render(size: int, ellipses: list, smooth: bool = True) -> np.ndarray:
    img = np.zeros((size, size))
    for e in ellipses:
        img += e.intensity * _coverage(size, e)
    img = np.clip(img, 0.0, 1.0)
    if smooth:
        img = np.clip(_smooth(img), 0.0, 1.0)
    return img


def phantom_generate(count: int, size: int, seed: int, ellipses_range=(5, 12)) -> list:
    """Seeded random ellipse phantoms in [0, 1]; sample ``i`` uses the stream (seed, i)."""
    if count < 1:
        raise ValueError("phantom_generate: count must be >= 1")
    if not is_power_of_two(size):
        raise ValueError(f"phantom_generate: size must be a power of two, got {size}")
    lo, hi = ellipses_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid ellipses_range {ellipses_range}")
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        ells = _random_ellipses(rng, int(rng.integers(lo, hi + 1)))
        out.append(Phantom(render(size, ells), ells))
    return out


def to_complex(img, phase_mode: bool = False, seed=0) -> np.ndarray:
    """H x W magnitude -> 2 x H x W (real, imag); optional smooth synthetic phase."""
    a = np.asarray(img.image if isinstance(img, Phantom) else img, dtype=np.float64)
    if not phase_mode:
        return np.stack([a, np.zeros_like(a)]).astype(np.float32)
    h, w = a.shape
    rng = np.random.default_rng(seed)
    ca, cb, cc = rng.uniform(-1, 1, 3)
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    phi = math.pi * (ca * xx + cb * yy + cc * (xx * xx + yy * yy))
    return np.stack([a * np.cos(phi), a * np.sin(phi)]).astype(np.float32)


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    s: Tensor
    y: Tensor
    mask: SamplingMask
    z: Tensor

    def verify(self, tol: float = 1e-5) -> bool:
        y = undersample(fft2(self.s), self.mask)
        z = ifft2(self.y)
        return (np.max(np.abs(y.data - self.y.data)) <= tol
                and np.max(np.abs(z.data - self.z.data)) <= tol)


def make_sample(s, mask: SamplingMask) -> Sample:
    """Measure ``s`` (2 x H x W or N x 2 x H x W) through the shared mask."""
    st = s if isinstance(s, Tensor) else Tensor(s)
    if st.ndim == 3:
        st = E.reshape(st, (1,) + st.shape)
    if st.shape[2:] != mask.shape:
        raise ValueError(f"make_sample: image {st.shape[2:]} does not match mask {mask.shape}")
    with E.no_grad():
        y = undersample(fft2(st), mask)
        z = ifft2(y)
    return Sample(st, y, mask, z)


def dataset_split(samples, train_fraction: float, seed: int = 0):
    """Seeded shuffle then split into (train, test); ``round(fraction * n)`` go to train."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(train_fraction * n + 0.5))
    return [samples[i] for i in order[:k]], [samples[i] for i in order[k:]]


def split_indices(n: int, train_fraction: float, seed: int = 0):
    return dataset_split(list(range(n)), train_fraction, seed)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    images: np.ndarray           # N x 2 x H x W float32
    mask: SamplingMask
    manifest: dict

    def __len__(self):
        return len(self.images)

    @property
    def size(self) -> int:
        return self.images.shape[-1]

    def sample(self, indices) -> Sample:
        return make_sample(self.images[np.asarray(indices)], self.mask)


def write_manifest(path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"manifest line without '=': {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def save_mask(path, mask: SamplingMask) -> None:
    save_tensor(path, mask.mask)


def load_mask(path, rate=None, seed=-1, center_fraction=0.0, mode="point") -> SamplingMask:
    m = load_tensor(path)
    if m.ndim != 2 or not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError(f"{path}: mask must be a 2-D array of exact 0.0/1.0 values")
    rate = float(m.mean()) if rate is None else rate
    return SamplingMask(m, rate=rate, seed=seed, center_fraction=center_fraction, mode=mode)


def write_dataset(out, images, mask: SamplingMask, manifest: dict) -> Path:
    out = Path(out)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        d = out / "samples" / str(i)
        d.mkdir(exist_ok=True)
        save_tensor(d / "s.ktsr", img)
    save_mask(out / "mask.ktsr", mask)
    entries = {"count": len(images), "size": int(np.shape(images[0])[-1])}
    entries.update(manifest)
    entries.update({"rate": mask.rate, "center_fraction": mask.center_fraction,
                    "mask_seed": mask.seed, "mask_mode": mask.mode})
    write_manifest(out / "manifest.txt", entries)
    return out


def generate_dataset(out, count: int, size: int, seed: int, rate: float = 0.125,
                     center_fraction: float = 0.04, mask_seed: int = 0, mask_mode: str = "point",
                     phase_mode: bool = False, ellipses_range=(5, 12)) -> Path:
    phantoms = phantom_generate(count, size, seed, ellipses_range)
    images = [to_complex(p, phase_mode, seed=[seed, i, 1])
              for i, p in enumerate(phantoms)]
    mask = make_mask(size, size, rate, center_fraction, mask_seed, mask_mode)
    return write_dataset(out, images, mask, {
        "seed": seed, "source": "phantom", "phase_mode": int(phase_mode),
        "ellipses": f"{ellipses_range[0]},{ellipses_range[1]}"})


def normalize_magnitude(img: np.ndarray) -> np.ndarray:
    """Scale a (complex-channel or real) image so its peak magnitude is 1."""
    a = np.asarray(img, dtype=np.float64)
    mag = np.sqrt(a[0] ** 2 + a[1] ** 2) if a.ndim == 3 else np.abs(a)
    peak = mag.max()
    return a / peak if peak > 0 else a


def ingest_images(paths, out, rate: float = 0.125, center_fraction: float = 0.04,
                  mask_seed: int = 0, mask_mode: str = "point") -> Path:
    """Build a dataset directory from user PGM images or KTSR tensors (H x W or 2 x H x W)."""
    images = []
    for p in sorted(Path(x) for x in paths):
        if p.suffix.lower() == ".pgm":
            a = read_pgm(p)
        else:
            a = load_tensor(p).astype(np.float64)
        a = normalize_magnitude(a)
        if a.ndim == 2:
            a = np.stack([a, np.zeros_like(a)])
        if a.ndim != 3 or a.shape[0] != 2 or a.shape[1] != a.shape[2] or not is_power_of_two(a.shape[1]):
            raise ValueError(f"{p}: need a square power-of-two image, got shape {a.shape}")
        images.append(a.astype(np.float32))
    if not images:
        raise ValueError("ingest_images: no input images")
    if len({im.shape for im in images}) != 1:
        raise ValueError("ingest_images: all images must share one size")
    size = images[0].shape[-1]
    mask = make_mask(size, size, rate, center_fraction, mask_seed, mask_mode)
    return write_dataset(out, images, mask, {"seed": -1, "source": "ingested"})


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not (path / "manifest.txt").is_file():
        raise FileNotFoundError(f"{path}: no manifest.txt, not a dataset directory")
    manifest = read_manifest(path / "manifest.txt")
    count = int(manifest["count"])
    images = []
    for i in range(count):
        f = path / "samples" / str(i) / "s.ktsr"
        if not f.is_file():
            raise FileNotFoundError(f"{f} missing (manifest lists {count} samples)")
        images.append(load_tensor(f))
    arr = np.stack(images).astype(np.float32)
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ValueError(f"{path}: samples must be 2 x H x W, got {arr.shape[1:]}")
    mask = load_mask(path / "mask.ktsr", rate=float(manifest.get("rate", "nan")),
                     seed=int(manifest.get("mask_seed", -1)),
                     center_fraction=float(manifest.get("center_fraction", 0.0)),
                     mode=manifest.get("mask_mode", "point"))
    if mask.shape != arr.shape[2:]:
        raise ValueError(f"{path}: mask {mask.shape} does not match images {arr.shape[2:]}")
    return Dataset(arr, mask, manifest)
