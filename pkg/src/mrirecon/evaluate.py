"""Reconstruction with a trained generator and metric reports against the zero-filled baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as E
from .blocks import ParamStore, generator_forward, init_generator
from .data import Dataset, load_dataset
from .engine import Tensor
from .io import export_image, load_params, load_tensor, save_tensor
from .losses import FeatureExtractor
from .metrics import kid, magnitude01, ms_ssim_per_sample, psnr, ssim_per_sample
from .train import TrainConfig, test_indices

METHODS = ("recon", "zero_filled")


def load_generator(ckpt) -> tuple[TrainConfig, ParamStore]:
    ckpt = Path(ckpt)
    if not (ckpt / "generator.kprm").is_file():
        raise FileNotFoundError(f"{ckpt}: no generator.kprm, not a checkpoint directory")
    config = TrainConfig.from_file(ckpt / "config.txt")
    gen = init_generator(config.generator_spec(), seed=config.seed)
    gen.load_state(load_params(ckpt / "generator.kprm"))
    return config, gen


def reconstruct_array(config: TrainConfig, gen: ParamStore, z: np.ndarray, batch: int = 8) -> np.ndarray:
    """G'' for every row of an N x 2 x H x W zero-filled stack (single forward pass each)."""
    z = np.asarray(z, dtype=np.float32)
    if z.ndim == 3:
        z = z[None]
    spec = config.generator_spec()
    if z.ndim != 4 or z.shape[1] != 2:
        raise ValueError(f"reconstruct: expected N x 2 x H x W input, got {z.shape}")
    h, w = z.shape[2:]
    step = 2 ** spec.backbone.depth
    if h % step or w % step:
        raise ValueError(f"reconstruct: input {h}x{w} not divisible by 2^{spec.backbone.depth}")
    out = []
    with E.no_grad():
        for i in range(0, len(z), batch):
            out.append(generator_forward(Tensor(z[i:i + batch]), gen, spec)[1].data)
    return np.concatenate(out).astype(np.float32)


def reconstruct(ckpt, source, out) -> np.ndarray:
    """Reconstruct a dataset directory (all samples) or a KTSR zero-filled tensor.

    Writes ``recon.ktsr`` (N x 2 x H x W) and one 16-bit PGM per sample.
    """
    config, gen = load_generator(ckpt)
    source = Path(source)
    if source.is_dir():
        ds = load_dataset(source)
        z = ds.sample(range(len(ds))).z.data
    else:
        z = load_tensor(source)
    recon = reconstruct_array(config, gen, z)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "recon.ktsr", recon)
    for i, r in enumerate(recon):
        export_image(r, out / f"recon_{i:04d}.pgm")
    return recon


@dataclass
class EvalReport:
    indices: list
    per_sample: dict                 # method -> metric -> float64 array
    kid: dict                        # method -> float
    fingerprint: str
    means: dict = field(default_factory=dict)

    def __post_init__(self):
        for m, cols in self.per_sample.items():
            self.means[m] = {k: float(np.mean(v)) for k, v in cols.items()}

    @property
    def count(self) -> int:
        return len(self.indices)

    def rows(self):
        for m in self.per_sample:
            cols = self.per_sample[m]
            for j, idx in enumerate(self.indices):
                yield m, idx, cols["psnr"][j], cols["ssim"][j], cols["ms_ssim"][j]

    def write(self, out) -> None:
        out = Path(out)
        with open(out / "metrics.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["method", "index", "psnr", "ssim", "ms_ssim"])
            for m, idx, p, s, ms in self.rows():
                wr.writerow([m, idx, _fmt(p), _fmt(s), _fmt(ms)])
        with open(out / "summary.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["method", "count", "psnr", "ssim", "ms_ssim", "kid"])
            for m in self.per_sample:
                mm = self.means[m]
                wr.writerow([m, self.count, _fmt(mm["psnr"]), _fmt(mm["ssim"]),
                             _fmt(mm["ms_ssim"]), _fmt(self.kid[m])])
        lines = [f"samples: {self.count}", f"config fingerprint: {self.fingerprint}", "",
                 f"{'method':<12} {'PSNR dB':>10} {'SSIM':>8} {'MS-SSIM':>8} {'KID':>10}"]
        for m in self.per_sample:
            mm = self.means[m]
            lines.append(f"{m:<12} {mm['psnr']:>10.3f} {mm['ssim']:>8.4f} {mm['ms_ssim']:>8.4f} "
                         f"{self.kid[m]:>10.6f}")
        (out / "report.txt").write_text("\n".join(lines) + "\n")


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"method": r["method"], "index": int(r["index"]), "psnr": float(r["psnr"]),
                 "ssim": float(r["ssim"]), "ms_ssim": float(r["ms_ssim"])}
                for r in csv.DictReader(fh)]


def score(reference: np.ndarray, candidates: dict, indices, fx: FeatureExtractor,
          fingerprint: str = "", kid_subset_size: int = 50, kid_subsets: int = 100,
          kid_seed: int = 0) -> EvalReport:
    """Metrics of each N x 2 x H x W candidate stack against ``reference`` (same order)."""
    ref = magnitude01(reference)
    real_feats = fx.embed(Tensor(ref.astype(np.float32)))
    per, kids = {}, {}
    for name, arr in candidates.items():
        mag = magnitude01(arr)
        per[name] = {
            "psnr": np.array([psnr(a, b) for a, b in zip(mag, ref)]),
            "ssim": ssim_per_sample(mag, ref),
            "ms_ssim": ms_ssim_per_sample(mag, ref),
        }
        size = min(kid_subset_size, len(mag))
        kids[name] = kid(real_feats, fx.embed(Tensor(mag.astype(np.float32))),
                         subset_size=size, subsets=kid_subsets, seed=kid_seed)
    return EvalReport(list(indices), per, kids, fingerprint)


def evaluate(ckpt, data, out, split: str = "test", dataset: Dataset | None = None,
             figures: bool = True) -> EvalReport:
    """Reconstruct the chosen split, score recon and zero-filled input, write the report.

    ``split="test"`` uses the held-out indices implied by the checkpoint's
    train_fraction and split_seed; ``"all"`` scores every sample.
    """
    config, gen = load_generator(ckpt)
    ds = dataset if dataset is not None else load_dataset(data)
    if split == "test":
        indices = sorted(test_indices(config, len(ds)))
    elif split == "all":
        indices = list(range(len(ds)))
    else:
        raise ValueError(f"unknown split {split!r}")
    if not indices:
        raise ValueError("evaluation split is empty")
    sample = ds.sample(indices)
    z = sample.z.data
    recon = reconstruct_array(config, gen, z)
    report = score(sample.s.data, {"recon": recon, "zero_filled": z}, indices,
                   FeatureExtractor(config.feature_seed), config.fingerprint())

    out = Path(out)
    (out / "recon").mkdir(parents=True, exist_ok=True)
    for idx, r in zip(indices, recon):
        save_tensor(out / "recon" / f"{idx:04d}.ktsr", r)
        export_image(r, out / "recon" / f"{idx:04d}.pgm")
    report.write(out)
    if figures:
        from .plotting import plot_examples, plot_metric_bars
        plot_metric_bars(report, out / "metrics.png")
        plot_examples(sample.s.data, z, recon, indices, out / "examples.png")
    return report

