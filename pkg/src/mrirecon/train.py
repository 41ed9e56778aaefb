"""Adversarial training loop, Adam updates and checkpointing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as E
from .blocks import (DiscriminatorSpec, GeneratorSpec, LCFIppSpec, ParamStore, UNetSpec,
                     discriminator_forward, generator_forward, init_discriminator, init_generator)
from .data import Dataset, load_dataset, split_indices
from .engine import Tensor
from .io import load_params, save_params
from .kspace import dc_residual
from .losses import FeatureExtractor, LossWeights, total_d_loss, total_g_loss

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, component: str, step: int, value: float):
        super().__init__(f"non-finite loss component {component!r} = {value} at step {step}")
        self.component = component
        self.step = step


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    data: str = ""
    # generator
    unet_depth: int = 3
    unet_base_channels: int = 16
    unet_multiplier: int = 2
    unet_convs_per_level: int = 2
    unet_norm: bool = False
    tap_levels: tuple = (1, 2)
    n_pairs: int = 4
    rrdb_count: int = 1
    lcfi_dilations: tuple = (1, 2, 4, 8)
    lcfi_channels: int = 4
    lcfi_unet_depth: int = 1
    feature_channels: int = 8
    head_channels: int = 8
    growth: int = 4
    # discriminator
    disc_base_channels: int = 16
    disc_layers: int = 2
    disc_share_weights: bool = False
    # loss weights
    lambda_rec: float = 10.0
    alpha: float = 0.84
    omega: float = 0.5
    beta: float = 1.0
    lambda_cyc: float = 5.0
    lambda_vgg: float = 0.1
    gamma: float = 1.0
    # optimisation
    optimizer: str = "adam"
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    total_steps: int = 800
    d_steps_per_g: int = 1
    checkpoint_interval: int = 200
    log_interval: int = 25
    seed: int = 0
    train_fraction: float = 0.9
    split_seed: int = 0
    feature_seed: int = 1234

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.batch_size < 1 or self.d_steps_per_g < 0 or self.checkpoint_interval < 1:
            raise ConfigError("batch_size, checkpoint_interval must be >= 1 and d_steps_per_g >= 0")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must be in (0, 1]")
        try:
            self.generator_spec()
            self.discriminator_spec()
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            backbone=UNetSpec(depth=self.unet_depth, base_channels=self.unet_base_channels,
                              multiplier=self.unet_multiplier,
                              convs_per_level=self.unet_convs_per_level, norm=self.unet_norm),
            tap_levels=tuple(self.tap_levels), n_pairs=self.n_pairs, rrdb_count=self.rrdb_count,
            lcfi=LCFIppSpec(dilations=tuple(self.lcfi_dilations), channels=self.lcfi_channels,
                            unet_depth=self.lcfi_unet_depth),
            feature_channels=self.feature_channels, head_channels=self.head_channels,
            growth=self.growth)

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(base_channels=self.disc_base_channels, layers=self.disc_layers,
                                 share_weights=self.disc_share_weights)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_rec, self.alpha, self.omega, self.beta, self.lambda_cyc,
                           self.lambda_vgg, self.gamma)

    # -- text form -----------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        """Hash of every setting except the dataset path."""
        text = "\n".join(l for l in self.to_text().splitlines() if not l.startswith("data ="))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        types = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {n}: expected 'key = value', got {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in types:
                raise ConfigError(f"config line {n}: unknown key {k!r}")
            values[k] = _parse_value(types[k], v, n)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _parse_value(f: dataclasses.Field, v: str, line: int):
    default = f.default if f.default is not dataclasses.MISSING else None
    try:
        if isinstance(default, bool):
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(v)
            return v.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(v)
        if isinstance(default, float):
            return float(v)
        if isinstance(default, tuple):
            return tuple(int(x) for x in v.split(",") if x.strip())
        return v
    except ValueError:
        raise ConfigError(f"config line {line}: bad value {v!r} for {f.name}") from None


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; moments are float32 arrays keyed by parameter name."""

    def __init__(self, store: ParamStore, lr: float, beta1: float, beta2: float, eps: float):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in store.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.store.params.items():
            g = p.grad
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float32)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            step = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - step).astype(np.float32)
            p.grad = None

    def state(self, prefix: str) -> dict:
        out = {f"{prefix}.m.{k}": v for k, v in self.m.items()}
        out.update({f"{prefix}.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, named: dict, prefix: str, t: int) -> None:
        for k in self.m:
            self.m[k] = np.array(named[f"{prefix}.m.{k}"], dtype=np.float32)
            self.v[k] = np.array(named[f"{prefix}.v.{k}"], dtype=np.float32)
        self.t = t


# ---------------------------------------------------------------------------
# state and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainConfig
    step: int
    gen: ParamStore
    disc: ParamStore
    opt_g: Adam
    opt_d: Adam
    rng: np.random.Generator
    running: dict = field(default_factory=dict)


def new_state(config: TrainConfig) -> TrainState:
    gen = init_generator(config.generator_spec(), seed=config.seed)
    disc = init_discriminator(config.discriminator_spec(), seed=config.seed + 1)
    return TrainState(
        config=config, step=0, gen=gen, disc=disc,
        opt_g=Adam(gen, config.lr_g, config.beta1, config.beta2, config.adam_eps),
        opt_d=Adam(disc, config.lr_d, config.beta1, config.beta2, config.adam_eps),
        rng=np.random.default_rng([config.seed, 7]))


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_params(path / "generator.kprm", state.gen.state())
    save_params(path / "discriminator.kprm", state.disc.state())
    opt = state.opt_g.state("g")
    opt.update(state.opt_d.state("d"))
    save_params(path / "optimizer.kprm", opt)
    meta = {
        "step": state.step,
        "adam_t": [state.opt_g.t, state.opt_d.t],
        "rng": state.rng.bit_generator.state,
        "running": state.running,
        "fingerprint": state.config.fingerprint(),
    }
    (path / "state.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    (path / "config.txt").write_text(state.config.to_text())
    return path


def load_checkpoint(path, config: TrainConfig | None = None) -> TrainState:
    path = Path(path)
    if not (path / "state.json").is_file():
        raise FileNotFoundError(f"{path}: not a checkpoint directory")
    saved = TrainConfig.from_file(path / "config.txt")
    config = config or saved
    if config.fingerprint() != saved.fingerprint():
        raise ConfigError("checkpoint was written with a different configuration")
    meta = json.loads((path / "state.json").read_text())
    state = new_state(config)
    state.gen.load_state(load_params(path / "generator.kprm"))
    state.disc.load_state(load_params(path / "discriminator.kprm"))
    opt = load_params(path / "optimizer.kprm")
    state.opt_g.load_state(opt, "g", meta["adam_t"][0])
    state.opt_d.load_state(opt, "d", meta["adam_t"][1])
    state.rng.bit_generator.state = meta["rng"]
    state.step = meta["step"]
    state.running = meta["running"]
    return state


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class _Batches:
    """Precomputed (s, y, z) arrays for the training split."""

    def __init__(self, ds: Dataset, indices):
        sample = ds.sample(indices)
        self.s, self.y, self.z = sample.s.data, sample.y.data, sample.z.data
        self.mask = ds.mask

    def __len__(self):
        return len(self.s)

    def draw(self, rng: np.random.Generator, batch: int):
        idx = rng.choice(len(self), size=min(batch, len(self)), replace=False)
        return Tensor(self.s[idx]), Tensor(self.y[idx]), Tensor(self.z[idx])


def _format_log(step: int, parts: dict) -> str:
    return "\t".join([f"step={step}"] + [f"{k}={v!r}" for k, v in parts.items()])


def train_step(state: TrainState, batches: _Batches, fx: FeatureExtractor) -> dict:
    cfg = state.config
    gspec, dspec, w = cfg.generator_spec(), cfg.discriminator_spec(), cfg.loss_weights()
    s, y, z = batches.draw(state.rng, cfg.batch_size)
    step = state.step + 1

    coarse, fused, images, maps = generator_forward(z, state.gen, gspec)

    d_val = 0.0
    fake = fused.detach()
    for _ in range(cfg.d_steps_per_g):
        d_loss = total_d_loss(discriminator_forward(s, state.disc, dspec),
                              discriminator_forward(fake, state.disc, dspec))
        d_val = float(d_loss.data)
        _check_finite("d_loss", d_val, step)
        E.backward(d_loss, retain=True)
        state.opt_d.step()

    state.disc.set_requires_grad(False)
    try:
        fake_scores = discriminator_forward(fused, state.disc, dspec)
        g_total, parts = total_g_loss(coarse, fused, images, maps, s, y, batches.mask,
                                      fake_scores, fx, w)
    finally:
        state.disc.set_requires_grad(True)
    values = {"d_loss": d_val, "g_total": float(g_total.data)}
    values.update({k: float(v.data) for k, v in parts.items()})
    values["dc"] = float(dc_residual(fused.detach(), y, batches.mask).data)
    for k, v in values.items():
        _check_finite(k, v, step)
    E.backward(g_total)
    state.opt_g.step()
    E.current_tape().reset()

    state.step = step
    for k, v in values.items():
        state.running[k] = 0.98 * state.running.get(k, v) + 0.02 * v
    return values


def _check_finite(name: str, value: float, step: int) -> None:
    if not math.isfinite(value):
        raise NumericalError(name, step, value)


def train(config: TrainConfig, out, resume=None, dataset: Dataset | None = None,
          stop_at: int | None = None) -> TrainState:
    """Run (or resume) training; writes checkpoints and ``loss_log.tsv`` under ``out``.

    ``stop_at`` ends the run early at that step (used to produce resumable
    partial runs); the configured ``total_steps`` still governs the schedule.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset if dataset is not None else _load_training_data(config)
    train_idx = _train_indices(config, len(ds))
    if len(train_idx) < 1:
        raise ConfigError("training split is empty")
    if min(ds.images.shape[2:]) < config.discriminator_spec().min_size():
        raise ConfigError("images too small for the discriminator")
    if ds.size % 2 ** config.unet_depth:
        raise ConfigError(f"image size {ds.size} not divisible by 2^{config.unet_depth}")
    batches = _Batches(ds, train_idx)
    fx = FeatureExtractor(config.feature_seed)

    state = load_checkpoint(resume, config) if resume else new_state(config)
    (out / "config.txt").write_text(config.to_text())
    log_path = out / "loss_log.tsv"
    if state.step == 0:
        log_path.write_text("")
    else:
        _truncate_log(log_path, state.step)
    last = config.total_steps if stop_at is None else min(stop_at, config.total_steps)
    t0 = time.time()
    with open(log_path, "a") as fh:
        while state.step < last:
            values = train_step(state, batches, fx)
            fh.write(_format_log(state.step, values) + "\n")
            fh.flush()
            if state.step % config.log_interval == 0 or state.step == 1:
                log.info("step %d/%d d=%.4f g=%.4f dc=%.4f (%.1fs)", state.step, last,
                         values["d_loss"], values["g_total"], values["dc"], time.time() - t0)
            if state.step % config.checkpoint_interval == 0:
                save_checkpoint(state, out / f"ckpt_{state.step:06d}")
    save_checkpoint(state, out / "final")
    return state


def _truncate_log(path: Path, step: int) -> None:
    if not path.exists():
        path.write_text("")
        return
    keep = [l for l in path.read_text().splitlines()
            if l.startswith("step=") and int(l.split("\t", 1)[0][5:]) <= step]
    path.write_text("".join(l + "\n" for l in keep))


def _load_training_data(config: TrainConfig) -> Dataset:
    if not config.data:
        raise ConfigError("config has no 'data' path")
    return load_dataset(config.data)


def _train_indices(config: TrainConfig, n: int) -> list:
    if config.train_fraction >= 1:
        return list(range(n))
    return split_indices(n, config.train_fraction, config.split_seed)[0]


def test_indices(config: TrainConfig, n: int) -> list:
    if config.train_fraction >= 1:
        return list(range(n))
    return split_indices(n, config.train_fraction, config.split_seed)[1]


def read_loss_log(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        row = {}
        for tok in line.split("\t"):
            k, v = tok.split("=", 1)
            row[k] = int(v) if k == "step" else float(v)
        rows.append(row)
    return rows
