"""Residual deconvolutional generator: three marginals in, three channel images out.

The 3x721 feature is standardised, linearly projected onto a C x 4 x 4 seed
and passed through six stages.  Each stage opens with a deconvolution block
(three transposed-convolution layers, optional x2 upsampling, projection
shortcut) followed by identity blocks (three convolution layers plus an
identity skip).  The last ``log2(size / 4)`` stages upsample, so the same
layout serves 64, 128 and 256 pixel outputs.  A tanh head bounds the output
to [-1, 1].
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .grids import MARGINAL_POINTS

log = logging.getLogger(__name__)

N_STAGES = 6
SEED_SIZE = 4


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, curve):
        super().__init__(message)
        self.curve = curve


@dataclass(frozen=True)
class ModelConfig:
    output_size: int = 256
    base_channels: int = 16
    blocks_per_stage: tuple = (2, 2, 2, 2, 2, 2)
    input_length: int = MARGINAL_POINTS
    width_multipliers: tuple = (8, 8, 4, 4, 2, 1)

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        object.__setattr__(self, "width_multipliers", tuple(self.width_multipliers))
        if self.output_size not in (64, 128, 256):
            raise ConfigError("output_size must be 64, 128 or 256")
        if len(self.blocks_per_stage) != N_STAGES or min(self.blocks_per_stage) < 1:
            raise ConfigError("need six stages with at least one block each")
        if len(self.width_multipliers) != N_STAGES:
            raise ConfigError("need one width multiplier per stage")

    @property
    def upsampling(self) -> tuple:
        n_up = int(round(math.log2(self.output_size / SEED_SIZE)))
        if SEED_SIZE * 2**n_up != self.output_size or not 0 <= n_up <= N_STAGES:
            raise ConfigError(f"cannot reach {self.output_size} from {SEED_SIZE} in {N_STAGES} stages")
        return (1,) * (N_STAGES - n_up) + (2,) * n_up

    @property
    def widths(self) -> tuple:
        return tuple(self.base_channels * m for m in self.width_multipliers)

    @classmethod
    def desk(cls):
        return cls(output_size=64, base_channels=8)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.05
    patience: int = 10
    loss: str = "mse"
    max_seconds: float | None = None

    def to_dict(self):
        return asdict(self)


def _bn(c):
    return nn.BatchNorm2d(c)


class IdentityBlock(nn.Module):
    """x + F(x) with F = three pre-activated convolutions (1x1, 3x3, 1x1)."""

    def __init__(self, channels):
        super().__init__()
        mid = max(channels // 2, 4)
        self.main = nn.Sequential(
            _bn(channels), nn.ReLU(), nn.Conv2d(channels, mid, 1),
            _bn(mid), nn.ReLU(), nn.Conv2d(mid, mid, 3, padding=1),
            _bn(mid), nn.ReLU(), nn.Conv2d(mid, channels, 1),
        )

    def forward(self, x):
        return x + self.main(x)


class DeconvBlock(nn.Module):
    """Three transposed convolutions (the middle one upsamples) plus a projection shortcut."""

    def __init__(self, cin, cout, stride):
        super().__init__()
        mid = max(cout // 2, 4)
        if stride == 2:
            up = nn.ConvTranspose2d(mid, mid, 4, stride=2, padding=1)
            short = nn.ConvTranspose2d(cin, cout, 2, stride=2)
        else:
            up = nn.ConvTranspose2d(mid, mid, 3, stride=1, padding=1)
            short = nn.ConvTranspose2d(cin, cout, 1)
        self.main = nn.Sequential(
            _bn(cin), nn.ReLU(), nn.ConvTranspose2d(cin, mid, 1),
            _bn(mid), nn.ReLU(), up,
            _bn(mid), nn.ReLU(), nn.ConvTranspose2d(mid, cout, 1),
        )
        self.shortcut = short

    def forward(self, x):
        return self.shortcut(x) + self.main(x)


class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        self.register_buffer("feature_mean", torch.zeros(3, 1))
        self.register_buffer("feature_std", torch.ones(3, 1))
        self.project = nn.Linear(3 * cfg.input_length, widths[0] * SEED_SIZE * SEED_SIZE)
        stages = []
        cin = widths[0]
        for n_blocks, cout, stride in zip(cfg.blocks_per_stage, widths, cfg.upsampling):
            blocks = [DeconvBlock(cin, cout, stride)] + [IdentityBlock(cout) for _ in range(n_blocks - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = cout
        self.stages = nn.Sequential(*stages)
        self.head = nn.Sequential(_bn(cin), nn.ReLU(), nn.Conv2d(cin, 3, 3, padding=1), nn.Tanh())

    def set_feature_stats(self, mean, std):
        self.feature_mean.copy_(torch.as_tensor(np.asarray(mean), dtype=self.feature_mean.dtype).reshape(3, 1))
        self.feature_std.copy_(torch.as_tensor(np.asarray(std), dtype=self.feature_std.dtype).reshape(3, 1))

    def forward(self, features):
        if features.dim() == 2:
            features = features.unsqueeze(0)
        if features.shape[1:] != (3, self.cfg.input_length):
            raise ConfigError(f"expected features of shape (N, 3, {self.cfg.input_length}), got {tuple(features.shape)}")
        if not torch.isfinite(features).all():
            raise ValueError("non-finite feature values")
        z = (features - self.feature_mean) / self.feature_std
        z = self.project(z.flatten(1)).view(-1, self.cfg.widths[0], SEED_SIZE, SEED_SIZE)
        return self.head(self.stages(z))


def build_model(cfg: ModelConfig, seed: int = 0) -> Generator:
    torch.manual_seed(seed)
    return Generator(cfg)


# --- training ----------------------------------------------------------------


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    state_dict: dict
    manifest_digest: str | None = None
    curve: list = field(default_factory=list)
    dataset: dict = field(default_factory=dict)
    optimizer_state: dict | None = None
    epoch: int = 0

    def model(self) -> Generator:
        m = Generator(self.model_config)
        m.load_state_dict(self.state_dict)
        m.eval()
        return m

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "state_dict": self.state_dict,
            "manifest_digest": self.manifest_digest,
            "curve": self.curve,
            "dataset": self.dataset,
            "optimizer_state": self.optimizer_state,
            "epoch": self.epoch,
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)
        path.with_suffix(".curve.json").write_text(json.dumps(self.curve, indent=1))

    @classmethod
    def load(cls, path):
        d = torch.load(path, map_location="cpu", weights_only=False)
        return cls(
            ModelConfig(**d["model_config"]),
            TrainConfig(**d["train_config"]),
            d["state_dict"],
            d.get("manifest_digest"),
            d.get("curve", []),
            d.get("dataset", {}),
            d.get("optimizer_state"),
            d.get("epoch", 0),
        )


def _split_indices(n, val_fraction, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    order = rng.permutation(n)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _evaluate(model, feats, labels, batch):
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(feats), batch):
            x = torch.as_tensor(np.array(feats[i : i + batch], dtype=np.float32))
            y = torch.as_tensor(np.array(labels[i : i + batch], dtype=np.float32))
            total += float(nn.functional.mse_loss(model(x), y, reduction="sum"))
            count += y.numel()
    return total / max(count, 1)


def train(model: Generator, features, labels, tcfg: TrainConfig, feature_stats=None, manifest_digest=None,
          dataset_meta=None, resume: Checkpoint | None = None, on_epoch=None) -> Checkpoint:
    """Minimise the pixel-wise MSE with Adam; returns the best-validation checkpoint."""
    if tcfg.loss != "mse":
        raise ConfigError("only the mse loss is implemented")
    n = len(features)
    size = model.cfg.output_size
    if labels.shape[1:] != (3, size, size):
        raise ConfigError(f"labels of shape {labels.shape[1:]} do not match the {size}px model")
    torch.manual_seed(tcfg.seed)
    if feature_stats is not None:
        model.set_feature_stats(feature_stats["mean"], feature_stats["std"])
    train_idx, val_idx = _split_indices(n, tcfg.val_fraction, tcfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate)
    curve, start_epoch = [], 0
    if resume is not None:
        model.load_state_dict(resume.state_dict)
        if resume.optimizer_state:
            opt.load_state_dict(resume.optimizer_state)
        curve, start_epoch = list(resume.curve), resume.epoch
    best = (math.inf, None)
    for rec in curve:
        if rec.get("val") is not None and rec["val"] < best[0]:
            best = (rec["val"], None)
    stale = 0
    t0 = time.monotonic()
    val_f = np.asarray(features[val_idx]) if len(val_idx) else None
    val_l = np.asarray(labels[val_idx]) if len(val_idx) else None
    last = start_epoch
    for epoch in range(start_epoch, tcfg.epochs):
        last = epoch + 1
        model.train()
        order = np.random.default_rng(np.random.SeedSequence(tcfg.seed, spawn_key=(epoch,))).permutation(train_idx)
        total, count = 0.0, 0
        for i in range(0, len(order), tcfg.batch_size):
            idx = np.sort(order[i : i + tcfg.batch_size])
            if len(idx) < 2 and len(order) > 1:
                continue  # batch norm needs two samples
            x = torch.as_tensor(np.array(features[idx], dtype=np.float32))
            y = torch.as_tensor(np.array(labels[idx], dtype=np.float32))
            loss = nn.functional.mse_loss(model(x), y)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", curve)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            count += len(idx)
        rec = {"epoch": epoch + 1, "train": total / max(count, 1), "seconds": time.monotonic() - t0}
        rec["val"] = _evaluate(model, val_f, val_l, 64) if val_f is not None else None
        curve.append(rec)
        log.info("epoch %d train %.3e val %s", epoch + 1, rec["train"], rec["val"])
        if on_epoch:
            on_epoch(rec)
        score = rec["val"] if rec["val"] is not None else rec["train"]
        if score < best[0]:
            best = (score, {k: v.detach().clone() for k, v in model.state_dict().items()})
            stale = 0
        else:
            stale += 1
        if stale >= tcfg.patience:
            log.info("validation plateau; stopping after epoch %d", epoch + 1)
            break
        if tcfg.max_seconds and time.monotonic() - t0 > tcfg.max_seconds:
            log.info("time budget reached after epoch %d", epoch + 1)
            break
    state = best[1] if best[1] is not None else model.state_dict()
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(
        model.cfg, tcfg, {k: v.detach().clone() for k, v in state.items()}, manifest_digest, curve,
        dict(dataset_meta or {}), opt.state_dict(), last,
    )


def predict(checkpoint: Checkpoint | Generator, features) -> np.ndarray:
    """Encoded images (N, 3, S, S) for features (N, 3, 721) or a single (3, 721)."""
    model = checkpoint.model() if isinstance(checkpoint, Checkpoint) else checkpoint
    model.eval()
    x = torch.as_tensor(np.array(features, dtype=np.float32))
    single = x.dim() == 2
    if x.shape[-1] != model.cfg.input_length:
        raise ConfigError(f"feature length {x.shape[-1]} does not match the model ({model.cfg.input_length})")
    with torch.no_grad():
        out = model(x).numpy()
    return out[0] if single else out
