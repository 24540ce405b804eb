"""Negative-SNR PIT loss, (N, M)-homogeneous batching, LR schedule and the training loop."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import ComplexityError, ConfigError, DataError, InvalidInput, InvalidTarget, TrainingDiverged
from .model import FlexIO
from .stft import SAMPLE_RATE

log = logging.getLogger(__name__)

LOSS_EPS = 1e-8
MAX_PIT_SPEAKERS = 6


@dataclass
class TrainConfig:
    batch_size: int = 4
    crop_seconds: float = 4.0
    warmup_steps: int = 500
    peak_lr: float = 1e-3
    plateau_patience: int = 5
    halt_patience: int = 10
    weight_decay: float = 0.01
    steps_per_epoch: int = 100
    max_epochs: int = 100
    nm_distribution: list | None = None  # [[N, M, weight], ...]; None = uniform over groups
    seed: int = 0
    log_interval: int = 10
    keep_epoch_checkpoints: bool = True

    def __post_init__(self):
        positive = ("batch_size", "crop_seconds", "peak_lr", "plateau_patience", "halt_patience",
                    "steps_per_epoch", "max_epochs", "log_interval")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.warmup_steps < 0 or self.weight_decay < 0:
            raise ConfigError("warmup_steps and weight_decay must be non-negative")
        if self.nm_distribution is not None:
            weights = [float(w) for _, _, w in self.nm_distribution]
            if any(w <= 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-6:
                raise ConfigError("nm_distribution weights must be positive and sum to 1")

    @property
    def crop_samples(self) -> int:
        return int(round(self.crop_seconds * SAMPLE_RATE))

    def to_dict(self) -> dict:
        return asdict(self)


def neg_snr_loss(est: torch.Tensor, ref: torch.Tensor, eps: float = LOSS_EPS) -> torch.Tensor:
    """``-10 log10(|ref|^2 / (|ref - est|^2 + eps |ref|^2))`` over the last axis."""
    if est.shape != ref.shape:
        raise InvalidInput(f"shape mismatch: {tuple(est.shape)} vs {tuple(ref.shape)}")
    ref_energy = ref.pow(2).sum(-1)
    if (ref_energy == 0).any():
        raise InvalidTarget("reference signal is identically zero")
    err = (ref - est).pow(2).sum(-1)
    return -10 * torch.log10(ref_energy / (err + eps * ref_energy))


def pit_loss(ests: torch.Tensor, refs: torch.Tensor):
    """Permutation-invariant mean negative SNR.

    ``ests`` and ``refs`` are ``[N, L]`` or ``[B, N, L]``. Estimate ``i`` is
    paired with reference ``perm[i]``. For a single example returns
    ``(loss, perm)``; for a batch, the batch-mean loss and a list of perms.
    """
    if ests.shape != refs.shape:
        raise InvalidInput(f"shape mismatch: {tuple(ests.shape)} vs {tuple(refs.shape)}")
    single = ests.ndim == 2
    if single:
        ests, refs = ests[None], refs[None]
    n = ests.shape[1]
    if n > MAX_PIT_SPEAKERS:
        raise ComplexityError(f"PIT over {n}! permutations is not supported (max N={MAX_PIT_SPEAKERS})")
    # pair[b, i, j] = loss(est_i, ref_j)
    pair = neg_snr_loss(ests[:, :, None, :].expand(-1, -1, n, -1), refs[:, None, :, :].expand(-1, n, -1, -1))
    perms = list(itertools.permutations(range(n)))
    index = torch.tensor(perms, device=ests.device)
    rows = torch.arange(n, device=ests.device)
    per_perm = pair[:, rows, index].mean(-1)  # [B, P]
    best, arg = per_perm.min(dim=-1)
    chosen = [perms[i] for i in arg.tolist()]
    if single:
        return best[0], chosen[0]
    return best.mean(), chosen


@dataclass
class Batch:
    mixture: np.ndarray  # [B, M, L]
    targets: np.ndarray  # [B, N, L]
    N: int
    M: int
    seeds: list = field(default_factory=list)


def group_scenes(scenes) -> dict[tuple[int, int], list]:
    groups = defaultdict(list)
    for s in scenes:
        groups[(s.N, s.M)].append(s)
    return dict(groups)


def nm_weights(groups, cfg: TrainConfig) -> tuple[list[tuple[int, int]], np.ndarray]:
    if cfg.nm_distribution is None:
        keys = sorted(groups)
        return keys, np.full(len(keys), 1.0 / len(keys))
    keys = [(int(n), int(m)) for n, m, _ in cfg.nm_distribution]
    return keys, np.array([float(w) for _, _, w in cfg.nm_distribution])


def sample_batch(groups, cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Draw ``(N, M)`` from the distribution, then a batch of scenes from that group."""
    keys, weights = nm_weights(groups, cfg)
    for key in keys:
        if not groups.get(key):
            raise DataError(f"no scenes with (N, M) = {key}")
    key = keys[rng.choice(len(keys), p=weights / weights.sum())]
    pool = groups[key]
    picks = rng.choice(len(pool), size=cfg.batch_size, replace=len(pool) < cfg.batch_size)
    chosen = [pool[i] for i in picks]
    crop = min([cfg.crop_samples] + [s.mixture.shape[-1] for s in chosen])
    mixes, tgts = [], []
    for s in chosen:
        start = int(rng.integers(0, s.mixture.shape[-1] - crop + 1))
        mixes.append(s.mixture[:, start:start + crop])
        tgts.append(s.targets[:, start:start + crop])
    return Batch(np.stack(mixes), np.stack(tgts), key[0], key[1], [s.seed for s in chosen])


def plateau_halvings(val_history, patience: int) -> int:
    """How many times the LR has been halved for ``patience`` stale epochs."""
    best, stale, halvings = math.inf, 0, 0
    for v in val_history:
        if v < best:
            best, stale = v, 0
        else:
            stale += 1
            if stale >= patience:
                halvings += 1
                stale = 0
    return halvings


def epochs_since_best(val_history) -> int:
    if not val_history:
        return 0
    return len(val_history) - 1 - int(np.argmin(val_history))


def should_stop(val_history, cfg: TrainConfig) -> bool:
    return epochs_since_best(val_history) >= cfg.halt_patience


def lr_schedule(step: int, epoch: int, val_history, cfg: TrainConfig) -> float:
    """Linear warm-up to ``peak_lr``, halved for every validation plateau.

    ``epoch`` is accepted for symmetry with the training loop; the plateau
    count is derived from ``val_history`` (one entry per finished epoch).
    """
    warm = 1.0 if cfg.warmup_steps == 0 else min(1.0, step / cfg.warmup_steps)
    return cfg.peak_lr * warm * 0.5 ** plateau_halvings(val_history, cfg.plateau_patience)


def make_optimizer(model: FlexIO, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.peak_lr, weight_decay=cfg.weight_decay)


def batch_loss(model: FlexIO, batch: Batch) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    mix = torch.as_tensor(batch.mixture, dtype=dtype)
    tgt = torch.as_tensor(batch.targets, dtype=dtype)
    est, _ = model(mix, batch.N)
    loss, _ = pit_loss(est, tgt)
    return loss


def validation_loss(model: FlexIO, scenes) -> float:
    model.eval()
    with torch.no_grad():
        losses = [
            batch_loss(model, Batch(s.mixture[None], s.targets[None], s.N, s.M)).item() for s in scenes
        ]
    model.train()
    return float(np.mean(losses))


@dataclass
class TrainResult:
    steps: int
    val_history: list
    best_val: float
    best_dir: Path | None
    log_path: Path | None
    stopped_by: str


def train(model: FlexIO, train_scenes, val_scenes, cfg: TrainConfig, out_dir=None,
          callback: Callable[[int, int, FlexIO], bool] | None = None) -> TrainResult:
    """Train ``model`` in place.

    Writes ``metrics.csv`` (step, epoch, lr, train_loss, val_loss), one
    checkpoint per epoch and ``best/`` under ``out_dir`` when it is given.
    ``callback(step, epoch, model)`` runs after each epoch; returning True
    ends training.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    groups = group_scenes(train_scenes)
    out = Path(out_dir) if out_dir is not None else None
    writer = log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["step", "epoch", "lr", "train_loss", "val_loss"])

    opt = make_optimizer(model, cfg)
    model.train()
    step, val_history, best_val, best_dir = 0, [], math.inf, None
    stopped_by = "max_epochs"
    try:
        for epoch in range(cfg.max_epochs):
            running = []
            for _ in range(cfg.steps_per_epoch):
                step += 1
                lr = lr_schedule(step, epoch, val_history, cfg)
                for g in opt.param_groups:
                    g["lr"] = lr
                batch = sample_batch(groups, cfg, rng)
                loss = batch_loss(model, batch)
                if not torch.isfinite(loss):
                    _dump_divergence(out, step, epoch, batch, loss.item())
                    raise TrainingDiverged(f"non-finite loss at step {step}; batch seeds {batch.seeds}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                running.append(loss.item())
                if writer is not None and step % cfg.log_interval == 0:
                    writer.writerow([step, epoch, f"{lr:.6g}", f"{np.mean(running[-cfg.log_interval:]):.4f}", ""])

            val = validation_loss(model, val_scenes) if val_scenes else float(np.mean(running))
            val_history.append(val)
            log.info("epoch %d step %d train %.3f val %.3f lr %.2e", epoch, step, np.mean(running), val, lr)
            if writer is not None:
                writer.writerow([step, epoch, f"{lr:.6g}", f"{np.mean(running):.4f}", f"{val:.4f}"])
                log_fh.flush()
                if cfg.keep_epoch_checkpoints:
                    save_checkpoint(model, out / f"epoch{epoch:03d}")
                if val < best_val:
                    best_dir = save_checkpoint(model, out / "best")
            best_val = min(best_val, val)
            if callback is not None and callback(step, epoch, model):
                stopped_by = "callback"
                break
            if should_stop(val_history, cfg):
                stopped_by = "plateau"
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(step, val_history, best_val, best_dir, out / "metrics.csv" if out else None, stopped_by)


def _dump_divergence(out, step, epoch, batch: Batch, loss: float) -> None:
    info = {"step": step, "epoch": epoch, "loss": loss, "N": batch.N, "M": batch.M, "batch_seeds": batch.seeds}
    log.error("training diverged: %s", info)
    if out is not None:
        (out / "divergence.json").write_text(json.dumps(info, indent=2))
