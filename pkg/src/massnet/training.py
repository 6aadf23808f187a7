"""Optimiser schedule, the dual-loss training loop, and a regressor wrapper."""

from __future__ import annotations

import copy
import dataclasses
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import dataset_max as _dataset_max
from .errors import ConfigError, TrainingDiverged
from .losses import mae_loss, masscon_loss_tensor
from .network import MassNet, ModelConfig, build_model, save_checkpoint
from .preprocess import PreprocessConfig, preprocess_batch, random_augment

log = logging.getLogger(__name__)


class LossVariant(str, enum.Enum):
    MASSCON = "masscon"
    SUPCON = "supcon"
    NONE = "none"


# Learning rates used for the three evaluation protocols.
BASE_LR = {"slp": 3e-4, "loso": 5e-4, "random": 2e-4}


@dataclass
class TrainConfig:
    base_lr: float = 3e-4
    decay_factor: float = 0.25
    decay_every: int = 5
    warmup_epochs: int = 3
    batch_size: int = 16
    max_epochs: int = 60
    early_stop_patience: int = 15
    lam: float = 0.25
    tau: float = 0.1
    seed: int = 0
    loss_variant: LossVariant = LossVariant.MASSCON
    augment: bool = True
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    standardize_targets: bool = True

    def __post_init__(self):
        self.loss_variant = LossVariant(self.loss_variant)
        self.adam_betas = tuple(self.adam_betas)
        if not (self.base_lr > 0 and self.decay_factor > 0 and self.tau > 0):
            raise ConfigError("learning rate, decay factor and temperature must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for the contrastive loss")
        if self.decay_every < 1 or self.warmup_epochs < 0 or self.max_epochs < 1:
            raise ConfigError("invalid epoch schedule")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")

    @classmethod
    def for_protocol(cls, protocol: str, **overrides):
        return cls(**{"base_lr": BASE_LR[protocol], **overrides})

    @property
    def uses_contrastive(self) -> bool:
        return self.loss_variant is not LossVariant.NONE and self.lam > 0

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["loss_variant"] = self.loss_variant.value
        d["adam_betas"] = list(self.adam_betas)
        return d


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Linear warm-up, then step decay counted from the end of warm-up."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs
    e_post = epoch - cfg.warmup_epochs
    return cfg.base_lr * cfg.decay_factor ** (e_post // cfg.decay_every)


@dataclass
class TrainState:
    epoch: int = 0
    best_val_mae: float = math.inf
    best_epoch: int = -1
    history: list = field(default_factory=list)
    stopped_early: bool = False


def _to_tensors(frames, joints, dtype):
    return torch.from_numpy(frames).to(dtype), torch.from_numpy(joints).to(dtype)


def step_losses(model: MassNet, frames, joints, targets, subject_ids, cfg: TrainConfig,
                force_contrastive=False):
    """Forward one batch of views and return ``(l_all, l_mae, l_con)`` tensors.

    The contrastive term is only evaluated when it carries weight (or when
    ``force_contrastive`` asks for it, which tests use to show a zero
    weight leaves gradients untouched).
    """
    contrastive = model.projection is not None and (cfg.uses_contrastive or
                                                     (force_contrastive and cfg.loss_variant is not LossVariant.NONE))
    if contrastive:
        pred, emb = model(frames, joints, with_embedding=True)
    else:
        pred, emb = model(frames, joints), None
    l_mae = mae_loss(pred, targets)
    if emb is None:
        l_con = torch.zeros((), dtype=pred.dtype)
        return l_mae, l_mae, l_con
    penalty = cfg.loss_variant is LossVariant.MASSCON
    l_con = masscon_loss_tensor(emb, subject_ids, targets.detach().double().tolist(), cfg.tau, penalty)
    return l_mae + cfg.lam * l_con, l_mae, l_con


def evaluate_mae(model: MassNet, samples, pcfg: PreprocessConfig, dmax, batch_size=64):
    """Return (MAE, MAPE) in inference mode."""
    preds = predict_samples(model, samples, pcfg, dmax, batch_size)
    t = np.array([s.weight_kg for s in samples])
    return float(np.mean(np.abs(preds - t))), float(np.mean(np.abs(preds - t) / t) * 100.0)


def predict_samples(model: MassNet, samples, pcfg: PreprocessConfig, dmax, batch_size=64) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    out = []
    try:
        with torch.no_grad():
            for k in range(0, len(samples), batch_size):
                frames, joints = preprocess_batch(samples[k:k + batch_size], pcfg, dmax)
                f, j = _to_tensors(frames, joints, dtype)
                out.append(model(f, j).double().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def train_model(model: MassNet, train_samples, val_samples, cfg: TrainConfig,
                pcfg: PreprocessConfig | None = None, dmax: float | None = None,
                out_dir=None):
    """Train ``model`` in place; returns ``(model, TrainState)``.

    Each step draws a batch, builds two independently augmented views per
    sample (same subject and weight), and minimises
    ``MAE + lam * contrastive`` with Adam at :func:`lr_at_epoch`. After
    every epoch validation MAE decides the best checkpoint and early
    stopping. The model returned holds the best-validation parameters (the
    last ones when there is no validation set).
    """
    pcfg = pcfg or PreprocessConfig()
    train_samples = list(train_samples)
    val_samples = list(val_samples or [])
    if not train_samples:
        raise ValueError("training set is empty")
    if cfg.batch_size > len(train_samples):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training set size {len(train_samples)}")
    if dmax is None:
        dmax = _dataset_max(train_samples)
    dtype = next(model.parameters()).dtype
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    if cfg.standardize_targets:
        w = np.array([s.weight_kg for s in train_samples])
        model.set_target_scaling(w.mean(), w.std() if w.std() > 0 else 1.0)

    opt = torch.optim.Adam(model.parameters(), lr=lr_at_epoch(cfg, 0), betas=cfg.adam_betas, eps=cfg.adam_eps)
    state = TrainState()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "history.jsonl").write_text("")
    extra = {"preprocess": _pcfg_dict(pcfg), "dataset_max": dmax}

    cache = None
    if not cfg.augment:
        cache = preprocess_batch(train_samples, pcfg, dmax)

    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    n = len(train_samples)
    for epoch in range(cfg.max_epochs):
        lr = lr_at_epoch(cfg, epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        good_state = copy.deepcopy(model.state_dict())
        perm = rng.permutation(n)
        sums = np.zeros(2)
        steps = 0
        for k in range(0, n, cfg.batch_size):
            idx = perm[k:k + cfg.batch_size]
            batch = [train_samples[i] for i in idx]
            if cache is None:
                views = [random_augment(s, rng, pcfg) for s in batch] + [random_augment(s, rng, pcfg) for s in batch]
                frames, joints = preprocess_batch(views, pcfg, dmax)
            else:
                both = np.concatenate([idx, idx])
                frames, joints = cache[0][both], cache[1][both]
            f, j = _to_tensors(frames, joints, dtype)
            targets = torch.tensor([s.weight_kg for s in batch] * 2, dtype=dtype)
            subjects = [s.subject_id for s in batch] * 2
            opt.zero_grad()
            loss, l_mae, l_con = step_losses(model, f, j, targets, subjects, cfg)
            if not torch.isfinite(loss):
                model.load_state_dict(good_state)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {steps}; "
                                       "parameters restored to the last good epoch", state)
            loss.backward()
            opt.step()
            sums += (l_mae.item(), l_con.item())
            steps += 1

        l_mae_mean, l_con_mean = (float(x) for x in sums / steps)
        record = {"epoch": epoch, "lr": lr, "l_mae": l_mae_mean, "l_con": l_con_mean,
                  "l_all": l_mae_mean + cfg.lam * l_con_mean}
        if val_samples:
            record["val_mae"], record["val_mape"] = evaluate_mae(model, val_samples, pcfg, dmax)
        else:
            record["val_mae"], record["val_mape"] = None, None
        state.history.append(record)
        state.epoch = epoch + 1
        log.info("epoch %d lr %.2e l_mae %.3f l_con %.3f val_mae %s", epoch, lr, l_mae_mean, l_con_mean,
                 record["val_mae"])

        monitor = record["val_mae"] if val_samples else None
        improved = monitor is not None and monitor < state.best_val_mae
        if improved:
            state.best_val_mae = monitor
            state.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        elif monitor is not None:
            stale += 1
        if out_dir is not None:
            with open(out_dir / "history.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            save_checkpoint(model, out_dir / "ckpt_last.npz", extra)
            if improved:
                save_checkpoint(model, out_dir / "ckpt_best.npz", extra)
        if monitor is not None and stale >= cfg.early_stop_patience:
            state.stopped_early = True
            break

    if val_samples:
        model.load_state_dict(best_state)
    model.eval()
    return model, state


def _pcfg_dict(pcfg: PreprocessConfig):
    d = dataclasses.asdict(pcfg)
    d["normalization"] = pcfg.normalization.value
    return d


class MassNetRegressor:
    """Adapter exposing MassNet through the generic ``fit``/``predict`` interface."""

    name = "MassNet"

    def __init__(self, model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None,
                 pcfg: PreprocessConfig | None = None, dtype=torch.float32, out_dir=None):
        self.model_cfg = model_cfg or ModelConfig()
        self.train_cfg = train_cfg or TrainConfig()
        self.pcfg = pcfg or PreprocessConfig()
        self.dtype = dtype
        self.out_dir = out_dir
        self.model = None
        self.dmax = None
        self.state = None

    def fit(self, train_samples, val_samples=None):
        self.dmax = _dataset_max(train_samples)
        self.model = build_model(self.model_cfg, seed=self.train_cfg.seed, dtype=self.dtype)
        self.model, self.state = train_model(self.model, train_samples, val_samples, self.train_cfg,
                                             self.pcfg, self.dmax, self.out_dir)
        return self

    def predict(self, samples) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("fit() must be called before predict()")
        return predict_samples(self.model, list(samples), self.pcfg, self.dmax)

    @classmethod
    def from_checkpoint(cls, model, extra):
        pdict = extra.get("preprocess", {})
        obj = cls(model.cfg, pcfg=PreprocessConfig(**pdict) if pdict else None,
                  dtype=next(model.parameters()).dtype)
        obj.model = model
        obj.dmax = extra.get("dataset_max")
        return obj
