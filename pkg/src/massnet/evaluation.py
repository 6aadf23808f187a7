"""Metrics, classical baselines, reports and the ablation harness."""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import torch
from scipy import ndimage

from .data import PressureFrame, Sample
from .network import ModelConfig
from .preprocess import PreprocessConfig, inject_joint_noise, sigma_for_l1
from .training import MassNetRegressor, TrainConfig, LossVariant


class Regressor(Protocol):
    """Anything that can be fitted on samples and predict weights in kg."""

    name: str

    def fit(self, train_samples, val_samples=None): ...

    def predict(self, samples) -> np.ndarray: ...


@dataclass
class MetricsReport:
    mae_mean: float
    mae_std: float
    mape_mean: float
    mape_std: float
    n: int
    per_posture: dict = field(default_factory=dict)
    per_subject: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    def render(self, title="") -> str:
        lines = [title] if title else []
        lines.append(f"MAE  {self.mae_mean:.2f} +- {self.mae_std:.2f} kg")
        lines.append(f"MAPE {self.mape_mean:.2f} +- {self.mape_std:.2f} %   (n={self.n})")
        for posture, g in sorted(self.per_posture.items()):
            lines.append(f"  {posture:<11} MAE {g['mae']:.2f} kg  MAPE {g['mape']:.2f} %  n={g['n']}")
        return "\n".join(lines)


def compute_metrics(preds, targets, postures=None, subjects=None) -> MetricsReport:
    """MAE/MAPE with population standard deviations and grouped breakdowns."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValueError(f"preds and targets must be equal non-empty 1D sequences, got {p.shape}, {t.shape}")
    if np.any(t <= 0):
        raise ValueError("targets must be positive for MAPE")
    err = np.abs(p - t)
    pct = err / t * 100.0

    def grouped(keys, with_mape):
        out = {}
        if keys is None:
            return out
        keys = [k.value if isinstance(k, enum.Enum) else str(k) for k in keys]
        if len(keys) != len(p):
            raise ValueError("group labels must match predictions in length")
        for k in dict.fromkeys(keys):
            m = np.array([kk == k for kk in keys])
            g = {"mae": float(err[m].mean()), "n": int(m.sum())}
            if with_mape:
                g["mape"] = float(pct[m].mean())
            out[k] = g
        return out

    return MetricsReport(float(err.mean()), float(err.std()), float(pct.mean()), float(pct.std()),
                         int(p.size), grouped(postures, True), grouped(subjects, False))


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

class DegenerateFitError(ValueError):
    pass


class LinearFitBaseline:
    """Least-squares affine map from the frame sum to weight."""

    name = "Linear fitting"

    def __init__(self):
        self.a = None
        self.b = None

    def fit(self, train_samples, val_samples=None):
        s = np.array([x.frame.values.sum() for x in train_samples])
        w = np.array([x.weight_kg for x in train_samples])
        self.a, self.b = linear_fit(s, w)
        return self

    def predict(self, samples) -> np.ndarray:
        s = np.array([x.frame.values.sum() for x in samples])
        return self.a * s + self.b


def linear_fit(sums, weights):
    """Return ``(a, b)`` minimising ``sum((a * s + b - w)^2)``."""
    s = np.asarray(sums, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if s.size < 2 or np.ptp(s) == 0:
        raise DegenerateFitError("linear fit needs at least two distinct frame sums")
    A = np.stack([s, np.ones_like(s)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, w, rcond=None)
    return float(a), float(b)


def linear_fit_baseline(train):
    """``train`` is a list of samples or of ``(frame, kg)`` pairs."""
    pairs = [(x.frame, x.weight_kg) if isinstance(x, Sample) else x for x in train]
    sums = [np.asarray(f.values if isinstance(f, PressureFrame) else f).sum() for f, _ in pairs]
    return linear_fit(sums, [w for _, w in pairs])


STATISTICAL_FEATURE_NAMES = (
    "sum", "mean", "std", "max", "contact_area",
    "p25_nonzero", "p50_nonzero", "p75_nonzero", "p90_nonzero",
    "centroid_row", "centroid_col", "row_spread", "col_spread", "peak_count",
)


def statistical_features(frame) -> np.ndarray:
    """Fourteen hand-crafted features in the order of ``STATISTICAL_FEATURE_NAMES``.

    Undefined quantities on an all-zero frame are 0, and the centroid is the
    frame centre. Peaks are 8-connected local maxima above half the frame
    maximum.
    """
    v = frame.values if isinstance(frame, PressureFrame) else np.asarray(frame, dtype=np.float64)
    rows, cols = v.shape
    total = v.sum()
    nz = v[v > 0]
    if nz.size:
        pcts = np.percentile(nz, [25, 50, 75, 90])
    else:
        pcts = np.zeros(4)
    if total > 0:
        r = np.arange(rows)[:, None]
        c = np.arange(cols)[None, :]
        cr = float((v * r).sum() / total)
        cc = float((v * c).sum() / total)
        sr = float(np.sqrt((v * (r - cr) ** 2).sum() / total))
        sc = float(np.sqrt((v * (c - cc) ** 2).sum() / total))
    else:
        cr, cc, sr, sc = (rows - 1) / 2.0, (cols - 1) / 2.0, 0.0, 0.0
    vmax = v.max()
    if vmax > 0:
        local_max = ndimage.maximum_filter(v, size=3, mode="constant", cval=-np.inf)
        plateau = (v == local_max) & (v > 0.5 * vmax)
        _, peaks = ndimage.label(plateau, structure=np.ones((3, 3)))
    else:
        peaks = 0
    return np.array([total, v.mean(), v.std(), vmax, float(nz.size), *pcts, cr, cc, sr, sc, float(peaks)])


class StatisticalFeatureRegressor:
    """Small MLP on the 14 statistical features (a reconstruction, see README)."""

    name = "Statistical features (reconstruction)"

    def __init__(self, hidden=(64, 64), epochs=400, lr=3e-3, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.net = None

    def _features(self, samples):
        return np.stack([statistical_features(s.frame) for s in samples])

    def fit(self, train_samples, val_samples=None):
        x = self._features(train_samples)
        y = np.array([s.weight_kg for s in train_samples])
        self.mu, self.sd = x.mean(0), x.std(0) + 1e-12
        self.y_mu, self.y_sd = y.mean(), y.std() + 1e-12
        torch.manual_seed(self.seed)
        layers, width = [], x.shape[1]
        for h in self.hidden:
            layers += [torch.nn.Linear(width, h), torch.nn.LeakyReLU(0.01)]
            width = h
        layers.append(torch.nn.Linear(width, 1))
        self.net = torch.nn.Sequential(*layers).double()
        xt = torch.from_numpy((x - self.mu) / self.sd)
        yt = torch.from_numpy((y - self.y_mu) / self.y_sd)
        opt = torch.optim.Adam(self.net.parameters(), lr=self.lr)
        for _ in range(self.epochs):
            opt.zero_grad()
            loss = (self.net(xt).squeeze(-1) - yt).abs().mean()
            loss.backward()
            opt.step()
        return self

    def predict(self, samples) -> np.ndarray:
        x = torch.from_numpy((self._features(samples) - self.mu) / self.sd)
        with torch.no_grad():
            return self.net(x).squeeze(-1).numpy() * self.y_sd + self.y_mu


class OracleRegressor:
    """Returns the true label; useful for checking the evaluation plumbing."""

    name = "oracle"

    def fit(self, train_samples, val_samples=None):
        return self

    def predict(self, samples):
        return np.array([s.weight_kg for s in samples])


def evaluate_report(predictor, test_samples, joint_noise_px=0.0, seed=0) -> MetricsReport:
    """Predict over ``test_samples`` and report; optional joint noise emulates estimated poses."""
    test_samples = list(test_samples)
    if not test_samples:
        raise ValueError("test set is empty")
    if joint_noise_px:
        rng = np.random.default_rng(seed)
        test_samples = [dataclasses.replace(s, joints=inject_joint_noise(s.joints, joint_noise_px, rng))
                        if s.joints is not None else s for s in test_samples]
    preds = predictor.predict(test_samples)
    return compute_metrics(preds, [s.weight_kg for s in test_samples],
                           [s.posture for s in test_samples], [s.subject_id for s in test_samples])


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

class AblationAxis(str, enum.Enum):
    BRANCHES = "branches"
    LOSS_VARIANT = "loss_variant"
    DEPTH_SCAN = "depth_scan"
    JOINT_NOISE = "joint_noise"


# Per-joint L1 errors of pressure-based pose estimates, by protocol.
JOINT_L1_ERRORS_PX = {"slp": 7.45, "loso": 7.72, "random": 5.25}


@dataclass
class AblationCell:
    name: str
    overrides: dict
    report: MetricsReport
    history: list = field(default_factory=list)


def ablation_cells(axis, model_cfg: ModelConfig, train_cfg: TrainConfig):
    """Yield ``(name, model_cfg, train_cfg, joint_noise_px)`` for each cell of an axis."""
    axis = AblationAxis(axis)
    rep = dataclasses.replace
    if axis is AblationAxis.BRANCHES:
        yield "joint_only", rep(model_cfg, use_joint_branch=True, use_mass_branch=False), train_cfg, 0.0
        yield "mass_only", rep(model_cfg, use_joint_branch=False, use_mass_branch=True), train_cfg, 0.0
        yield "dual", rep(model_cfg, use_joint_branch=True, use_mass_branch=True), train_cfg, 0.0
    elif axis is AblationAxis.LOSS_VARIANT:
        yield "no_conl", model_cfg, rep(train_cfg, loss_variant=LossVariant.NONE), 0.0
        yield "supcon", model_cfg, rep(train_cfg, loss_variant=LossVariant.SUPCON), 0.0
        yield "masscon", model_cfg, rep(train_cfg, loss_variant=LossVariant.MASSCON), 0.0
    elif axis is AblationAxis.DEPTH_SCAN:
        for depth in range(13):
            yield f"depth_{depth}", rep(model_cfg, n_sensing_layers=depth), train_cfg, 0.0
    else:
        yield "ground_truth_joints", model_cfg, train_cfg, 0.0
        for protocol, l1 in JOINT_L1_ERRORS_PX.items():
            yield f"joint_noise_{protocol}_{l1:.2f}px", model_cfg, train_cfg, sigma_for_l1(l1)


def run_ablation(axis, model_cfg: ModelConfig, train_cfg: TrainConfig, pcfg: PreprocessConfig,
                 train_samples, val_samples, test_samples, dtype=torch.float32) -> list:
    """Train and evaluate every cell of ``axis`` with a shared seed.

    Joint-noise cells share one model configuration, and training is
    deterministic for a given seed, so the model is trained once and
    evaluated under each noise level.
    """
    cells = []
    trained = {}
    for name, mcfg, tcfg, noise in ablation_cells(axis, model_cfg, train_cfg):
        key = (json.dumps(mcfg.to_dict(), sort_keys=True), json.dumps(tcfg.to_dict(), sort_keys=True))
        if key not in trained:
            trained[key] = MassNetRegressor(mcfg, tcfg, pcfg, dtype).fit(train_samples, val_samples)
        reg = trained[key]
        report = evaluate_report(reg, test_samples, joint_noise_px=noise, seed=tcfg.seed)
        overrides = _diff(model_cfg.to_dict(), mcfg.to_dict()) | _diff(train_cfg.to_dict(), tcfg.to_dict())
        if noise:
            overrides["joint_noise_sigma_px"] = noise
        cells.append(AblationCell(name, overrides, report, list(reg.state.history)))
    return cells


def _diff(base, new):
    return {k: v for k, v in new.items() if base.get(k) != v}


def ablation_to_csv(cells: Sequence[AblationCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["cell", "mae_mean", "mae_std", "mape_mean", "mape_std", "n", "overrides"])
    for c in cells:
        r = c.report
        w.writerow([c.name, f"{r.mae_mean:.6f}", f"{r.mae_std:.6f}", f"{r.mape_mean:.6f}",
                    f"{r.mape_std:.6f}", r.n, json.dumps(c.overrides, sort_keys=True)])
    return buf.getvalue()


def render_table(rows: Sequence[tuple]) -> str:
    """Plain-text table from ``(label, MetricsReport)`` pairs."""
    head = f"{'method':<40} {'MAE (kg)':>16} {'MAPE (%)':>16}"
    lines = [head, "-" * len(head)]
    for label, r in rows:
        lines.append(f"{label:<40} {r.mae_mean:>7.2f} +- {r.mae_std:<5.2f} {r.mape_mean:>7.2f} +- {r.mape_std:<5.2f}")
    return "\n".join(lines)
