"""Static/active segmentation of pressure sequences and session-level weight
aggregation.

Frames are gated by their temporal gradient (mean absolute difference to the
previous frame) with a two-threshold hysteresis, so a subject turning over
is cut out and only stable lying periods vote on the session weight.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PressureFrame
from .errors import AggregationError


class Label(str, enum.Enum):
    STATIC = "static"
    ACTIVE = "active"


def _stack(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected a (T, rows, cols) array, got shape {arr.shape}")
        return arr
    frames = list(frames)
    shapes = {f.values.shape if isinstance(f, PressureFrame) else np.shape(f) for f in frames}
    if len(shapes) > 1:
        raise ValueError(f"frames must share one grid, got shapes {sorted(shapes)}")
    return np.stack([f.values if isinstance(f, PressureFrame) else np.asarray(f, float) for f in frames])


def temporal_gradient(frames) -> np.ndarray:
    """Per-frame gradient g_t = mean |f_t - f_{t-1}|, length T.

    The first entry repeats g_1 so the series aligns with the frames.
    """
    arr = _stack(frames)
    if arr.shape[0] < 2:
        raise ValueError(f"need at least 2 frames, got {arr.shape[0]}")
    g = np.abs(np.diff(arr, axis=0)).mean(axis=(1, 2))
    return np.concatenate([g[:1], g])


@dataclass(frozen=True)
class SegmentList:
    segments: tuple             # ((start, end, Label), ...) half-open
    tau_hi: float
    tau_lo: float

    def __post_init__(self):
        segs = tuple((int(a), int(b), Label(l)) for a, b, l in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("a segment list cannot be empty")
        if segs[0][0] != 0:
            raise ValueError("segments must start at frame 0")
        for (a, b, l), nxt in zip(segs, segs[1:] + (None,)):
            if b <= a:
                raise ValueError(f"empty or reversed segment {(a, b)}")
            if nxt is not None:
                if nxt[0] != b:
                    raise ValueError(f"gap or overlap between segments ending {b} and starting {nxt[0]}")
                if nxt[2] == l:
                    raise ValueError(f"adjacent segments share label {l.value} at frame {b}")

    @property
    def n_frames(self) -> int:
        return self.segments[-1][1]

    def labels(self) -> np.ndarray:
        out = np.empty(self.n_frames, dtype=object)
        for a, b, l in self.segments:
            out[a:b] = l
        return out

    def mask(self, label=Label.ACTIVE) -> np.ndarray:
        label = Label(label)
        m = np.zeros(self.n_frames, dtype=bool)
        for a, b, l in self.segments:
            if l is label:
                m[a:b] = True
        return m

    def intervals(self, label=Label.ACTIVE) -> list:
        label = Label(label)
        return [(a, b) for a, b, l in self.segments if l is label]

    def to_list(self):
        return [{"start": a, "end": b, "label": l.value} for a, b, l in self.segments]


class HysteresisSegmenter:
    """Streaming segmenter with O(1) state.

    ``push(g)`` consumes one gradient value and returns the segments that
    became final (possibly none); ``finish()`` flushes the rest. Raw runs
    from the hysteresis gate that are shorter than ``min_len`` are absorbed
    into the preceding segment; a short leading run takes the label of the
    segment after it.
    """

    def __init__(self, tau_hi: float, tau_lo: float, min_len: int = 5):
        if not tau_lo > 0:
            raise ValueError(f"tau_lo must be positive, got {tau_lo}")
        if tau_lo > tau_hi:
            raise ValueError(f"tau_lo ({tau_lo}) must not exceed tau_hi ({tau_hi})")
        if min_len < 1:
            raise ValueError(f"min_len must be >= 1, got {min_len}")
        self.tau_hi, self.tau_lo, self.min_len = float(tau_hi), float(tau_lo), int(min_len)
        self.t = 0
        self.state = Label.STATIC
        self.run_start = 0          # current raw run
        self.pending = None         # [start, end, label], last merged segment not yet emitted
        self.rise = 0               # start of the current stretch with g >= tau_lo

    def _gate(self, g):
        if not math.isfinite(g) or g < 0:
            raise ValueError(f"gradient values must be finite and non-negative, got {g}")
        if self.state is Label.STATIC and g > self.tau_hi:
            return Label.ACTIVE
        if self.state is Label.ACTIVE and g < self.tau_lo:
            return Label.STATIC
        return self.state

    def _close_run(self, end):
        """Fold the raw run [run_start, end) into the pending segment."""
        start, label = self.run_start, self.state
        out = []
        p = self.pending
        if p is None:
            self.pending = [start, end, label]
        elif end - start < self.min_len or label is p[2]:
            p[1] = end
        elif p[0] == 0 and p[1] - p[0] < self.min_len:
            # short leading segment adopts the label of the first long run
            self.pending = [0, end, label]
        else:
            out.append(tuple(p))
            self.pending = [start, end, label]
        return out

    def push(self, g: float) -> list:
        g = float(g)
        new = self._gate(g)
        if g < self.tau_lo:
            self.rise = self.t + 1
        out = []
        if new is not self.state:
            # the rising stretch lies inside the current static run, which is not yet emitted
            cut = max(self.rise, self.run_start) if new is Label.ACTIVE else self.t
            if cut > self.run_start:
                out = self._close_run(cut)
            self.run_start = cut
            self.state = new
        self.t += 1
        return out

    def finish(self) -> list:
        if self.t == 0:
            raise ValueError("no gradient values were pushed")
        out = self._close_run(self.t) if self.t > self.run_start else []
        self.run_start = self.t
        if self.pending is not None:
            out.append(tuple(self.pending))
            self.pending = None
        return out


def segment_frames(gradient: Sequence[float], tau_hi: float, tau_lo: float, min_len: int = 5) -> SegmentList:
    """Hysteresis segmentation: enter active when g > tau_hi, leave when g < tau_lo."""
    seg = HysteresisSegmenter(tau_hi, tau_lo, min_len)
    out = []
    for g in np.asarray(gradient, dtype=np.float64).ravel():
        out.extend(seg.push(g))
    out.extend(seg.finish())
    return SegmentList(tuple(out), seg.tau_hi, seg.tau_lo)


def default_thresholds(gradient, hi_mult=5.0, lo_mult=2.0, min_len=5, floor=1e-12):
    """Thresholds relative to the session median gradient.

    ``floor`` keeps them positive for a perfectly still (noise-free) session.
    """
    med = max(float(np.median(np.asarray(gradient, dtype=np.float64))), floor)
    return hi_mult * med, lo_mult * med, min_len


def segment_session(frames, tau_hi=None, tau_lo=None, min_len=5) -> SegmentList:
    g = temporal_gradient(frames)
    hi, lo, _ = default_thresholds(g)
    return segment_frames(g, hi if tau_hi is None else tau_hi, lo if tau_lo is None else tau_lo, min_len)


def _stats(x) -> dict:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return {"frames": 0, "mean": None, "std": None, "min": None, "max": None}
    return {"frames": int(x.size), "mean": float(x.mean()), "std": float(x.std()),
            "min": float(x.min()), "max": float(x.max())}


def aggregate_weight(predictions, segments: SegmentList):
    """Duration-weighted mean of the predictions over static segments.

    Returns ``(estimate_kg, breakdown)`` where the breakdown carries
    per-label and per-segment statistics of the predictions.
    """
    p = np.asarray(predictions, dtype=np.float64).ravel()
    if p.size != segments.n_frames:
        raise ValueError(f"{p.size} predictions for a session of {segments.n_frames} frames")
    static = [(a, b) for a, b, l in segments.segments if l is Label.STATIC]
    duration = sum(b - a for a, b in static)
    if duration == 0:
        raise AggregationError("no stable frames: the session has no static segment")
    estimate = math.fsum((b - a) * float(p[a:b].mean()) for a, b in static) / duration
    breakdown = {
        "per_label": {l.value: _stats(p[segments.mask(l)]) for l in Label},
        "per_segment": [{"start": a, "end": b, "label": l.value, **_stats(p[a:b])}
                        for a, b, l in segments.segments],
    }
    return estimate, breakdown


def session_report(predictions, segments: SegmentList) -> dict:
    est, breakdown = aggregate_weight(predictions, segments)
    return {"estimate_kg": est, "tau_hi": segments.tau_hi, "tau_lo": segments.tau_lo,
            "segments": breakdown["per_segment"], "per_label": breakdown["per_label"]}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def interval_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """IoU of two boolean frame masks (1.0 when both are empty)."""
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    union = np.logical_or(pred, truth).sum()
    return 1.0 if union == 0 else float(np.logical_and(pred, truth).sum() / union)
