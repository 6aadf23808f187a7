"""Parametric pressure-image generator with sensor non-idealities.

Unit convention: one sensor unit is one kg-equivalent, so an ideal frame
sums exactly to the body weight. The body is seven Gaussian segments (head,
torso, pelvis, two arms, two legs) laid out per posture; joints are read
off the segment geometry in the 14-joint order used by SLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FormatId, JointSet, Posture, PressureFrame, Sample
from .errors import GenerationError

JOINT_NAMES = (
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle",
    "r_wrist", "r_elbow", "r_shoulder", "l_shoulder", "l_elbow", "l_wrist",
    "thorax", "head_top",
)

MASS_FRACTIONS = {
    "head": 0.08, "torso": 0.35, "pelvis": 0.25,
    "r_arm": 0.05, "l_arm": 0.05, "r_leg": 0.11, "l_leg": 0.11,
}


@dataclass(frozen=True)
class Grid:
    rows: int = 56
    cols: int = 40
    pitch_row_m: float = 1.9 / 56
    pitch_col_m: float = 0.9 / 40

    @classmethod
    def sized(cls, rows, cols, length_m=1.9, width_m=0.9):
        return cls(rows, cols, length_m / rows, width_m / cols)


@dataclass
class Segment:
    name: str
    start: np.ndarray      # metres, (y along the bed, x across)
    end: np.ndarray
    width_m: float
    mass_fraction: float

    @property
    def center(self):
        return (self.start + self.end) / 2.0

    def covariance(self):
        axis = self.end - self.start
        length = float(np.hypot(*axis))
        u = axis / length if length > 0 else np.array([1.0, 0.0])
        v = np.array([-u[1], u[0]])
        sa = max(length / 2.0, self.width_m / 2.0)
        sw = self.width_m / 2.0
        return sa ** 2 * np.outer(u, u) + sw ** 2 * np.outer(v, v)


@dataclass
class BodyModel:
    weight_kg: float
    height_m: float
    posture: Posture
    segments: list = field(default_factory=list)
    joints_m: np.ndarray | None = None    # (14, 2) metres

    def __post_init__(self):
        total = sum(s.mass_fraction for s in self.segments)
        if self.segments and abs(total - 1.0) > 1e-9:
            raise GenerationError(f"mass fractions sum to {total}, expected 1")


def make_body(weight_kg, height_m, posture, grid: Grid = Grid(), rng=None, jitter=1.0) -> BodyModel:
    """Lay out segments for a posture, with optional random pose jitter.

    Besides the seven body segments the layout carries small prominence
    blobs that take part of their parent segment's load.
    """
    posture = Posture(posture)
    rng = np.random.default_rng() if rng is None else rng

    def j(scale):
        return float(rng.normal(0.0, scale * jitter)) if jitter else 0.0

    h = height_m
    bulk = math.sqrt((weight_kg / h ** 2) / 22.0)   # lateral width scale from BMI
    mid_x = grid.cols * grid.pitch_col_m / 2.0 + j(0.02)
    length = grid.rows * grid.pitch_row_m
    top = max(0.02, (length - h) / 2.0) + j(0.02)
    side = posture in (Posture.LEFT_SIDE, Posture.RIGHT_SIDE)
    across = 0.55 if side else 1.0
    sign = -1.0 if posture is Posture.RIGHT_SIDE else 1.0

    def p(frac_y, off_x):
        return np.array([top + frac_y * h, mid_x + sign * off_x])

    shoulder_w = 0.13 * bulk * across * h / 1.7
    hip_w = 0.09 * bulk * across * h / 1.7
    head = Segment("head", p(0.02, 0.0), p(0.12, 0.0), 0.14, 0)
    torso = Segment("torso", p(0.17, 0.0), p(0.38, 0.0), 0.30 * bulk * across, 0)
    pelvis = Segment("pelvis", p(0.40, 0.0), p(0.53, 0.0), 0.30 * bulk * across, 0)

    if side:
        # arms in front of the torso, legs stacked and slightly bent
        bend = 0.06 + abs(j(0.03))
        r_arm = Segment("r_arm", p(0.19, 0.04), p(0.42, 0.10 + bend), 0.08 * bulk, 0)
        l_arm = Segment("l_arm", p(0.19, 0.02), p(0.40, 0.12 + bend), 0.08 * bulk, 0)
        r_leg = Segment("r_leg", p(0.53, 0.02), p(0.94, 0.05 + bend), 0.11 * bulk, 0)
        l_leg = Segment("l_leg", p(0.53, -0.01), p(0.92, 0.10 + bend), 0.11 * bulk, 0)
    else:
        spread = 0.03 + abs(j(0.02))
        raise_arms = posture is Posture.PRONE
        r_end = p(0.05, -(shoulder_w + 0.08)) if raise_arms else p(0.48, -(shoulder_w + spread + 0.03))
        l_end = p(0.05, shoulder_w + 0.08) if raise_arms else p(0.48, shoulder_w + spread + 0.03)
        r_arm = Segment("r_arm", p(0.18, -shoulder_w), r_end, 0.08 * bulk, 0)
        l_arm = Segment("l_arm", p(0.18, shoulder_w), l_end, 0.08 * bulk, 0)
        r_leg = Segment("r_leg", p(0.53, -hip_w), p(0.96, -(hip_w + spread)), 0.13 * bulk, 0)
        l_leg = Segment("l_leg", p(0.53, hip_w), p(0.96, hip_w + spread), 0.13 * bulk, 0)

    segments = [head, torso, pelvis, r_arm, l_arm, r_leg, l_leg]
    fracs = np.array([MASS_FRACTIONS[s.name] for s in segments])
    if posture is Posture.PRONE:
        fracs = fracs * np.array([0.8, 1.15, 1.0, 0.8, 0.8, 1.0, 1.0])
    if jitter:
        fracs = fracs * np.exp(rng.normal(0.0, 0.05 * jitter, len(fracs)))
    fracs = fracs / fracs.sum()
    for s, f in zip(segments, fracs):
        s.mass_fraction = float(f)
    segments += _prominences(segments, side, bulk)
    joints = np.array([
        r_leg.end, r_leg.center, r_leg.start, l_leg.start, l_leg.center, l_leg.end,
        r_arm.end, r_arm.center, r_arm.start, l_arm.start, l_arm.center, l_arm.end,
        torso.start, head.start,
    ])
    return BodyModel(float(weight_kg), float(height_m), posture, segments, joints)


# (parent, position along parent axis, share of parent load, diameter m)
_PROMINENCES_BACK = (("pelvis", 0.55, 0.35, 0.07), ("torso", 0.2, 0.12, 0.06), ("head", 0.45, 0.3, 0.05),
                     ("r_leg", 0.97, 0.25, 0.045), ("l_leg", 0.97, 0.25, 0.045))
_PROMINENCES_SIDE = (("pelvis", 0.6, 0.45, 0.07), ("torso", 0.15, 0.3, 0.07), ("head", 0.5, 0.3, 0.05),
                     ("r_leg", 0.5, 0.25, 0.045), ("l_leg", 0.95, 0.25, 0.045))


def _prominences(segments, side, bulk):
    """Small high-pressure contacts (sacrum, heels, shoulder, hip) that take
    part of their parent segment's load."""
    by_name = {s.name: s for s in segments}
    out = []
    for parent, at, share, diameter in (_PROMINENCES_SIDE if side else _PROMINENCES_BACK):
        seg = by_name[parent]
        pos = seg.start + at * (seg.end - seg.start)
        moved = seg.mass_fraction * share
        seg.mass_fraction -= moved
        out.append(Segment(f"{parent}_prominence", pos, pos, diameter * (0.8 + 0.2 * bulk), moved))
    return out


def _to_pixels(points_m, grid: Grid):
    return np.asarray(points_m) / np.array([grid.pitch_row_m, grid.pitch_col_m]) - 0.5


def render_body(body: BodyModel, grid: Grid = Grid()) -> np.ndarray:
    """Ideal frame whose cells sum to ``body.weight_kg``."""
    rr, cc = np.meshgrid(np.arange(grid.rows), np.arange(grid.cols), indexing="ij")
    pts = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    scale = np.diag([1.0 / grid.pitch_row_m, 1.0 / grid.pitch_col_m])
    frame = np.zeros(grid.rows * grid.cols)
    for seg in body.segments:
        c = _to_pixels(seg.center, grid)
        if not (0 <= c[0] <= grid.rows - 1 and 0 <= c[1] <= grid.cols - 1):
            raise GenerationError(f"segment {seg.name} centre {c.round(2)} lies outside the "
                                  f"{grid.rows}x{grid.cols} grid")
        cov = scale @ seg.covariance() @ scale
        d = pts - c
        q = np.einsum("ni,ij,nj->n", d, np.linalg.inv(cov), d)
        # flat-topped profile with a soft contact edge at q ~ 1
        blob = np.exp(-(q ** 2))
        blob[blob < 1e-4] = 0.0
        if not blob.sum() > 0:
            # contact smaller than a cell on a coarse grid: load the nearest cell
            blob[int(np.argmin((d ** 2).sum(axis=1)))] = 1.0
        frame +=seg.mass_fraction * blob / blob.sum()
    frame = frame.reshape(grid.rows, grid.cols) * body.weight_kg
    # re-impose exact conservation lost to rounding
    return frame * (body.weight_kg / frame.sum())


def synthesize_sample(body: BodyModel, grid: Grid = Grid(), rng=None, subject_id="s000",
                      timestamp=None) -> Sample:
    """Render ``body`` into a labelled sample. ``rng`` is unused; rendering is deterministic."""
    values = render_body(body, grid)
    joints = JointSet(_to_pixels(body.joints_m, grid))
    frame = PressureFrame(values, grid.pitch_row_m, grid.pitch_col_m)
    return Sample(frame, subject_id, body.weight_kg, body.posture, joints, timestamp)


@dataclass
class SensorModel:
    gain_per_cell: np.ndarray | float = 1.0
    saturation_cap: float | None = None
    noise_sigma: float = 0.0
    hysteresis_retention: float = 0.0

    def __post_init__(self):
        if self.saturation_cap is not None and not self.saturation_cap > 0:
            raise ValueError("saturation_cap must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.hysteresis_retention < 1.0:
            raise ValueError("hysteresis_retention must lie in [0, 1)")

    @classmethod
    def ideal(cls):
        return cls()

    @classmethod
    def with_gain_spread(cls, shape, spread, rng, **kw):
        """Per-cell gains drawn once from N(1, spread), floored at 0.5."""
        gain = np.maximum(rng.normal(1.0, spread, size=shape), 0.5)
        return cls(gain_per_cell=gain, **kw)


def apply_sensor_model(frames, sensor: SensorModel, rng=None) -> np.ndarray:
    """Gain, saturation, additive noise (clipped at 0), then hysteresis.

    ``frames`` is one 2D frame or a (T, rows, cols) sequence; hysteresis only
    acts along the sequence axis, ``out_t = r * out_{t-1} + (1 - r) * v_t``,
    starting from a sensor at rest (``out_{-1} = 0``).
    """
    x = np.asarray(frames, dtype=np.float64)
    single = x.ndim == 2
    seq = x[None] if single else x
    v = seq * sensor.gain_per_cell
    if sensor.saturation_cap is not None:
        v = np.minimum(v, sensor.saturation_cap)
    if sensor.noise_sigma > 0:
        rng = np.random.default_rng() if rng is None else rng
        v = np.maximum(v + rng.normal(0.0, sensor.noise_sigma, size=v.shape), 0.0)
    r = sensor.hysteresis_retention
    if r > 0:
        out = np.empty_like(v)
        prev = np.zeros_like(v[0])
        for t in range(v.shape[0]):
            prev = r * prev + (1.0 - r) * v[t]
            out[t] = prev
        v = out
    return v[0] if single else v


def peak_cap(frames, percentile=70.0) -> float:
    """Saturation level at the given percentile of per-frame peak values."""
    peaks = [float(np.max(f)) for f in frames]
    return float(np.percentile(peaks, percentile))


def generate_dataset(n_subjects=50, frames_per_subject=6, grid: Grid = Grid(),
                     weight_range=(40.0, 105.0), height_range=(1.5, 1.9),
                     postures=(Posture.SUPINE, Posture.LEFT_SIDE, Posture.RIGHT_SIDE),
                     sensor: SensorModel | str | None = None, cap_percentile=70.0,
                     noise_sigma=None, gain_spread=0.05, seed=0) -> Dataset:
    """Subjects with uniform weights, cycling through ``postures``.

    ``sensor`` may be a :class:`SensorModel`, ``None``/``"ideal"``, or
    ``"saturating"`` for a cap at ``cap_percentile`` of the ideal peaks plus
    per-cell gain spread and additive noise (``noise_sigma`` defaults to 2%
    of the cap).
    """
    rng = np.random.default_rng(seed)
    weights = rng.uniform(*weight_range, size=n_subjects)
    heights = np.clip(rng.uniform(*height_range, size=n_subjects) + 0.002 * (weights - 70), *height_range)
    ideal = []
    width = len(str(n_subjects))
    for k in range(n_subjects):
        sid = f"s{k:0{width}d}"
        for f in range(frames_per_subject):
            posture = postures[f % len(postures)]
            body = make_body(weights[k], heights[k], posture, grid, rng)
            s = synthesize_sample(body, grid, subject_id=sid)
            ideal.append(s)

    if sensor is None or sensor == "ideal":
        return Dataset(ideal, FormatId.SYNTHETIC)
    if sensor == "saturating":
        cap = peak_cap([s.frame.values for s in ideal], cap_percentile)
        sensor = SensorModel.with_gain_spread(
            (grid.rows, grid.cols), gain_spread, rng, saturation_cap=cap,
            noise_sigma=0.02 * cap if noise_sigma is None else noise_sigma)
    if not isinstance(sensor, SensorModel):
        raise ValueError(f"unknown sensor spec {sensor!r}")
    out = []
    for s in ideal:
        values = apply_sensor_model(s.frame.values, sensor, rng)
        out.append(Sample(s.frame.with_values(values), s.subject_id, s.weight_kg, s.posture, s.joints))
    return Dataset(out, FormatId.SYNTHETIC)


# ---------------------------------------------------------------------------
# dynamic sessions
# ---------------------------------------------------------------------------

@dataclass
class Session:
    samples: list
    active: np.ndarray           # bool per frame, ground truth
    movements: list              # (start, end) frame windows


def _interp_body(a: BodyModel, b: BodyModel, t: float, lift: float) -> BodyModel:
    segs = []
    for sa, sb in zip(a.segments, b.segments):
        segs.append(Segment(sa.name, (1 - t) * sa.start + t * sb.start, (1 - t) * sa.end + t * sb.end,
                            (1 - t) * sa.width_m + t * sb.width_m,
                            (1 - t) * sa.mass_fraction + t * sb.mass_fraction))
    # limbs partly leave the mat mid-movement; their load moves to the trunk
    for s in segs:
        if s.name.endswith(("arm", "leg")):
            s.mass_fraction *= 1.0 - lift
    moved = 1.0 - sum(s.mass_fraction for s in segs)
    trunk = [s for s in segs if s.name in ("torso", "pelvis")]
    for s in trunk:
        s.mass_fraction += moved / len(trunk)
    joints = (1 - t) * a.joints_m + t * b.joints_m
    return BodyModel(a.weight_kg, a.height_m, a.posture if t < 0.5 else b.posture, segs, joints)


def synthesize_session(weight_kg=70.0, height_m=1.72, n_frames=1200, movements=None, n_movements=14,
                       movement_len=(10, 20), grid: Grid = Grid(), sensor: SensorModel | None = None,
                       load_jitter=0.12, subject_id="dyn", seed=0) -> Session:
    """A time series of static poses separated by planted movements.

    During a movement the layout interpolates to the next pose, limbs are
    partly lifted and the total load fluctuates by ``load_jitter``
    (inertial forces), which is what makes active-frame predictions noisy.
    """
    rng = np.random.default_rng(seed)
    postures = [Posture.SUPINE, Posture.LEFT_SIDE, Posture.SUPINE, Posture.RIGHT_SIDE]
    if movements is None:
        lengths = rng.integers(movement_len[0], movement_len[1] + 1, size=n_movements)
        static_total = n_frames - int(lengths.sum())
        if static_total < n_movements + 1:
            raise GenerationError("session too short for the requested movements")
        gaps = rng.multinomial(static_total - (n_movements + 1), np.ones(n_movements + 1) / (n_movements + 1)) + 1
        movements, t = [], 0
        for k in range(n_movements):
            t += int(gaps[k])
            movements.append((t, t + int(lengths[k])))
            t += int(lengths[k])
    movements = sorted((int(a), int(b)) for a, b in movements)
    active = np.zeros(n_frames, dtype=bool)
    for a, b in movements:
        if not 0 < a < b <= n_frames:
            raise GenerationError(f"movement window {(a, b)} outside (0, {n_frames}]")
        active[a:b] = True

    pose_idx = 0
    current = make_body(weight_kg, height_m, postures[0], grid, rng, jitter=0.5)
    bodies = []
    mv = iter(movements + [(n_frames + 1, n_frames + 1)])
    nxt = next(mv)
    t = 0
    while t < n_frames:
        if t == nxt[0]:
            pose_idx += 1
            target = make_body(weight_kg, height_m, postures[pose_idx % len(postures)], grid, rng, jitter=0.5)
            length = nxt[1] - nxt[0]
            for k in range(length):
                u = (k + 1) / (length + 1)
                lift = 0.5 * math.sin(math.pi * u)
                b = _interp_body(current, target, u, lift)
                b.weight_kg = weight_kg * (1.0 + load_jitter * rng.normal())
                bodies.append(b)
            t = nxt[1]
            current = target
            nxt = next(mv)
        else:
            bodies.append(current)
            t += 1

    ideal = np.stack([render_body(b, grid) for b in bodies])
    values = ideal if sensor is None else apply_sensor_model(ideal, sensor, rng)
    samples = []
    for i, (b, v) in enumerate(zip(bodies, values)):
        frame = PressureFrame(v, grid.pitch_row_m, grid.pitch_col_m)
        samples.append(Sample(frame, subject_id, weight_kg, b.posture, JointSet(_to_pixels(b.joints_m, grid)), i))
    return Session(samples, active, movements)
