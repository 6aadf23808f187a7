"""Frame preprocessing, label-consistent augmentation and joint-noise injection.

All functions are pure; randomness comes in through an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import JointSet, Posture, PressureFrame, Sample


class Normalization(str, enum.Enum):
    PER_DATASET_MAX = "per_dataset_max"
    PER_FRAME_MAX = "per_frame_max"
    NONE = "none"


@dataclass
class PreprocessConfig:
    upsample_factor: int = 3
    gaussian_kernel: int = 5
    gaussian_sigma: float = 1.0
    smooth: bool = True
    target_rows: int = 192
    target_cols: int = 192
    normalization: Normalization = Normalization.PER_DATASET_MAX
    joint_count: int = 14
    max_rotation_deg: float = 15.0
    max_shift_frac: float = 0.1

    def __post_init__(self):
        self.normalization = Normalization(self.normalization)
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if self.gaussian_kernel < 1 or self.gaussian_kernel % 2 == 0:
            raise ValueError("gaussian_kernel must be a positive odd integer")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.target_rows < 1 or self.target_cols < 1:
            raise ValueError("target dims must be positive")

    @classmethod
    def for_slp(cls, **overrides):
        """SLP frames are already 192 rows tall: no upsampling, pad columns only."""
        return cls(**{"upsample_factor": 1, **overrides})


def upsample_bilinear(frame: PressureFrame, factor: int) -> PressureFrame:
    """Bilinear upsampling by an integer factor with corner-aligned sampling.

    Output cell ``i`` samples the input at ``i * (n - 1) / (n * factor - 1)``,
    so the four corner cells are copied exactly.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return frame
    v = frame.values
    out = _interp_axis(_interp_axis(v, 0, factor), 1, factor)
    return PressureFrame(np.maximum(out, 0.0),
                         None if frame.pitch_row_m is None else frame.pitch_row_m / factor,
                         None if frame.pitch_col_m is None else frame.pitch_col_m / factor)


def _interp_axis(v, axis, factor):
    n = v.shape[axis]
    m = n * factor
    if n == 1:
        return np.repeat(v, m, axis=axis)
    pos = np.arange(m) * (n - 1) / (m - 1)
    lo = np.minimum(np.floor(pos).astype(int), n - 2)
    t = pos - lo
    a = np.take(v, lo, axis=axis)
    b = np.take(v, lo + 1, axis=axis)
    shape = [1, 1]
    shape[axis] = m
    t = t.reshape(shape)
    return a * (1.0 - t) + b * t


def gaussian_kernel2d(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_smooth(frame: PressureFrame, kernel: int = 5, sigma: float = 1.0) -> PressureFrame:
    k = gaussian_kernel2d(kernel, sigma)
    out = ndimage.convolve(frame.values, k, mode="reflect")
    return frame.with_values(np.maximum(out, 0.0))


def pad_center(frame: PressureFrame, target_rows: int, target_cols: int) -> PressureFrame:
    """Zero-pad to the target size, odd remainders going to the bottom/right."""
    r, c = frame.shape
    if r > target_rows or c > target_cols:
        raise ValueError(f"frame {r}x{c} is larger than target {target_rows}x{target_cols}")
    top, left = pad_offsets(frame.shape, target_rows, target_cols)
    out = np.zeros((target_rows, target_cols))
    out[top:top + r, left:left + c] = frame.values
    return frame.with_values(out)


def pad_offsets(shape, target_rows, target_cols):
    return (target_rows - shape[0]) // 2, (target_cols - shape[1]) // 2


def normalize_frame(frame: PressureFrame, mode=Normalization.PER_DATASET_MAX,
                    dataset_max: float | None = None) -> PressureFrame:
    mode = Normalization(mode)
    if mode is Normalization.NONE:
        return frame
    if mode is Normalization.PER_FRAME_MAX:
        peak = frame.values.max()
        return frame if peak == 0 else frame.with_values(frame.values / peak)
    if dataset_max is None or not dataset_max > 0:
        raise ValueError(f"dataset_max must be positive for per_dataset_max, got {dataset_max}")
    return frame.with_values(frame.values / dataset_max)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

class AugmentOp(str, enum.Enum):
    HFLIP = "hflip"
    ROTATE = "rotate"
    SHIFT = "shift"


_SIDE_SWAP = {Posture.LEFT_SIDE: Posture.RIGHT_SIDE, Posture.RIGHT_SIDE: Posture.LEFT_SIDE}


def hflip(sample: Sample) -> Sample:
    frame = sample.frame
    joints = sample.joints
    if joints is not None:
        c = joints.coords.copy()
        c[:, 1] = frame.cols - 1 - c[:, 1]
        joints = JointSet(c)
    return dataclasses.replace(
        sample,
        frame=frame.with_values(frame.values[:, ::-1]),
        joints=joints,
        posture=_SIDE_SWAP.get(sample.posture, sample.posture),
    )


def rotate(sample: Sample, degrees: float, max_degrees: float = 15.0) -> Sample:
    """Rotate about the frame centre (bilinear resampling, zero fill).

    A point ``p = (row, col)`` moves to ``R (p - c) + c`` with ``R`` the
    standard rotation matrix and ``c`` the centre cell.
    """
    if abs(degrees) > max_degrees:
        raise ValueError(f"rotation {degrees} deg outside [-{max_degrees}, {max_degrees}]")
    if degrees == 0:
        return sample
    frame = sample.frame
    center = np.array([(frame.rows - 1) / 2.0, (frame.cols - 1) / 2.0])
    rot = _rotation_matrix(degrees)
    # affine_transform maps output coords to input coords, so pass the inverse
    inv = rot.T
    offset = center - inv @ center
    out = ndimage.affine_transform(frame.values, inv, offset=offset, order=1, mode="constant", cval=0.0)
    joints = sample.joints
    if joints is not None:
        joints = JointSet((joints.coords - center) @ rot.T + center)
    return dataclasses.replace(sample, frame=frame.with_values(np.maximum(out, 0.0)), joints=joints)


def _rotation_matrix(degrees):
    t = math.radians(degrees)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def shift(sample: Sample, dr: int, dc: int, max_frac: float = 0.1) -> Sample:
    frame = sample.frame
    if int(dr) != dr or int(dc) != dc:
        raise ValueError("shift offsets must be integers")
    dr, dc = int(dr), int(dc)
    if abs(dr) > max_frac * frame.rows or abs(dc) > max_frac * frame.cols:
        raise ValueError(f"shift ({dr}, {dc}) exceeds {max_frac:.0%} of the {frame.rows}x{frame.cols} frame")
    if dr == 0 and dc == 0:
        return sample
    out = np.zeros_like(frame.values)
    src = frame.values
    r0, r1 = max(dr, 0), frame.rows + min(dr, 0)
    c0, c1 = max(dc, 0), frame.cols + min(dc, 0)
    out[r0:r1, c0:c1] = src[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
    joints = sample.joints
    if joints is not None:
        joints = JointSet(joints.coords + np.array([dr, dc], dtype=np.float64))
    return dataclasses.replace(sample, frame=frame.with_values(out), joints=joints)


def augment_sample(sample: Sample, op, rng=None, *, angle=None, offset=None,
                   max_rotation_deg: float = 15.0, max_shift_frac: float = 0.1) -> Sample:
    """Apply one augmentation op.

    Explicit parameters (``angle`` in degrees, ``offset`` as ``(dr, dc)``)
    take precedence; otherwise they are drawn uniformly within the bounds
    from ``rng``. The weight label is never touched.
    """
    op = AugmentOp(op)
    if op is AugmentOp.HFLIP:
        return hflip(sample)
    if op is AugmentOp.ROTATE:
        if angle is None:
            angle = float(rng.uniform(-max_rotation_deg, max_rotation_deg))
        return rotate(sample, angle, max_rotation_deg)
    if offset is None:
        mr = int(max_shift_frac * sample.frame.rows)
        mc = int(max_shift_frac * sample.frame.cols)
        offset = (int(rng.integers(-mr, mr + 1)), int(rng.integers(-mc, mc + 1)))
    return shift(sample, offset[0], offset[1], max_shift_frac)


def random_augment(sample: Sample, rng: np.random.Generator, cfg: PreprocessConfig | None = None,
                   p_flip: float = 0.5, p_rotate: float = 0.5, p_shift: float = 0.5) -> Sample:
    """Training-time view: independent coin flips for flip, rotation and shift."""
    cfg = cfg or PreprocessConfig()
    kw = dict(max_rotation_deg=cfg.max_rotation_deg, max_shift_frac=cfg.max_shift_frac)
    if rng.random() < p_flip:
        sample = augment_sample(sample, AugmentOp.HFLIP, rng, **kw)
    if rng.random() < p_rotate:
        sample = augment_sample(sample, AugmentOp.ROTATE, rng, **kw)
    if rng.random() < p_shift:
        sample = augment_sample(sample, AugmentOp.SHIFT, rng, **kw)
    return sample


def folded_normal_l1(sigma_px: float) -> float:
    """Expected per-joint L1 error (|dr| + |dc|) for isotropic noise."""
    return 2.0 * sigma_px * math.sqrt(2.0 / math.pi)


def sigma_for_l1(l1_px: float) -> float:
    """Noise level whose expected per-joint L1 error equals ``l1_px``."""
    return l1_px / (2.0 * math.sqrt(2.0 / math.pi))


def inject_joint_noise(joints: JointSet, sigma_px: float, rng: np.random.Generator) -> JointSet:
    if sigma_px < 0:
        raise ValueError(f"sigma_px must be non-negative, got {sigma_px}")
    if sigma_px == 0:
        return joints
    return JointSet(joints.coords + rng.normal(0.0, sigma_px, size=joints.coords.shape))


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

@dataclass
class Processed:
    frame: np.ndarray        # (target_rows, target_cols)
    joints: np.ndarray       # (2J,), row-major (r0, c0, r1, c1, ...)
    joints_present: bool


def map_joint_coords(coords, frame_shape, cfg: PreprocessConfig) -> np.ndarray:
    """Send native pixel coordinates through upsample and pad, then scale to [0, 1]."""
    f = cfg.upsample_factor
    up_shape = (frame_shape[0] * f, frame_shape[1] * f)
    top, left = pad_offsets(up_shape, cfg.target_rows, cfg.target_cols)
    out = np.asarray(coords, dtype=np.float64) * f + np.array([top, left])
    return out / np.array([cfg.target_rows, cfg.target_cols], dtype=np.float64)


def preprocess_frame(frame: PressureFrame, cfg: PreprocessConfig, dataset_max=None) -> np.ndarray:
    x = upsample_bilinear(frame, cfg.upsample_factor)
    if cfg.smooth:
        x = gaussian_smooth(x, cfg.gaussian_kernel, cfg.gaussian_sigma)
    x = pad_center(x, cfg.target_rows, cfg.target_cols)
    x = normalize_frame(x, cfg.normalization, dataset_max)
    return x.values


def preprocess_pipeline(sample: Sample, cfg: PreprocessConfig, dataset_max=None) -> Processed:
    """upsample -> smooth -> pad -> normalize, with joints carried along."""
    frame = preprocess_frame(sample.frame, cfg, dataset_max)
    if sample.joints is None:
        return Processed(frame, np.zeros(2 * cfg.joint_count), False)
    if sample.joints.J != cfg.joint_count:
        raise ValueError(f"expected {cfg.joint_count} joints, got {sample.joints.J}")
    mapped = map_joint_coords(sample.joints.coords, sample.frame.shape, cfg)
    return Processed(frame, mapped.reshape(-1), True)


def preprocess_batch(samples, cfg: PreprocessConfig, dataset_max=None):
    """Stack pipeline outputs into (frames (B, 1, H, W), joints (B, 2J)) arrays."""
    out = [preprocess_pipeline(s, cfg, dataset_max) for s in samples]
    frames = np.stack([p.frame for p in out])[:, None]
    joints = np.stack([p.joints for p in out])
    return frames, joints
