"""Domain types, the native on-disk dataset format, and dataset splits.

Native layout (used for ``massnet_static``, ``massnet_dynamic`` and
``synthetic`` datasets)::

    root/
      meta.json           format_id, grid dims, pitch, subject table, sample list
      frames/<id>.csv     one row per sensor row, comma separated
      joints/<id>.json    optional, ordered [row, col] pairs

The SLP adapter reads the public SLP pressure-array release read-only::

    root/<subject>/PMarray/<cover>/<index>.npy     192 x 84 arrays
    root/<subject>/joints_gt_PM.mat                optional, (3, J, 45) x/y/vis
    root/weights.csv  or  root/physiqueData.npy    subject weights
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, LoadError, SplitError

NATIVE_FORMAT_VERSION = 1


class Posture(str, enum.Enum):
    SUPINE = "supine"
    LEFT_SIDE = "left_side"
    RIGHT_SIDE = "right_side"
    PRONE = "prone"
    OTHER = "other"


class FormatId(str, enum.Enum):
    SLP_PM = "slp_pm"
    MASSNET_STATIC = "massnet_static"
    MASSNET_DYNAMIC = "massnet_dynamic"
    SYNTHETIC = "synthetic"


# None means "whatever meta.json declares".
FORMAT_GRIDS = {
    FormatId.SLP_PM: (192, 84),
    FormatId.MASSNET_STATIC: (56, 40),
    FormatId.MASSNET_DYNAMIC: (56, 40),
    FormatId.SYNTHETIC: None,
}


class SplitStrategy(str, enum.Enum):
    WEIGHT_BINNED = "weight_binned"
    LOSO = "loso"
    RANDOM_KFOLD = "random_kfold"


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PressureFrame:
    """A rectangular grid of non-negative sensor readings."""

    values: np.ndarray
    pitch_row_m: float | None = None
    pitch_col_m: float | None = None

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 2 or v.size == 0:
            raise FormatError(f"pressure frame must be a non-empty 2D grid, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FormatError("pressure frame contains non-finite values")
        if np.any(v < 0):
            raise FormatError("pressure frame contains negative values")
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values) -> "PressureFrame":
        return PressureFrame(values, self.pitch_row_m, self.pitch_col_m)


@dataclass(frozen=True, eq=False)
class JointSet:
    """Ordered (row, col) joint coordinates in frame pixel units.

    Coordinates may fall outside the frame after augmentation; use
    :meth:`outside` to flag them, nothing is clamped.
    """

    coords: np.ndarray

    def __post_init__(self):
        c = _readonly(self.coords)
        if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] == 0:
            raise FormatError(f"joint coords must have shape (J, 2), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise FormatError("joint coords must be finite")
        object.__setattr__(self, "coords", c)

    @property
    def J(self) -> int:
        return self.coords.shape[0]

    def outside(self, rows: int, cols: int) -> np.ndarray:
        r, c = self.coords[:, 0], self.coords[:, 1]
        return (r < 0) | (r > rows - 1) | (c < 0) | (c > cols - 1)


@dataclass(frozen=True, eq=False)
class Sample:
    frame: PressureFrame
    subject_id: str
    weight_kg: float
    posture: Posture = Posture.OTHER
    joints: JointSet | None = None
    timestamp: int | None = None

    def __post_init__(self):
        if not 0.0 < float(self.weight_kg) < 500.0:
            raise FormatError(f"weight_kg must lie in (0, 500), got {self.weight_kg}")
        object.__setattr__(self, "weight_kg", float(self.weight_kg))
        object.__setattr__(self, "posture", Posture(self.posture))
        object.__setattr__(self, "subject_id", str(self.subject_id))


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple
    format_id: FormatId

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "format_id", FormatId(self.format_id))

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    @property
    def subjects(self) -> list:
        """Subject ids in order of first appearance."""
        return list(dict.fromkeys(s.subject_id for s in self.samples))

    def subject_weights(self) -> dict:
        """Map subject id to its weight; raises if a subject is inconsistent."""
        out = {}
        for s in self.samples:
            w = out.setdefault(s.subject_id, s.weight_kg)
            if w != s.weight_kg:
                raise SplitError(f"subject {s.subject_id!r} has inconsistent weights {w} and {s.weight_kg}")
        return out

    def subject_indices(self) -> dict:
        out = {}
        for i, s in enumerate(self.samples):
            out.setdefault(s.subject_id, []).append(i)
        return out

    def select(self, indices: Iterable[int]) -> list:
        return [self.samples[i] for i in indices]


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple
    test: tuple
    strategy: SplitStrategy
    seed: int | None = None

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        object.__setattr__(self, "strategy", SplitStrategy(self.strategy))
        tr, va, te = set(self.train), set(self.val), set(self.test)
        if tr & va or tr & te or va & te:
            raise SplitError("split partitions overlap")

    def resolve(self, dataset: Dataset):
        """Return (train, val, test) sample lists."""
        return dataset.select(self.train), dataset.select(self.val), dataset.select(self.test)


def dataset_max(samples: Iterable[Sample]) -> float:
    return max(float(s.frame.values.max()) for s in samples)


# ---------------------------------------------------------------------------
# loading and saving
# ---------------------------------------------------------------------------

def load_dataset(root_path, format_id, *, slp_cover="uncover", weight_column=None) -> Dataset:
    """Load a dataset from ``root_path``.

    ``slp_cover`` and ``weight_column`` only apply to the SLP adapter.
    """
    root = Path(root_path)
    fid = FormatId(format_id)
    if not root.is_dir():
        raise LoadError(f"dataset root does not exist: {root}")
    if fid is FormatId.SLP_PM:
        return _load_slp(root, cover=slp_cover, weight_column=weight_column)
    return _load_native(root, fid)


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise LoadError(f"missing file: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc


def read_frame_csv(path, pitch_row_m=None, pitch_col_m=None) -> PressureFrame:
    path = Path(path)
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except FileNotFoundError as exc:
        raise LoadError(f"missing file: {path}") from exc
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot parse frame {path}: {exc}") from exc
    try:
        return PressureFrame(values, pitch_row_m, pitch_col_m)
    except FormatError as exc:
        raise LoadError(f"invalid frame {path}: {exc}") from exc


def write_frame_csv(path, frame) -> None:
    values = frame.values if isinstance(frame, PressureFrame) else np.asarray(frame, dtype=np.float64)
    # %.17g round-trips float64 exactly
    np.savetxt(path, values, delimiter=",", fmt="%.17g")


def _load_native(root: Path, fid: FormatId) -> Dataset:
    meta_path = root / "meta.json"
    if not meta_path.exists():
        if not any(root.iterdir()):
            raise LoadError(f"no samples found in {root}")
        raise LoadError(f"missing file: {meta_path}")
    meta = _read_json(meta_path)
    version = meta.get("format_version", NATIVE_FORMAT_VERSION)
    if version != NATIVE_FORMAT_VERSION:
        raise FormatError(f"{meta_path}: expected format_version {NATIVE_FORMAT_VERSION}, found {version}")
    if meta.get("format_id") != fid.value:
        raise FormatError(f"{meta_path}: declares format {meta.get('format_id')!r}, expected {fid.value!r}")
    try:
        rows, cols = int(meta["rows"]), int(meta["cols"])
        subjects = meta["subjects"]
        entries = meta["samples"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{meta_path}: malformed meta ({exc})") from exc
    expected = FORMAT_GRIDS[fid]
    if expected is not None and (rows, cols) != expected:
        raise FormatError(f"{meta_path}: grid {rows}x{cols} does not match {fid.value} grid {expected[0]}x{expected[1]}")
    if not entries:
        raise LoadError(f"no samples found in {root}")
    pr, pc = meta.get("pitch_row_m"), meta.get("pitch_col_m")

    samples = []
    for entry in entries:
        sid = str(entry["id"])
        subject = str(entry["subject_id"])
        if subject not in subjects:
            raise FormatError(f"{meta_path}: sample {sid} references unknown subject {subject!r}")
        fpath = root / "frames" / f"{sid}.csv"
        frame = read_frame_csv(fpath, pr, pc)
        if frame.shape != (rows, cols):
            raise FormatError(f"{fpath}: frame is {frame.rows}x{frame.cols}, expected {rows}x{cols}")
        jpath = root / "joints" / f"{sid}.json"
        joints = None
        if jpath.exists():
            try:
                joints = JointSet(np.asarray(_read_json(jpath), dtype=np.float64))
            except (FormatError, ValueError) as exc:
                raise LoadError(f"invalid joints {jpath}: {exc}") from exc
        weight = entry.get("weight_kg", subjects[subject]["weight_kg"])
        samples.append(Sample(frame, subject, weight, entry.get("posture", "other"),
                              joints, entry.get("timestamp")))
    return Dataset(samples, fid)


def save_dataset(dataset: Dataset, root_path) -> Path:
    """Write ``dataset`` in the native layout and return the root path."""
    root = Path(root_path)
    if not len(dataset):
        raise ValueError("cannot save an empty dataset")
    shapes = {s.frame.shape for s in dataset}
    if len(shapes) != 1:
        raise FormatError(f"frames have mixed shapes {sorted(shapes)}")
    (rows, cols), = shapes
    (root / "frames").mkdir(parents=True, exist_ok=True)
    width = max(6, len(str(len(dataset))))
    first = dataset[0].frame
    meta = {
        "format_version": NATIVE_FORMAT_VERSION,
        "format_id": dataset.format_id.value,
        "rows": rows,
        "cols": cols,
        "pitch_row_m": first.pitch_row_m,
        "pitch_col_m": first.pitch_col_m,
        "subjects": {k: {"weight_kg": v} for k, v in dataset.subject_weights().items()},
        "samples": [],
    }
    for i, s in enumerate(dataset):
        sid = f"{i:0{width}d}"
        write_frame_csv(root / "frames" / f"{sid}.csv", s.frame)
        if s.joints is not None:
            (root / "joints").mkdir(exist_ok=True)
            with open(root / "joints" / f"{sid}.json", "w") as fh:
                json.dump(s.joints.coords.tolist(), fh)
        entry = {"id": sid, "subject_id": s.subject_id, "posture": s.posture.value}
        if s.timestamp is not None:
            entry["timestamp"] = int(s.timestamp)
        meta["samples"].append(entry)
    with open(root / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    return root


# SLP: 45 poses per subject, 15 each of supine, left side, right side.
def _slp_posture(pose_index: int) -> Posture:
    if 1 <= pose_index <= 15:
        return Posture.SUPINE
    if 16 <= pose_index <= 30:
        return Posture.LEFT_SIDE
    if 31 <= pose_index <= 45:
        return Posture.RIGHT_SIDE
    return Posture.OTHER


def _slp_weights(root: Path, subjects: Sequence[str], weight_column) -> dict:
    csv_path = root / "weights.csv"
    if csv_path.exists():
        with open(csv_path, newline="") as fh:
            table = {row["subject_id"].strip(): float(row["weight_kg"]) for row in csv.DictReader(fh)}
        missing = [s for s in subjects if s not in table]
        if missing:
            raise LoadError(f"{csv_path}: no weight for subjects {missing[:5]}")
        return {s: table[s] for s in subjects}
    phys_path = root / "physiqueData.npy"
    if not phys_path.exists():
        raise LoadError(f"missing file: {csv_path} (or {phys_path})")
    try:
        phys = np.load(phys_path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read {phys_path}: {exc}") from exc
    if phys.ndim != 2 or phys.shape[0] < len(subjects):
        raise FormatError(f"{phys_path}: expected one row per subject, got shape {phys.shape}")
    if weight_column is None:
        # The SLP weight range is 44.55-105.1 kg; pick the only column that fits.
        candidates = [j for j in range(phys.shape[1])
                      if np.all((phys[:, j] >= 40) & (phys[:, j] <= 110)) and len(np.unique(phys[:, j])) > 1]
        if len(candidates) != 1:
            raise FormatError(f"{phys_path}: cannot infer the weight column; pass weight_column")
        weight_column = candidates[0]
    order = sorted(subjects)
    return {s: float(phys[order.index(s), weight_column]) for s in subjects}


def _load_slp(root: Path, cover: str, weight_column) -> Dataset:
    subject_dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "PMarray").is_dir())
    if not subject_dirs:
        raise LoadError(f"no samples found in {root}")
    weights = _slp_weights(root, [p.name for p in subject_dirs], weight_column)
    rows, cols = FORMAT_GRIDS[FormatId.SLP_PM]
    samples = []
    for sdir in subject_dirs:
        joints_all = None
        jpath = sdir / "joints_gt_PM.mat"
        if jpath.exists():
            from scipy.io import loadmat

            try:
                joints_all = np.asarray(loadmat(jpath)["joints_gt"], dtype=np.float64)
            except Exception as exc:  # scipy raises a zoo of types on bad .mat files
                raise LoadError(f"cannot read {jpath}: {exc}") from exc
        files = sorted((sdir / "PMarray" / cover).glob("*.npy"))
        for fpath in files:
            try:
                values = np.load(fpath, allow_pickle=False)
            except (OSError, ValueError) as exc:
                raise LoadError(f"cannot read {fpath}: {exc}") from exc
            if values.shape != (rows, cols):
                raise FormatError(f"{fpath}: frame is {values.shape}, expected {(rows, cols)}")
            try:
                frame = PressureFrame(values, 0.01, 0.01)
            except FormatError as exc:
                raise LoadError(f"invalid frame {fpath}: {exc}") from exc
            pose = int(fpath.stem)
            joints = None
            if joints_all is not None and pose - 1 < joints_all.shape[2]:
                xy = joints_all[:2, :, pose - 1].T
                joints = JointSet(xy[:, ::-1])  # stored as (x=col, y=row)
            samples.append(Sample(frame, sdir.name, weights[sdir.name], _slp_posture(pose), joints))
    if not samples:
        raise LoadError(f"no samples found in {root}")
    return Dataset(samples, FormatId.SLP_PM)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split_weight_binned(dataset: Dataset, n_bins: int = 10, seed: int = 0,
                        n_val: int | None = None, n_test: int | None = None) -> SplitSpec:
    """Subject-level split stratified over equal-width weight bins.

    Each bin contributes one validation subject; ``n_test`` bins (all bins
    when ``n_test == n_bins``, a seeded random subset otherwise) contribute
    one test subject. When a bin has run out of subjects the draw is taken
    from the currently most populous bin. Everything else is training data.
    The defaults (``n_val = n_bins``, ``n_test = n_bins - 2``) give the
    84:10:8 subject ratio on a 102-subject dataset.
    """
    weights = dataset.subject_weights()
    subjects = list(weights)
    if n_bins < 1:
        raise SplitError("n_bins must be positive")
    if len(subjects) < 2 * n_bins:
        raise SplitError(f"need at least {2 * n_bins} subjects for {n_bins} bins, got {len(subjects)}")
    n_val = n_bins if n_val is None else n_val
    n_test = max(n_bins - 2, 1) if n_test is None else n_test
    if n_val < 0 or n_test < 0 or n_val + n_test >= len(subjects):
        raise SplitError("n_val and n_test must be non-negative and leave training subjects")

    rng = np.random.default_rng(seed)
    w = np.array([weights[s] for s in subjects])
    lo, hi = w.min(), w.max()
    edges = np.linspace(lo, hi, n_bins + 1)
    bin_of = np.clip(np.searchsorted(edges, w, side="right") - 1, 0, n_bins - 1)
    pools = [[s for s, b in zip(subjects, bin_of) if b == k] for k in range(n_bins)]
    for pool in pools:
        rng.shuffle(pool)

    def draw(k):
        if not pools[k]:
            k = max(range(n_bins), key=lambda j: (len(pools[j]), -j))
        return pools[k].pop()

    def bins_for(count):
        if count <= n_bins:
            return sorted(rng.choice(n_bins, size=count, replace=False).tolist())
        return list(range(n_bins)) + [int(x) for x in rng.integers(0, n_bins, count - n_bins)]

    val_subjects = [draw(k) for k in bins_for(n_val)]
    test_subjects = [draw(k) for k in bins_for(n_test)]
    held = set(val_subjects) | set(test_subjects)
    by_subject = dataset.subject_indices()
    return SplitSpec(
        train=[i for s in subjects if s not in held for i in by_subject[s]],
        val=[i for s in val_subjects for i in by_subject[s]],
        test=[i for s in test_subjects for i in by_subject[s]],
        strategy=SplitStrategy.WEIGHT_BINNED,
        seed=seed,
    )


def split_loso(dataset: Dataset, held_subject) -> SplitSpec:
    held_subject = str(held_subject)
    by_subject = dataset.subject_indices()
    if held_subject not in by_subject:
        raise SplitError(f"unknown subject {held_subject!r}")
    test = by_subject[held_subject]
    train = [i for s, idx in by_subject.items() if s != held_subject for i in idx]
    return SplitSpec(sorted(train), (), test, SplitStrategy.LOSO)


def split_random_kfold(dataset: Dataset, k: int = 5, seed: int = 0) -> list:
    """Sample-level k-fold; fold ``f`` tests on the f-th chunk of a seeded permutation."""
    if k < 2:
        raise SplitError(f"k must be at least 2, got {k}")
    n = len(dataset)
    if n < k:
        raise SplitError(f"need at least {k} samples, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for f, test in enumerate(folds):
        train = np.concatenate([folds[j] for j in range(k) if j != f])
        out.append(SplitSpec(sorted(train.tolist()), (), sorted(test.tolist()),
                             SplitStrategy.RANDOM_KFOLD, seed))
    return out


def subjects_of(dataset: Dataset, indices) -> set:
    return {dataset[i].subject_id for i in indices}

