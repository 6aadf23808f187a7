import os
import sys

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from massnet.data import Dataset, FormatId, JointSet, Posture, PressureFrame, Sample  # noqa: E402
from massnet.network import ModelConfig  # noqa: E402
from massnet.preprocess import PreprocessConfig  # noqa: E402
from massnet.synthetic import Grid, generate_dataset  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_num_threads(1)

# acceptance results collected by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)


def make_sample(values, subject="s0", weight=60.0, posture=Posture.SUPINE, joints=None, timestamp=None):
    j = None if joints is None else JointSet(np.asarray(joints, dtype=float))
    return Sample(PressureFrame(np.asarray(values, dtype=float)), subject, weight, posture, j, timestamp)


def toy_dataset(n_subjects=10, per_subject=3, seed=0, rows=6, cols=5):
    """Random frames, subject weights spread over 40..105 kg."""
    rng = np.random.default_rng(seed)
    weights = np.linspace(40, 105, n_subjects)
    rng.shuffle(weights)
    samples = []
    for k in range(n_subjects):
        for f in range(per_subject):
            samples.append(make_sample(rng.random((rows, cols)), f"s{k:03d}", float(weights[k]),
                                       [Posture.SUPINE, Posture.LEFT_SIDE, Posture.RIGHT_SIDE][f % 3]))
    return Dataset(samples, FormatId.SYNTHETIC)


# a small grid keeps CPU training in the tests fast
SMALL_GRID = Grid.sized(28, 20)


def small_pcfg(**kw):
    return PreprocessConfig(**{"upsample_factor": 1, "target_rows": 32, "target_cols": 32, **kw})


def tiny_model_cfg(**kw):
    base = dict(n_sensing_layers=1, stem_channels=8, trunk_channels=16, bottleneck_ratio=2.0,
                deep_feature_dim=16, joint_feature_dim=16, joint_hidden=(16, 16), embedding_dim=8,
                input_rows=32, input_cols=32)
    return ModelConfig(**{**base, **kw})


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_dataset(n_subjects=8, frames_per_subject=4, grid=SMALL_GRID, sensor="saturating", seed=5)
