import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import SMALL_GRID
from massnet.data import Posture, split_weight_binned
from massnet.errors import GenerationError
from massnet.evaluation import LinearFitBaseline, compute_metrics
from massnet.synthetic import (Grid, SensorModel, apply_sensor_model, generate_dataset, make_body, peak_cap,
                               render_body, synthesize_sample, synthesize_session)


def body(weight=60.0, posture=Posture.SUPINE, seed=0, grid=Grid()):
    return make_body(weight, 1.72, posture, grid, np.random.default_rng(seed))


@pytest.mark.parametrize("weight", [40.0, 60.0, 104.9])
def test_frame_sum_equals_weight(weight):
    s = synthesize_sample(body(weight))
    assert s.frame.shape == (56, 40)
    assert abs(math.fsum(s.frame.values.ravel()) - weight) < 1e-9
    assert s.weight_kg == weight
    assert (s.frame.values >= 0).all()


def test_postures_differ_with_same_sum():
    frames = {p: synthesize_sample(body(60.0, p)).frame.values for p in Posture}
    for p, v in frames.items():
        assert abs(v.sum() - 60.0) < 1e-9
    assert not np.allclose(frames[Posture.SUPINE], frames[Posture.LEFT_SIDE])
    assert not np.allclose(frames[Posture.LEFT_SIDE], frames[Posture.RIGHT_SIDE])


def test_joints_inside_frame():
    s = synthesize_sample(body())
    assert s.joints.J == 14
    assert not s.joints.outside(56, 40).any()


def test_generation_is_deterministic():
    a = generate_dataset(4, 3, grid=SMALL_GRID, sensor="saturating", seed=9)
    b = generate_dataset(4, 3, grid=SMALL_GRID, sensor="saturating", seed=9)
    for x, y in zip(a, b):
        assert np.array_equal(x.frame.values, y.frame.values)
        assert x.weight_kg == y.weight_kg and x.posture == y.posture
    c = generate_dataset(4, 3, grid=SMALL_GRID, sensor="saturating", seed=10)
    assert not np.array_equal(a[0].frame.values, c[0].frame.values)


def test_out_of_frame_is_generation_error():
    tiny = Grid.sized(10, 10, length_m=0.6, width_m=0.3)
    with pytest.raises(GenerationError):
        render_body(make_body(70, 1.8, Posture.SUPINE, tiny, np.random.default_rng(0)), tiny)


def test_dataset_weights_and_subjects():
    ds = generate_dataset(20, 3, grid=SMALL_GRID, seed=1)
    w = ds.subject_weights()
    assert len(w) == 20 and len(ds) == 60
    assert all(40.0 <= v <= 105.0 for v in w.values())
    assert [s.posture for s in ds.samples[:3]] == [Posture.SUPINE, Posture.LEFT_SIDE, Posture.RIGHT_SIDE]


# --- sensor model ----------------------------------------------------------

def test_identity_sensor():
    v = np.random.default_rng(0).random((4, 6, 5))
    assert np.array_equal(apply_sensor_model(v, SensorModel.ideal()), v)
    assert np.array_equal(apply_sensor_model(v[0], SensorModel()), v[0])


def test_cap_reduces_sum():
    v = synthesize_sample(body(80.0)).frame.values
    cap = peak_cap([v], 100.0) * 0.5
    out = apply_sensor_model(v, SensorModel(saturation_cap=cap))
    assert out.max() == cap
    assert out.sum() < v.sum()


def test_hysteresis_step_response():
    seq = np.ones((6, 2, 2))
    seq[0] = 0.0
    out = apply_sensor_model(seq, SensorModel(hysteresis_retention=0.5))
    assert out[:, 0, 0].tolist() == [0.0, 0.5, 0.75, 0.875, 0.9375, 0.96875]


@given(r=st.floats(0.0, 0.95), n=st.integers(1, 30))
def test_property_hysteresis_closed_form(r, n):
    # constant unit input from rest: out_t = 1 - r^(t+1)
    out = apply_sensor_model(np.ones((n, 1, 1)), SensorModel(hysteresis_retention=r))[:, 0, 0]
    ref = 1.0 - r ** (np.arange(n) + 1.0)
    assert np.allclose(out, ref, atol=1e-12)


def test_noise_is_seeded_and_clipped():
    v = np.zeros((8, 8))
    sm = SensorModel(noise_sigma=1.0)
    a = apply_sensor_model(v, sm, np.random.default_rng(1))
    b = apply_sensor_model(v, sm, np.random.default_rng(1))
    c = apply_sensor_model(v, sm, np.random.default_rng(2))
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert (a >= 0).all() and (a > 0).any()


def test_sensor_validation():
    with pytest.raises(ValueError):
        SensorModel(saturation_cap=0.0)
    with pytest.raises(ValueError):
        SensorModel(hysteresis_retention=1.0)
    with pytest.raises(ValueError):
        SensorModel(noise_sigma=-1.0)


# --- the two worlds the baselines live in ----------------------------------

def _linear_test_mae(ds):
    spec = split_weight_binned(ds, n_bins=5, seed=0, n_val=5, n_test=10)
    train = [ds[i] for i in spec.train]
    test = [ds[i] for i in spec.test]
    preds = LinearFitBaseline().fit(train).predict(test)
    return compute_metrics(preds, [s.weight_kg for s in test]).mae_mean


def test_ideal_world_is_linear():
    assert _linear_test_mae(generate_dataset(50, 6, sensor="ideal", seed=3)) < 1e-6


def test_saturating_world_is_not():
    assert _linear_test_mae(generate_dataset(50, 6, sensor="saturating", seed=3)) > 1.0


# --- sessions --------------------------------------------------------------

def test_session_structure():
    sess = synthesize_session(n_frames=300, n_movements=4, grid=SMALL_GRID, seed=1)
    assert len(sess.samples) == 300
    assert sess.active.sum() == sum(b - a for a, b in sess.movements)
    for a, b in sess.movements:
        assert sess.active[a:b].all()
    static = ~sess.active
    sums = np.array([s.frame.values.sum() for s in sess.samples])
    assert np.allclose(sums[static], 70.0, atol=1e-9)
    assert sums[sess.active].std() > 0
    assert [s.timestamp for s in sess.samples] == list(range(300))


def test_session_explicit_movements_and_errors():
    sess = synthesize_session(n_frames=100, movements=[(40, 55)], grid=SMALL_GRID, seed=0)
    assert sess.active.tolist() == [40 <= t < 55 for t in range(100)]
    with pytest.raises(GenerationError):
        synthesize_session(n_frames=100, movements=[(90, 120)], grid=SMALL_GRID)
    with pytest.raises(GenerationError):
        synthesize_session(n_frames=30, n_movements=5, movement_len=(10, 10), grid=SMALL_GRID)
