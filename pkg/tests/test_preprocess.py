import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_sample
from oracles import bilinear_oracle, gaussian_oracle
from massnet.data import JointSet, Posture, PressureFrame
from massnet.preprocess import (AugmentOp, Normalization, PreprocessConfig, augment_sample, folded_normal_l1,
                                gaussian_kernel2d, gaussian_smooth, hflip, inject_joint_noise, map_joint_coords,
                                normalize_frame, pad_center, preprocess_batch, preprocess_pipeline, random_augment,
                                rotate, shift, sigma_for_l1, upsample_bilinear)


def frame(v):
    return PressureFrame(np.asarray(v, dtype=float))


# --- upsampling ------------------------------------------------------------

def test_upsample_native_grid():
    out = upsample_bilinear(frame(np.ones((56, 40))), 3)
    assert out.shape == (168, 120)


def test_upsample_identity_factor_one():
    f = frame(np.random.default_rng(0).random((5, 4)))
    assert np.array_equal(upsample_bilinear(f, 1).values, f.values)


def test_upsample_ramp_matches_oracle():
    out = upsample_bilinear(frame([[0, 3], [0, 3]]), 3).values
    ref = bilinear_oracle([[0, 3], [0, 3]], 3)
    assert np.allclose(out, ref, atol=1e-12)
    for row in out:
        assert np.allclose(row, np.linspace(0, 3, 6))


def test_upsample_random_matches_oracle():
    v = np.random.default_rng(1).random((5, 7))
    assert np.allclose(upsample_bilinear(frame(v), 4).values, bilinear_oracle(v, 4), atol=1e-12)


def test_upsample_bad_factor():
    with pytest.raises(ValueError):
        upsample_bilinear(frame(np.ones((2, 2))), 0)


def test_upsample_composition_on_smooth_frame():
    # bilinear is exact on affine surfaces, so a*b composition agrees with one pass
    r, c = np.mgrid[0:6, 0:5]
    f = frame(1.0 + 0.3 * r + 0.7 * c)
    twice = upsample_bilinear(upsample_bilinear(f, 2), 3).values
    once = upsample_bilinear(f, 6).values
    assert np.max(np.abs(twice - once)) < 1e-6


# --- smoothing -------------------------------------------------------------

def test_gaussian_kernel_oracle():
    assert np.allclose(gaussian_kernel2d(5, 1.0), gaussian_oracle(5, 1.0), atol=1e-15)
    assert math.isclose(gaussian_kernel2d(5, 1.0).sum(), 1.0, rel_tol=1e-15)


def test_smooth_constant_preserved():
    out = gaussian_smooth(frame(np.full((7, 9), 2.5)), 5, 1.0).values
    assert np.allclose(out, 2.5, atol=1e-12)


def test_smooth_impulse_gives_kernel():
    v = np.zeros((11, 11))
    v[5, 5] = 1.0
    out = gaussian_smooth(frame(v), 5, 1.0).values
    assert np.allclose(out[3:8, 3:8], gaussian_oracle(5, 1.0), atol=1e-15)
    assert math.isclose(out.sum(), 1.0, rel_tol=1e-9)
    assert np.all(out >= 0)


def test_smooth_even_kernel_rejected():
    with pytest.raises(ValueError):
        gaussian_smooth(frame(np.ones((5, 5))), 4, 1.0)
    with pytest.raises(ValueError):
        PreprocessConfig(gaussian_kernel=4)


# --- padding and normalisation ---------------------------------------------

def test_pad_center_margins():
    v = np.random.default_rng(2).random((168, 120))
    out = pad_center(frame(v), 192, 192).values
    assert out.shape == (192, 192)
    assert np.array_equal(out[12:180, 36:156], v)
    assert out[:12].sum() == 0 and out[180:].sum() == 0
    assert out[:, :36].sum() == 0 and out[:, 156:].sum() == 0
    assert math.fsum(out.ravel()) == math.fsum(v.ravel())


def test_pad_odd_remainder_bottom_right():
    out = pad_center(frame(np.ones((2, 3))), 5, 6).values
    assert np.array_equal(np.argwhere(out).min(0), [1, 1])
    assert np.array_equal(np.argwhere(out).max(0), [2, 3])


def test_pad_identity_and_too_large():
    v = np.random.default_rng(0).random((192, 192))
    assert np.array_equal(pad_center(frame(v), 192, 192).values, v)
    with pytest.raises(ValueError):
        pad_center(frame(np.ones((193, 2))), 192, 192)


def test_normalize_modes():
    v = np.zeros((4, 4))
    v[1, 2] = 200.0
    assert normalize_frame(frame(v), Normalization.PER_DATASET_MAX, 200.0).values.max() == 1.0
    z = normalize_frame(frame(np.zeros((3, 3))), Normalization.PER_FRAME_MAX)
    assert np.array_equal(z.values, np.zeros((3, 3)))
    f = frame(v)
    assert normalize_frame(f, "none") is f
    with pytest.raises(ValueError):
        normalize_frame(f, Normalization.PER_DATASET_MAX, 0.0)
    assert normalize_frame(f, "per_frame_max").values.max() == 1.0


# --- augmentation ----------------------------------------------------------

def impulse_sample(r, c, shape=(20, 16), posture=Posture.LEFT_SIDE):
    v = np.zeros(shape)
    v[r, c] = 5.0
    joints = np.tile([[r, c]], (14, 1)).astype(float)
    return make_sample(v, weight=72.5, posture=posture, joints=joints)


def test_hflip_mirror():
    s = impulse_sample(3, 4)
    out = hflip(s)
    assert np.argwhere(out.frame.values).tolist() == [[3, 16 - 1 - 4]]
    assert np.array_equal(out.joints.coords[0], [3, 11])
    assert out.posture is Posture.RIGHT_SIDE
    assert hflip(impulse_sample(1, 1, posture=Posture.SUPINE)).posture is Posture.SUPINE
    assert out.weight_kg == 72.5


def test_identity_augments():
    s = impulse_sample(5, 5)
    for out in (rotate(s, 0.0), shift(s, 0, 0)):
        assert np.array_equal(out.frame.values, s.frame.values)
        assert np.array_equal(out.joints.coords, s.joints.coords)


def test_shift_impulse():
    out = augment_sample(impulse_sample(10, 10, shape=(40, 40)), AugmentOp.SHIFT, offset=(2, 3))
    assert np.argwhere(out.frame.values).tolist() == [[12, 13]]
    assert np.array_equal(out.joints.coords[0], [12, 13])


def test_shift_zero_fill():
    s = make_sample(np.ones((20, 20)))
    out = shift(s, -2, 1).frame.values
    assert out[-2:].sum() == 0 and out[:, 0].sum() == 0
    assert out[:-2, 1:].min() == 1.0


def test_out_of_bound_params():
    s = impulse_sample(5, 5)
    with pytest.raises(ValueError):
        rotate(s, 15.5)
    with pytest.raises(ValueError):
        shift(s, 3, 0)  # 3 > 0.1 * 20
    with pytest.raises(ValueError):
        augment_sample(s, AugmentOp.ROTATE, angle=-20.0)


@given(r=st.integers(4, 35), c=st.integers(4, 27), dr=st.integers(-4, 4), dc=st.integers(-3, 3))
def test_property_shift_flip_consistency(r, c, dr, dc):
    s = impulse_sample(r, c, shape=(40, 32))
    for out in (hflip(s), shift(s, dr, dc)):
        peak = np.unravel_index(np.argmax(out.frame.values), out.frame.shape)
        assert np.array_equal(peak, out.joints.coords[0])
        assert out.weight_kg == s.weight_kg


@given(r=st.integers(12, 27), c=st.integers(12, 27), angle=st.floats(-15, 15))
def test_property_rotation_within_one_pixel(r, c, angle):
    # a smooth blob keeps the argmax well defined after resampling
    rr, cc = np.mgrid[0:40, 0:40]
    v = np.exp(-((rr - r) ** 2 + (cc - c) ** 2) / 8.0)
    s = make_sample(v, weight=81.0, joints=np.tile([[r, c]], (14, 1)).astype(float))
    out = rotate(s, angle)
    peak = np.array(np.unravel_index(np.argmax(out.frame.values), out.frame.shape), dtype=float)
    assert np.max(np.abs(peak - out.joints.coords[0])) <= 1.0
    assert out.weight_kg == 81.0


def test_rotation_direction_matches_joints():
    # rotation sense: the mass centroid must land where the joint map sends the joint
    rr, cc = np.mgrid[0:41, 0:41]
    v = np.exp(-((rr - 10) ** 2 + (cc - 30) ** 2) / 4.0)
    s = make_sample(v, joints=np.tile([[10.0, 30.0]], (14, 1)))
    out = rotate(s, 15.0)
    w = out.frame.values
    centroid = np.array([(w * rr).sum(), (w * cc).sum()]) / w.sum()
    assert np.max(np.abs(centroid - out.joints.coords[0])) < 0.5


def test_random_augment_label_invariant():
    rng = np.random.default_rng(0)
    s = impulse_sample(10, 8)
    for _ in range(20):
        out = random_augment(s, rng)
        assert out.weight_kg == s.weight_kg and out.subject_id == s.subject_id


# --- joint noise -----------------------------------------------------------

def test_joint_noise_zero_identity_and_negative():
    j = JointSet(np.random.default_rng(0).random((14, 2)))
    assert np.array_equal(inject_joint_noise(j, 0.0, np.random.default_rng(1)).coords, j.coords)
    with pytest.raises(ValueError):
        inject_joint_noise(j, -1.0, np.random.default_rng(1))


def test_joint_noise_calibration():
    sigma = sigma_for_l1(7.45)
    assert math.isclose(sigma, 7.45 / (2 * math.sqrt(2 / math.pi)))
    assert abs(sigma - 4.67) < 0.01
    rng = np.random.default_rng(42)
    j = JointSet(np.zeros((10 ** 5, 2)))
    noisy = inject_joint_noise(j, sigma, rng).coords
    l1 = np.abs(noisy).sum(axis=1).mean()
    assert abs(l1 - 7.45) / 7.45 < 0.02


@pytest.mark.parametrize("sigma", [0.5, 3.0, 10.0])
def test_joint_noise_monte_carlo(sigma):
    rng = np.random.default_rng(int(sigma * 10))
    draws = rng.normal(0, sigma, size=(10 ** 5, 2))
    mc = np.abs(draws).sum(axis=1).mean()
    noisy = inject_joint_noise(JointSet(np.zeros((10 ** 5, 2))), sigma, rng).coords
    measured = np.abs(noisy).sum(axis=1).mean()
    assert abs(measured - folded_normal_l1(sigma)) / folded_normal_l1(sigma) < 0.02
    assert abs(mc - folded_normal_l1(sigma)) / folded_normal_l1(sigma) < 0.02


# --- full pipeline ---------------------------------------------------------

def test_pipeline_native_and_slp_shapes():
    out = preprocess_pipeline(make_sample(np.ones((56, 40))), PreprocessConfig(), dataset_max=1.0)
    assert out.frame.shape == (192, 192)
    assert out.joints.shape == (28,) and not out.joints_present
    assert np.all(out.joints == 0)
    slp = preprocess_pipeline(make_sample(np.ones((192, 84))), PreprocessConfig.for_slp(), dataset_max=1.0)
    assert slp.frame.shape == (192, 192)


def test_joint_chain_arithmetic():
    mapped = map_joint_coords([[28, 20]], (56, 40), PreprocessConfig())
    assert np.allclose(mapped, [[0.5, 0.5]])
    s = make_sample(np.ones((56, 40)), joints=np.tile([[28.0, 20.0]], (14, 1)))
    out = preprocess_pipeline(s, PreprocessConfig(), dataset_max=1.0)
    assert out.joints_present
    assert np.allclose(out.joints, 0.5)


def test_pipeline_order_matches_components():
    rng = np.random.default_rng(3)
    s = make_sample(rng.random((56, 40)) * 9)
    cfg = PreprocessConfig()
    ref = upsample_bilinear(s.frame, 3)
    ref = gaussian_smooth(ref, 5, 1.0)
    ref = pad_center(ref, 192, 192)
    ref = normalize_frame(ref, Normalization.PER_DATASET_MAX, 9.0)
    assert np.array_equal(preprocess_pipeline(s, cfg, 9.0).frame, ref.values)


@given(r=st.floats(-5, 60), c=st.floats(-5, 44))
def test_property_pipeline_output_ranges(r, c):
    s = make_sample(np.ones((56, 40)), joints=np.tile([[r, c]], (14, 1)))
    out = preprocess_pipeline(s, PreprocessConfig(), dataset_max=1.0)
    assert out.frame.shape == (192, 192)
    assert np.all(out.joints >= -0.5) and np.all(out.joints <= 1.5)


def test_batch_shapes():
    frames, joints = preprocess_batch([make_sample(np.ones((56, 40)))] * 3, PreprocessConfig(), 1.0)
    assert frames.shape == (3, 1, 192, 192) and joints.shape == (3, 28)
