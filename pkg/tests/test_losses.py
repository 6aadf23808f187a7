import math
import time

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from oracles import central_diff, masscon_naive, rel_err, supcon_oracle
from massnet.errors import NumericError
from massnet.losses import (ContrastiveBatch, LossBreakdown, mae_loss, masscon_loss, masscon_loss_tensor,
                            overall_loss, penalty_factor, penalty_matrix, supcon_loss_tensor)


def unit_rows(rng, n, d):
    e = rng.normal(size=(n, d))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def random_batch(rng, n=None):
    n = n or int(rng.integers(2, 9))
    subjects = [f"s{k}" for k in rng.integers(0, max(1, n // 2), size=n)]
    per_subject = {s: float(rng.uniform(40, 105)) for s in set(subjects)}
    return unit_rows(rng, n, int(rng.integers(2, 9))), subjects, [per_subject[s] for s in subjects]


# --- penalty ---------------------------------------------------------------

def test_penalty_values():
    assert penalty_factor(50, 50) == 1.0
    assert abs(penalty_factor(50, 60) - 1.2214027581601699) < 1e-12
    assert abs(penalty_factor(60, 50) - 1.1813604128656459) < 1e-12
    assert penalty_factor(50, 60) != penalty_factor(60, 50)
    with pytest.raises(ValueError):
        penalty_factor(0.0, 50)
    with pytest.raises(ValueError):
        penalty_factor(-3.0, 50)


def test_penalty_matrix_rows_are_anchors():
    m = penalty_matrix([50.0, 60.0])
    assert float(m[0, 1]) == penalty_factor(50, 60)
    assert float(m[1, 0]) == penalty_factor(60, 50)
    assert torch.all(torch.diagonal(m) == 1)


@given(a=st.floats(1, 300), b=st.floats(1, 300))
def test_property_penalty_at_least_one(a, b):
    assert penalty_factor(a, b) >= 1.0


# --- worked examples -------------------------------------------------------

def test_two_samples_same_subject_identical_embeddings():
    b = ContrastiveBatch([[1.0, 0.0], [1.0, 0.0]], ["A", "A"], [70.0, 70.0], tau=0.1)
    assert masscon_loss(b) == 0.0


def test_three_sample_example():
    b = ContrastiveBatch([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], ["A", "A", "B"], [50.0, 50.0, 60.0], tau=1.0)
    per_anchor = math.log1p(math.exp(-1.0))
    assert abs(per_anchor - 0.31326) < 1e-5
    assert abs(masscon_loss(b) - 2 * per_anchor) < 1e-12
    assert abs(masscon_loss(b) - 0.62652) < 1e-5


def test_no_positives_gives_zero():
    rng = np.random.default_rng(0)
    b = ContrastiveBatch(unit_rows(rng, 4, 3), ["a", "b", "c", "d"], [50, 60, 70, 80])
    assert masscon_loss(b) == 0.0


# --- oracle agreement ------------------------------------------------------

def test_oracle_masscon_100_batches():
    rng = np.random.default_rng(42)
    for _ in range(100):
        emb, subj, w = random_batch(rng)
        tau = float(rng.uniform(0.05, 1.0))
        got = masscon_loss(ContrastiveBatch(emb, subj, w, tau))
        ref = masscon_naive(emb, subj, w, tau, penalty=True)
        assert abs(got - ref) <= 1e-6 * max(abs(ref), 1e-12) or (ref == 0 and got == 0)


def test_oracle_supcon_100_batches():
    rng = np.random.default_rng(7)
    for _ in range(100):
        emb, subj, w = random_batch(rng)
        tau = float(rng.uniform(0.05, 1.0))
        got = masscon_loss(ContrastiveBatch(emb, subj, w, tau, penalty_enabled=False))
        assert abs(got - supcon_oracle(emb, subj, tau)) < 1e-9
        # a second, independent route: the naive sum with the penalty switched off
        assert abs(got - masscon_naive(emb, subj, w, tau, penalty=False)) < 1e-9


def test_equal_weights_reduce_to_supcon():
    rng = np.random.default_rng(3)
    emb = unit_rows(rng, 6, 4)
    subj = ["a", "a", "b", "b", "c", "c"]
    on = masscon_loss(ContrastiveBatch(emb, subj, [65.0] * 6, 0.2))
    off = masscon_loss(ContrastiveBatch(emb, subj, [65.0] * 6, 0.2, penalty_enabled=False))
    assert on == pytest.approx(off, rel=1e-12)
    t = torch.from_numpy(emb)
    assert float(supcon_loss_tensor(t, subj, 0.2)) == pytest.approx(off, rel=1e-12)


@given(seed=st.integers(0, 2 ** 31 - 1))
def test_property_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    emb, subj, w = random_batch(rng)
    perm = rng.permutation(len(subj))
    a = masscon_loss(ContrastiveBatch(emb, subj, w))
    b = masscon_loss(ContrastiveBatch(emb[perm], [subj[k] for k in perm], [w[k] for k in perm]))
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


@given(seed=st.integers(0, 2 ** 31 - 1))
def test_property_nonnegative(seed):
    emb, subj, w = random_batch(np.random.default_rng(seed))
    assert masscon_loss(ContrastiveBatch(emb, subj, w)) >= 0.0


def test_small_temperature_stays_finite():
    rng = np.random.default_rng(5)
    emb = unit_rows(rng, 8, 3)
    subj = ["a", "b"] * 4
    w = [40.0, 105.0] * 4
    for tau in (0.05, 0.01):
        got = masscon_loss(ContrastiveBatch(emb, subj, w, tau))
        assert math.isfinite(got)
        assert got == pytest.approx(masscon_naive(emb, subj, w, tau), rel=1e-6)


# --- gradients -------------------------------------------------------------

def test_gradient_wrt_embeddings():
    rng = np.random.default_rng(11)
    for n, subj in ((4, ["a", "a", "b", "b"]), (6, ["a", "a", "a", "b", "c", "c"])):
        emb = rng.normal(size=(n, 5))
        w = list(rng.uniform(40, 105, size=n))
        t = torch.tensor(emb, requires_grad=True)
        masscon_loss_tensor(t, subj, w, 0.1).backward()
        numeric = central_diff(lambda v: float(masscon_loss_tensor(torch.from_numpy(v), subj, w, 0.1)), emb)
        assert rel_err(t.grad.numpy(), numeric) < 1e-4


def test_gradient_through_normalisation():
    rng = np.random.default_rng(12)
    raw = rng.normal(size=(4, 3))
    subj = ["a", "a", "b", "b"]
    w = [50.0, 50.0, 80.0, 80.0]

    def f(v):
        v = torch.as_tensor(v)
        return masscon_loss_tensor(v / v.norm(dim=1, keepdim=True), subj, w, 0.1)

    t = torch.tensor(raw, requires_grad=True)
    f(t).backward()
    numeric = central_diff(lambda v: float(f(torch.from_numpy(v))), raw)
    assert rel_err(t.grad.numpy(), numeric) < 1e-4


# --- validation ------------------------------------------------------------

def test_batch_validation():
    with pytest.raises(ValueError):
        ContrastiveBatch([[1.0, 0.0]], ["a"], [50.0])
    with pytest.raises(ValueError):
        ContrastiveBatch([[1.0, 0.0], [0.0, 1.0]], ["a"], [50.0, 50.0])
    with pytest.raises(ValueError):
        ContrastiveBatch([[1.0, 0.0], [0.0, 1.0]], ["a", "a"], [50.0, 50.0], tau=0.0)
    with pytest.raises(ValueError, match="unit"):
        ContrastiveBatch([[2.0, 0.0], [0.0, 1.0]], ["a", "a"], [50.0, 50.0])
    with pytest.raises(NumericError):
        ContrastiveBatch([[np.nan, 0.0], [0.0, 1.0]], ["a", "a"], [50.0, 50.0])
    with pytest.raises(ValueError):
        masscon_loss_tensor(torch.eye(2, dtype=torch.float64), ["a", "a"], [0.0, 50.0])


# --- MAE and total ---------------------------------------------------------

def test_mae_cases():
    assert mae_loss([55.0], [50.0]) == 5.0
    assert mae_loss([50.0, 70.0], [55.0, 60.0]) == 7.5
    assert mae_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    t = mae_loss(torch.tensor([3.0, -1.0], requires_grad=True), torch.tensor([1.0, 1.0]))
    assert torch.is_tensor(t) and t.item() == 2.0
    with pytest.raises(ValueError):
        mae_loss([], [])
    with pytest.raises(ValueError):
        mae_loss([1.0, 2.0], [1.0])


@given(p=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), c=st.floats(-50, 50))
def test_property_mae_offset(p, c):
    assert mae_loss(np.array(p) + c, p) == pytest.approx(abs(c), abs=1e-9)


def test_overall_loss():
    out = overall_loss(2.0, 4.0, 0.25)
    assert isinstance(out, LossBreakdown)
    assert out.l_all == 3.0
    assert overall_loss(2.0, 4.0, 0.0).l_all == 2.0
    assert overall_loss(2.0, 4.0).lam == 0.25
    with pytest.raises(ValueError):
        overall_loss(2.0, 4.0, -0.1)
    t = overall_loss(torch.tensor(2.0), torch.tensor(4.0), 0.25)
    assert torch.is_tensor(t) and float(t) == 3.0


def test_oracle_runtime_budget():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    for _ in range(100):
        emb, subj, w = random_batch(rng, 8)
        masscon_loss(ContrastiveBatch(emb, subj, w))
    assert time.perf_counter() - start < 10.0
