import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onepass_ntk import data as ds
from onepass_ntk.errors import DegenerateStateError, DimensionError, DomainError, FormatError
from onepass_ntk.network import (Constant, InverseTime, NetworkState, forward, init_iid, init_symmetric,
                                 load_checkpoint, save_checkpoint, sgd_step, step_identity_rhs, weight_drift)
from onepass_ntk.rng import stream


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_init_iid_contract():
    s = init_iid(4, 3, seed=5)
    assert s.W.shape == (4, 3) and s.t == 0
    assert np.array_equal(s.W, s.W0) and set(np.unique(s.a)) <= {-1.0, 1.0}
    again = init_iid(4, 3, seed=5)
    assert np.array_equal(again.W0, s.W0) and np.array_equal(again.a, s.a)


def test_init_iid_gaussian_mean():
    s = init_iid(100_000, 10, seed=1)
    assert abs(s.W0.mean()) < 0.01


def test_init_rejects_bad_dims():
    with pytest.raises(DimensionError):
        init_iid(0, 3, 0)
    with pytest.raises(DimensionError):
        init_symmetric(5, 3, 0)


def test_symmetric_structure():
    s = init_symmetric(10, 4, seed=2)
    assert np.array_equal(s.W0[:5], s.W0[5:])
    assert np.all(s.a[:5] * s.a[5:] == -1)
    xs = ds.sample_sphere(4, stream(2, "probe"), 100)
    assert np.max(np.abs(forward(s, xs))) < 1e-12


def test_frozen_arrays_are_read_only():
    s = init_iid(4, 3, 0)
    with pytest.raises(ValueError):
        s.W0[0, 0] = 1.0
    with pytest.raises(ValueError):
        s.a[0] = 0.0


def test_forward_hand_values():
    x = unit([1.0, 2.0, 2.0])
    s = NetworkState(x[None, :].copy(), x[None, :].copy(), np.array([1.0]))
    assert forward(s, x) == pytest.approx(1.0)
    s = NetworkState(-x[None, :], -x[None, :], np.array([1.0]))
    assert forward(s, x) == 0.0


def test_forward_unit_norm_policy():
    s = init_iid(4, 3, 0)
    with pytest.raises(DomainError):
        forward(s, np.array([1.0, 1.0, 0.0]))
    v = np.array([3.0, 0.0, 4.0])
    assert forward(s, v, normalize=True) == pytest.approx(forward(s, v / 5))


def test_schedules():
    assert InverseTime(0.2).eta(0) == 0.2 and InverseTime(0.2).eta(1) == 0.1
    assert Constant(0.2).eta(77) == 0.2
    with pytest.raises(DomainError):
        InverseTime(0.25)
    with pytest.raises(DomainError):
        Constant(2.0)


def test_zero_residual_step_is_noop():
    s = init_symmetric(8, 3, 1)
    x = unit([1, -1, 0.5])
    W = s.W.copy()
    rep = sgd_step(s, x, forward(s, x), 0.2)
    assert rep.frob_delta == 0.0 and np.array_equal(s.W, W) and s.t == 1


def test_inactive_rows_untouched_and_rank_one():
    s = init_iid(50, 4, 3)
    x = unit([0.3, -0.2, 0.9, 0.1])
    before = s.W.copy()
    inactive = before @ x < 0
    sgd_step(s, x, 1.5, 0.5)
    assert np.array_equal(s.W[inactive], before[inactive])
    delta = s.W - before
    assert np.linalg.matrix_rank(delta, tol=1e-12) <= 1
    rows = delta[~inactive]
    assert np.allclose(rows - np.outer(rows @ x, x), 0, atol=1e-14)


def test_frobenius_identity_seeded_run():
    s = init_iid(8, 3, 4)
    rng = stream(4, "train")
    for _ in range(200):
        x = ds.sample_sphere(3, rng)
        rep = sgd_step(s, x, rng.standard_normal(), 0.3)
        rhs = step_identity_rhs(rep, s.m)
        if rhs:
            assert abs(rep.frob_delta - rhs) <= 1e-12 * rhs


def test_weight_drift():
    s = init_iid(16, 3, 0)
    assert weight_drift(s) == (0.0, 0.0)
    rng = stream(0, "train")
    total = 0.0
    for k in range(30):
        rep = sgd_step(s, ds.sample_sphere(3, rng), 1.0, 0.2)
        if k == 0:
            assert weight_drift(s)[0] == pytest.approx(rep.frob_delta, rel=1e-12)
        total += rep.eta * abs(rep.residual)
    assert weight_drift(s)[0] <= total
    zero = NetworkState(np.zeros((2, 2)), np.zeros((2, 2)), np.ones(2))
    with pytest.raises(DegenerateStateError):
        weight_drift(zero)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.01, 100), seed=st.integers(0, 2**31))
def test_positive_scaling_preserves_patterns(c, seed):
    s = init_iid(20, 4, seed)
    xs = ds.sample_sphere(4, stream(seed, "probe"), 10)
    assert np.array_equal(xs @ s.W.T >= 0, xs @ (c * s.W).T >= 0)


def test_checkpoint_round_trip(tmp_path):
    s = init_symmetric(6, 3, 9)
    rng = stream(9, "train")
    sgd_step(s, ds.sample_sphere(3, rng), 0.7, 0.1)
    p = save_checkpoint(tmp_path / "ck.npz", s, {"train": rng})
    back, gens = load_checkpoint(p)
    assert np.array_equal(back.W, s.W) and np.array_equal(back.W0, s.W0) and back.t == 1
    assert gens["train"].random() == rng.random()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "bad.npz"
    np.savez(p, W=np.zeros((2, 2)))
    with pytest.raises(FormatError):
        load_checkpoint(p)
