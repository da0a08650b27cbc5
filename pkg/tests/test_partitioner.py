from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmwm.numerics import make_rng, solve_discrete_lyapunov
from hmwm.partitioner import (
    Partition,
    SteadyStats,
    build_partition,
    classify,
    classify_many,
    fixed_point_residual,
    slab_boundaries,
    steady_stats,
)
from hmwm.plant_loop import PlantModel
from tests.conftest import REF_A_WU, REF_B_WU


def iso(mu, S):
    return SteadyStats(None, None, None, None, None, np.asarray(mu, float), np.asarray(S, float))


def test_noise_free_fixed_point(plant, ctrl):
    quiet = plant.scaled_noise(0.0)
    A_wu, B_wu = np.array([[0.5]]), np.array([[1.0, 1.0]])
    stt = steady_stats(quiet, ctrl, A_wu, B_wu)
    np.testing.assert_allclose(stt.mu_xp, ctrl.x_ref, atol=1e-9)
    y = plant.C @ ctrl.x_ref
    np.testing.assert_allclose(stt.mu_xu, [(y[0] + y[1]) / 0.5], atol=1e-9)


def test_scalar_chain_variance():
    # x+ = 0.5 x + y, var(y) = s2  =>  var(x) = s2 / 0.75
    S = solve_discrete_lyapunov(np.array([[0.5]]), np.array([[0.3]]))
    assert S[0, 0] == pytest.approx(0.3 / 0.75, rel=1e-12)


def test_fixed_point_residual_small(plant, ctrl):
    stt = steady_stats(plant, ctrl, REF_A_WU, REF_B_WU)
    assert fixed_point_residual(stt, plant, ctrl, REF_A_WU, REF_B_WU) <= 1e-10


def test_reference_filter_statistics(plant, ctrl):
    stt = steady_stats(plant, ctrl, REF_A_WU, REF_B_WU)
    # driven directly by the analytic output distribution
    rng = make_rng(5)
    T = 100_000
    y = rng.multivariate_normal(stt.mu_yp, stt.Sigma_yp, size=T)
    x = np.zeros(2)
    xs = np.empty((T, 2))
    for k in range(T):
        xs[k] = x
        x = REF_A_WU @ x + REF_B_WU @ y[k]
    xs = xs[1000:]
    np.testing.assert_allclose(xs.mean(axis=0), stt.mu_xu, rtol=0.1)
    emp = np.cov(xs, rowvar=False)
    assert np.linalg.norm(emp - stt.Sigma_xu) <= 0.1 * np.linalg.norm(stt.Sigma_xu)


def test_unstable_closed_loop_rejected(plant, ctrl):
    with pytest.raises(ValueError):
        steady_stats(plant, ctrl, np.array([[1.1]]), np.array([[1.0, 0.0]]))


def test_two_cells_split_at_median():
    part = build_partition(iso([2.0], [[4.0]]), 2)
    assert classify(part, np.array([1.9])) == 0
    assert classify(part, np.array([2.1])) == 1
    assert classify(part, np.array([2.0])) == 0


def test_four_sector_quadrants():
    part = build_partition(iso([0.0, 0.0], np.eye(2)), 4)
    assert classify(part, np.array([1.0, 1.0])) == 0
    assert classify(part, np.array([-1.0, 1.0])) == 1
    assert classify(part, np.array([-1.0, -1.0])) == 2
    assert classify(part, np.array([1.0, -1.0])) == 3


def test_six_sectors_by_angle():
    part = build_partition(iso([0.0, 0.0], np.eye(2)), 6)
    for j in range(6):
        t = 2 * np.pi * (j + 0.5) / 6
        assert classify(part, np.array([np.cos(t), np.sin(t)])) == j


def test_mean_goes_to_first_cell():
    for N in (2, 3, 6, 11):
        part = build_partition(iso([0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]]), N)
        assert classify(part, part.mean) == 0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), N=st.integers(1, 12))
def test_cells_cover_and_first_match_wins(seed, N):
    rng = make_rng(seed)
    L = rng.standard_normal((2, 2))
    S = L @ L.T + 0.1 * np.eye(2)
    part = build_partition(iso(rng.standard_normal(2), S), N)
    pts = part.mean + 3 * rng.standard_normal((200, 2))
    member = part.raw_membership(pts)
    assert member.any(axis=1).all()
    brute = np.array([next(j for j in range(N) if member[i, j]) for i in range(len(pts))])
    np.testing.assert_array_equal(classify_many(part, pts), brute)
    np.testing.assert_array_equal([classify(part, p) for p in pts], brute)


@pytest.mark.parametrize("N", [2, 3, 5, 8])
def test_slab_boundaries_match_normal_quantiles(N):
    q = slab_boundaries(1.5, 0.7, N)
    ref = [NormalDist(1.5, 0.7).inv_cdf(j / N) for j in range(1, N)]
    np.testing.assert_allclose(q, ref, atol=1e-8)


def test_slab_frequencies(rng):
    part = build_partition(iso([1.0], [[0.25]]), 5)
    pts = 1.0 + 0.5 * rng.standard_normal((50_000, 1))
    freq = np.bincount(classify_many(part, pts), minlength=5) / 50_000
    assert np.all(np.abs(freq - 0.2) <= 4 * np.sqrt(0.2 * 0.8 / 50_000))


def test_partition_dict_round_trip():
    part = build_partition(iso([0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]]), 6)
    back = Partition.from_dict(part.to_dict())
    for (H, h), (H2, h2) in zip(part.cells, back.cells):
        np.testing.assert_array_equal(H, H2)
        np.testing.assert_array_equal(h, h2)


def test_three_dimensional_state_unsupported():
    with pytest.raises(ValueError):
        build_partition(iso(np.zeros(3), np.eye(3)), 4)
