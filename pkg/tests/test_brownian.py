import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from fkpde.brownian import (
    ConditionedSegment,
    exit_time_cdf,
    sample_bridge_inside,
    sample_brownian_bridge,
    sample_exit_conditioned,
    sample_fpt_many,
    sample_fpt_symmetric,
    sample_interior_point,
    sample_killed_endpoint,
    sample_terminal_below_barrier,
)
from fkpde.errors import ContractError


def ks_against(samples, cdf):
    return stats.kstest(samples, cdf).pvalue


def test_fpt_mean_is_theta_squared():
    theta = 0.7
    times, _ = sample_fpt_many(theta, 200_000, np.random.default_rng(1))
    # Var(T) = 2/3 theta^4 for exit from (-theta, theta)
    se = math.sqrt(2.0 / 3.0) * theta**2 / math.sqrt(times.size)
    assert abs(times.mean() - theta**2) < 4 * se


def test_fpt_matches_series_cdf():
    times, _ = sample_fpt_many(1.0, 50_000, np.random.default_rng(2))
    assert ks_against(times, oracles.exit_cdf_unit) > 0.01


def test_exit_time_cdf_matches_reference_series():
    x = np.array([0.03, 0.1, 0.64, 1.0, 3.0])
    assert np.allclose(exit_time_cdf(x), oracles.exit_cdf_unit(x), atol=1e-12)
    assert np.allclose(exit_time_cdf(4 * x, theta=2.0), exit_time_cdf(x), atol=1e-14)


def test_exit_sides_balanced():
    _, sides = sample_fpt_many(1.3, 100_000, np.random.default_rng(3))
    assert set(np.unique(sides)) == {-1.0, 1.0}
    assert abs(sides.mean()) < 4 / math.sqrt(sides.size)


def test_brownian_scaling_of_single_draw():
    a = sample_fpt_symmetric(1.0, np.random.default_rng(9))
    b = sample_fpt_symmetric(0.3, np.random.default_rng(9))
    assert b.time == pytest.approx(0.09 * a.time, rel=1e-14)
    assert a.side == b.side and b.theta == 0.3


def test_fpt_rejects_non_positive_width():
    with pytest.raises(ContractError):
        sample_fpt_symmetric(0.0, 1)


def test_brownian_bridge_moments():
    rng = np.random.default_rng(4)
    t0, x0, t1, x1, s = 0.5, 1.0, 2.5, -1.0, 1.0
    v = np.array([sample_brownian_bridge(t0, x0, t1, x1, s, rng) for _ in range(40_000)])
    mean = x0 + (s - t0) / (t1 - t0) * (x1 - x0)
    var = (s - t0) * (t1 - s) / (t1 - t0)
    assert abs(v.mean() - mean) < 4 * math.sqrt(var / v.size)
    assert abs(v.var() / var - 1) < 0.04
    assert sample_brownian_bridge(t0, x0, t1, x1, t1, rng) == x1


def test_brownian_bridge_contract():
    with pytest.raises(ContractError):
        sample_brownian_bridge(1.0, 0.0, 1.0, 0.0, 1.0, 0)
    with pytest.raises(ContractError):
        sample_brownian_bridge(0.0, 0.0, 1.0, 0.0, 2.0, 0)


@pytest.mark.parametrize("w0,dt", [(0.0, 0.05), (0.6, 0.4), (-0.2, 3.0)])
def test_killed_endpoint_law(w0, dt):
    theta = 1.0
    rng = np.random.default_rng(5)
    s = np.array([sample_killed_endpoint(rng, theta, w0, dt) for _ in range(20_000)])
    cdf = oracles.cdf_from_density(lambda w: oracles.killed_density(w0, w, dt, theta), theta)
    assert ks_against(s, cdf) > 0.01


@pytest.mark.parametrize("w1,dt1,dt2,side", [(0.0, 0.3, 0.2, 1), (0.4, 0.05, 1.5, -1), (-0.3, 2.0, 2.0, 1)])
def test_exit_conditioned_law(w1, dt1, dt2, side):
    theta = 1.0
    rng = np.random.default_rng(6)
    s = np.array([sample_exit_conditioned(rng, theta, w1, dt1, dt2, float(side)) for _ in range(20_000)])

    def dens(w):
        return oracles.killed_density(w1, w, dt1, theta) * oracles.exit_density(w, dt2, theta, side)

    assert ks_against(s, oracles.cdf_from_density(dens, theta)) > 0.01


@pytest.mark.parametrize("w1,dt1,w2,dt2", [(0.0, 0.1, 0.5, 0.1), (-0.8, 1.0, 0.8, 2.0)])
def test_bridge_inside_law(w1, dt1, w2, dt2):
    theta = 1.0
    rng = np.random.default_rng(7)
    s = np.array([sample_bridge_inside(rng, theta, w1, dt1, w2, dt2) for _ in range(20_000)])

    def dens(w):
        return oracles.killed_density(w1, w, dt1, theta) * oracles.killed_density(w2, w, dt2, theta)  # symmetric kernel

    assert ks_against(s, oracles.cdf_from_density(dens, theta)) > 0.01


def test_terminal_below_barrier_against_grid_rejection():
    # brute force: discretised paths conditioned on a near-given exit time
    theta, varsigma, t_target, side = 1.0, 0.8, 0.5, 1
    rng = np.random.default_rng(8)
    steps, dt = 200, 0.8 / 200
    kept = []
    while len(kept) < 2000:
        w = np.cumsum(rng.normal(0, math.sqrt(dt), size=(20_000, steps + 40)), axis=1)
        out = np.abs(w) >= theta
        first = np.where(out.any(axis=1), out.argmax(axis=1), -1)
        ok = (first >= steps - 8) & (first <= steps + 8)
        ok &= np.sign(w[np.arange(w.shape[0]), first]) == side
        kept.extend(w[ok, int(t_target / dt) - 1])
    brute = np.array(kept)
    exact = np.array([sample_terminal_below_barrier(theta, varsigma, t_target, side, rng) for _ in range(20_000)])
    # coarse grid: compare means and spreads, not the full law
    assert abs(brute.mean() - exact.mean()) < 4 * brute.std() / math.sqrt(brute.size) + 0.03
    assert abs(brute.std() / exact.std() - 1) < 0.1


def test_terminal_below_barrier_contract():
    with pytest.raises(ContractError):
        sample_terminal_below_barrier(1.0, 0.5, 0.5, 1, 0)
    with pytest.raises(ContractError):
        sample_terminal_below_barrier(1.0, 1.0, 0.5, 0, 0)


def test_conditioned_segment_is_consistent():
    rng = np.random.default_rng(10)
    seg = ConditionedSegment(0.5, 1.0, 0.5, 1)
    a = sample_interior_point(0.5, 1.0, 1, 0.7, rng, seg)
    b = sample_interior_point(0.5, 1.0, 1, 0.2, rng, seg)
    assert seg.times == [0.2, 0.7]
    assert seg.sample(0.7, rng) == a and seg.sample(0.2, rng) == b
    assert all(-0.5 < v < 0.5 for v in seg.values)
    with pytest.raises(ContractError):
        seg.sample(1.0, rng)


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0.01, 5.0), frac=st.floats(-0.99, 0.99), dt=st.floats(1e-4, 50.0),
       seed=st.integers(0, 2**32 - 1))
def test_conditional_draws_stay_inside(theta, frac, dt, seed):
    rng = np.random.default_rng(seed)
    w0 = frac * theta
    assert -theta < sample_killed_endpoint(rng, theta, w0, dt) < theta
    assert -theta < sample_exit_conditioned(rng, theta, w0, dt, dt, 1.0) < theta
    assert -theta < sample_bridge_inside(rng, theta, w0, dt, -w0, dt) < theta
