import math

import numpy as np
import pytest
from scipy import stats

import oracles
from fkpde import bench, forms
from fkpde.errors import ContractError
from fkpde.estimator import simulate_paths
from fkpde.forms import coef
from fkpde.lea import LeaConfig, accept_segment, choose_theta, propose_segment, simulate_skeleton
from fkpde.problem import Hyperrectangle, PdeProblem, transform

UNIT = Hyperrectangle([0.0], [1.0])


@pytest.mark.parametrize("y,t_rem,theta_max,expected", [
    (0.3, 10.0, 1.0, 0.3),   # nearer face
    (0.5, 10.0, 0.2, 0.2),   # cap
    (0.5, 0.01, 1.0, 0.1),   # sqrt of remaining time
    (0.9, 10.0, 1.0, 0.1),
])
def test_choose_theta_examples(y, t_rem, theta_max, expected):
    assert choose_theta([y], UNIT, t_rem, theta_max) == pytest.approx([expected])


def test_choose_theta_free_space_and_contract():
    free = Hyperrectangle.unbounded(2)
    assert choose_theta([5.0, -3.0], free, 4.0, 3.0) == pytest.approx([2.0, 2.0])
    with pytest.raises(ContractError):
        choose_theta([0.0], UNIT, 1.0, 1.0)
    with pytest.raises(ContractError):
        choose_theta([0.5], UNIT, 0.0, 1.0)


def test_exit_through_face_is_bit_exact():
    rng = np.random.default_rng(1)
    dom = Hyperrectangle([0.0], [0.7])
    y = np.array([0.1])
    theta = choose_theta(y, dom, 100.0, 1.0)
    for _ in range(200):
        p = propose_segment(y, 0.0, 100.0, theta, dom, rng)
        assert p.exit_dim == 0
        assert p.end[0] in (0.0, 0.2)
        if p.side < 0:
            assert p.end[0] == dom.lower[0]


def test_proposal_duration_law_1d():
    rng = np.random.default_rng(2)
    free = Hyperrectangle.unbounded(1)
    theta, t_rem = 0.8, 0.5
    d = np.array([propose_segment([0.0], 0.0, t_rem, [theta], free, rng).duration for _ in range(20_000)])
    p_hit = float(1 - oracles.exit_cdf_unit(t_rem / theta**2)[0])
    n_hit = int(np.sum(d == t_rem))
    assert abs(n_hit / d.size - p_hit) < 4 * math.sqrt(p_hit * (1 - p_hit) / d.size)
    early = d[d < t_rem]
    cdf = lambda s: oracles.exit_cdf_unit(s / theta**2) / oracles.exit_cdf_unit(t_rem / theta**2)[0]
    assert stats.kstest(early, cdf).pvalue > 0.01


def test_proposal_duration_law_2d_is_minimum_of_passages():
    rng = np.random.default_rng(3)
    free = Hyperrectangle.unbounded(2)
    th = np.array([0.5, 1.0])
    d = np.array([propose_segment([0.0, 0.0], 0.0, 1e6, th, free, rng).duration for _ in range(20_000)])
    cdf = lambda s: 1 - (1 - oracles.exit_cdf_unit(s / 0.25)) * (1 - oracles.exit_cdf_unit(s))
    assert stats.kstest(d, cdf).pvalue > 0.01


def test_non_exit_coordinate_follows_killed_law():
    rng = np.random.default_rng(4)
    free = Hyperrectangle.unbounded(1)
    theta, t_rem = 1.0, 0.4
    ends = []
    while len(ends) < 10_000:
        p = propose_segment([0.0], 0.0, t_rem, [theta], free, rng)
        if p.exit_dim < 0:
            ends.append(p.end[0])
    cdf = oracles.cdf_from_density(lambda w: oracles.killed_density(0.0, w, t_rem, theta), theta)
    assert stats.kstest(ends, cdf).pvalue > 0.01


def _driftless(dim=1, domain=None):
    z = [0.0] * dim
    return PdeProblem(dim, coef(forms.drift_constant, z), coef(forms.diffusion_constant_diag, [1.0] * dim),
                      coef(forms.data_constant, [1.0]), boundary=coef(forms.data_constant, [0.0]) if domain else None,
                      domain=domain)


def test_zero_drift_always_accepts():
    sde = transform(_driftless(), [0.0], 1.0)
    rng = np.random.default_rng(5)
    free = Hyperrectangle.unbounded(1)
    for _ in range(500):
        p = propose_segment([0.0], 0.0, 1.0, [0.7], free, rng)
        assert accept_segment(p, sde, rng=rng)


def test_acceptance_rate_matches_girsanov_weight():
    # constant drift a: accept w.p. exp(a (W - theta) - a^2 tau / 2) given the proposal
    pr = PdeProblem(1, coef(forms.drift_constant, [0.8]), coef(forms.diffusion_constant_diag, [1.0]),
                    coef(forms.data_constant, [1.0]))
    sde = transform(pr, [0.0], 1.0)
    rng = np.random.default_rng(6)
    free = Hyperrectangle.unbounded(1)
    props = [propose_segment([0.0], 0.0, 1.0, [1.0], free, rng) for _ in range(20_000)]
    acc = np.array([accept_segment(p, sde, rng=rng) for p in props], dtype=float)
    # for constant alpha, phi is constant so thinning never rejects
    expect = np.mean([math.exp(0.8 * (p.end[0] - p.start[0] - 1.0) - 0.32 * p.duration) for p in props])
    assert abs(acc.mean() - expect) < 4 * acc.std() / math.sqrt(acc.size)


def test_skeleton_invariants():
    pr = bench.poisson_drift_2d()
    sde = transform(pr, [0.3, 0.6], 2.0)
    rng = np.random.default_rng(7)
    for _ in range(200):
        sk = simulate_skeleton(sde, pr, rng)
        times = sk.times()
        assert times[0] == 0.0 and np.all(np.diff(times) > 0) and sk.t_hat <= 2.0
        for a, b in zip(sk.segments, sk.segments[1:]):
            assert a.s1 == pytest.approx(b.s0, abs=1e-14)
            assert np.array_equal(a.end, b.start)
        for s in sk.segments:
            assert np.all(np.abs(s.end - s.start) <= s.theta * (1 + 1e-12))
            assert np.all((s.point_times > s.s0) & (s.point_times < s.s1))
            assert np.all(np.abs(s.point_values - s.start) < s.theta)
        if sk.absorbed:
            k, side = sk.face
            face = sde.domain.upper[k] if side > 0 else sde.domain.lower[k]
            assert sk.end[k] == face
        else:
            assert sk.t_hat == 2.0


def test_absorbed_end_points_lie_on_faces_in_original_coordinates():
    pr = bench.adv_diff_1d(0.01, 0.2)
    out = simulate_paths(pr, [0.9], 5.0, 2000, seed=3)
    ab = out["absorbed"]
    assert ab.any() and (~ab).any()
    assert set(np.unique(out["end"][ab, 0])) <= {0.0, 1.0}
    assert np.all(out["t_hat"][~ab] == 5.0)


def test_skeleton_reproducible_and_buffer_growth():
    pr = bench.adv_diff_1d(0.01, 0.4)
    sde = transform(pr, [0.9], 5.0)
    a = simulate_skeleton(sde, pr, 11)
    b = simulate_skeleton(sde, pr, 11, capacity=1)
    assert a.t_hat == b.t_hat and np.array_equal(a.end, b.end)
    assert len(a.segments) == len(b.segments)


def test_custom_theta_max_is_respected():
    pr = bench.adv_diff_1d(0.01, 0.1)
    sde = transform(pr, [0.5], 1.0)
    sk = simulate_skeleton(sde, pr, 3, LeaConfig(theta_max=0.05))
    assert max(float(s.theta.max()) for s in sk.segments) <= 0.05
