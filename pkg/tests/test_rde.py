import math

import numpy as np
import pytest

from ncl.errors import ConvergenceError, IntegrityError
from ncl.kernel import build_kernel
from ncl.rde import (ExtDist, TailPolicy, dominance_margin, fix_from_delta1,
                     fix_from_delta_inf, g_map, inverse_T, mean_identity_check, pgf,
                     pgf_residual, tv)

from conftest import ATOMIC, BETA, STAR

GRID = [i / 10 for i in range(1, 10)]


def star_masses(c, N):
    # coefficients of R = ((1+c) - sqrt((1+c)^2 - 4cx)) / (2c): Catalan numbers
    n = np.arange(1, N + 1)
    logcat = np.array([math.lgamma(2 * k - 1) - math.lgamma(k) - math.lgamma(k + 1) for k in n])
    return np.exp(logcat + (n - 1) * math.log(c) - (2 * n - 1) * math.log1p(c))


def test_star_fixed_point_closed_form():
    c = 0.5
    fp = fix_from_delta1(build_kernel(STAR, c, 300))
    assert fp.converged
    assert np.abs(fp.dist.p[1:] - star_masses(c, 300)).max() < 1e-13
    assert fp.dist.mean() == pytest.approx(1 / (1 - c), rel=1e-10)


def test_star_identities_on_exact_solution():
    c = 0.5
    d = ExtDist.from_masses(star_masses(c, 300))
    assert np.abs(pgf_residual(d, STAR, c, GRID)).max() < 1e-13
    mean, rhs = mean_identity_check(d, STAR, c)
    assert mean == pytest.approx(2.0, rel=1e-12) and rhs == pytest.approx(2.0, rel=1e-12)
    x = 0.3
    exact = ((1 + c) - math.sqrt((1 + c) ** 2 - 4 * c * x)) / (2 * c)
    assert pgf(d, x) == pytest.approx(exact, rel=1e-14)


@pytest.mark.parametrize("c,expected", [(2.0, 0.5), (4.0, 0.75), (0.5, 0.0)])
def test_star_mass_at_infinity(c, expected):
    fp = fix_from_delta_inf(build_kernel(STAR, c, 100))
    assert fp.dist.p_inf == pytest.approx(expected, abs=1e-10)


def test_g_map_examples():
    k = build_kernel(ATOMIC, 0.8, 20)
    assert np.allclose(g_map(ExtDist.delta(1, 20), k).p, k.K[2])
    assert np.allclose(g_map(ExtDist.delta(2, 20), k).p, k.K[4])
    mix = ExtDist.from_masses([0.5, 0.5] + [0.0] * 18)
    assert np.allclose(g_map(mix, k).p, 0.25 * k.K[2] + 0.5 * k.K[3] + 0.25 * k.K[4])
    out = g_map(ExtDist.delta_inf(20), k)
    assert out.p_inf == pytest.approx(k.inf_row[1])
    assert out.p[1] == pytest.approx(k.inf_row[0])


def test_overflow_policies():
    k = build_kernel(BETA, 1.0, 10)
    src = ExtDist.delta(10, 10)
    low = g_map(src, k, TailPolicy.FOLD_TO_N)
    high = g_map(src, k, TailPolicy.FOLD_TO_INF)
    env = g_map(src, k, TailPolicy.ENVELOPE)
    assert np.allclose(low.p, k.K[10]) and low.tail == 0
    assert high.tail == pytest.approx(1.0) and high.mean() == math.inf
    assert np.allclose(env.band, low.cdf() - high.cdf())
    assert env.upper is not None


def test_g_map_is_monotone():
    rng = np.random.default_rng(1)
    k = build_kernel(BETA, 1.0, 60)
    for _ in range(20):
        p = np.zeros(61)
        p[1:31] = rng.dirichlet(np.ones(30))
        lo = ExtDist(p)
        # move a random share of each atom up by a random amount
        q = np.zeros(61)
        for n in range(1, 31):
            share = rng.random()
            q[n] += p[n] * (1 - share)
            q[n + rng.integers(1, 30)] += p[n] * share
        hi = ExtDist(q)
        assert dominance_margin(lo, hi).min() >= -1e-15
        assert dominance_margin(g_map(lo, k), g_map(hi, k)).min() >= -1e-13


def test_inverse_T_recovers_kernel_rows():
    k = build_kernel(ATOMIC, 0.6, 40)
    for i in [1, 7, 40]:
        t = inverse_T(ExtDist(np.array(k.K[i])), k)
        target = np.zeros(41)
        target[i] = 1.0
        assert np.abs(t - target).max() < 1e-12


def test_beta_fixed_point(beta_kernel, beta_star):
    d = beta_star.dist
    assert tv(g_map(d, beta_kernel), d) <= 1e-10
    assert np.abs(pgf_residual(d, BETA, 1.0, GRID)).max() <= 1e-8
    conv = np.convolve(d.p, d.p)[:513]
    assert 0.5 * np.abs(inverse_T(d, beta_kernel) - conv).sum() <= 1e-8
    mean, rhs = mean_identity_check(d, BETA, 1.0)
    assert abs(mean - rhs) <= 1e-6
    small = fix_from_delta1(build_kernel(BETA, 1.0, 256)).dist
    assert abs(small.mean() - mean) <= 1e-6
    assert beta_star.monotone_violation <= 1e-12


def test_infinite_mean_regime_does_not_converge():
    k = build_kernel(BETA, 3.0, 256)
    with pytest.raises(ConvergenceError) as info:
        fix_from_delta1(k, max_iter=40)
    res = info.value.result
    assert not res.converged and res.regime == "infinite-mean regime"
    # before the truncation at N bites, the mean grows at least by 2c/(c + E[1/X]) = 1.2
    assert res.growth_ratios()[:8].min() >= 1.2
    assert any("growth ratio" in n for n in res.notes)


def test_input_checks():
    k = build_kernel(BETA, 1.0, 10)
    with pytest.raises(ValueError):
        g_map(ExtDist(np.full(11, 0.2)), k)
    bad = np.zeros(11)
    bad[1], bad[2] = 1.5, -0.5
    with pytest.raises(IntegrityError):
        g_map(ExtDist(bad), k)
    with pytest.raises(ValueError):
        pgf(ExtDist.delta(1, 10), 1.5)
    assert pgf(ExtDist.delta(3, 10), 0.5) == pytest.approx(0.125)
    assert pgf(ExtDist.delta_inf(10), 1.0) == 0.0
