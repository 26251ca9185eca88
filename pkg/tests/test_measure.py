import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate
from scipy.special import beta as beta_fn

from ncl.errors import DomainError
from ncl.measure import (LambdaMeasure, alpha_c, jump_rates, lambda_bk, mean_inv_x,
                         moment, phi_n, phi_values, psi, rate_table, total_rates)

from conftest import ATOMIC, BETA


def quad_lambda(alpha, b, k):
    # density of Beta(2-a, a) is the QAWS weight; the polynomial part is smooth
    val, _ = integrate.quad(lambda x: x ** (k - 2) * (1 - x) ** (b - k), 0, 1,
                            weight="alg", wvar=(1 - alpha, alpha - 1), epsabs=1e-14)
    return val / beta_fn(2 - alpha, alpha)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7, 1.5])
def test_beta_rates_match_quadrature(alpha):
    m = LambdaMeasure.beta(alpha)
    for b, k in [(2, 2), (3, 2), (7, 4), (30, 2), (30, 30), (50, 17)]:
        assert lambda_bk(m, b, k) == pytest.approx(quad_lambda(alpha, b, k), rel=1e-9, abs=1e-14)


def test_hand_values():
    # any probability measure has lambda_{2,2} = 1
    assert lambda_bk(BETA, 2, 2) == pytest.approx(1.0, rel=1e-14)
    assert lambda_bk(ATOMIC, 2, 2) == pytest.approx(1.0, rel=1e-14)
    assert lambda_bk(BETA, 3, 3) == pytest.approx(0.75, rel=1e-14)  # E[X] = (2-a)/2
    assert lambda_bk(ATOMIC, 3, 2) == pytest.approx(0.35, rel=1e-14)
    assert lambda_bk(ATOMIC, 3, 3) == pytest.approx(0.65, rel=1e-14)
    assert mean_inv_x(BETA) == pytest.approx(2.0, rel=1e-14)
    assert mean_inv_x(ATOMIC) == pytest.approx(1.7, rel=1e-14)
    assert math.isinf(mean_inv_x(LambdaMeasure.beta(1.2)))


@pytest.mark.parametrize("m", [BETA, ATOMIC])
def test_recursion_and_consistency(m):
    t = rate_table(m, 101)
    lam = t.lambda_bk
    b = np.arange(2, 101)
    for bb in b:
        k = np.arange(2, bb + 1)
        assert np.abs(lam[bb, k] - lam[bb + 1, k] - lam[bb + 1, k + 1]).max() <= 1e-12
    J = jump_rates(m, 101)
    assert np.allclose(total_rates(m, 101), t.lambda_b, rtol=1e-14)
    assert J[10, 3] == pytest.approx(math.comb(10, 3) * lambda_bk(m, 10, 3), rel=1e-12)
    # Kingman-like identity: lambda_2 = lambda_{2,2}
    assert t.lambda_b[2] == pytest.approx(1.0)


def test_argument_checks():
    with pytest.raises(ValueError):
        lambda_bk(BETA, 3, 4)
    with pytest.raises(ValueError):
        lambda_bk(BETA, 3, 1)
    with pytest.raises(TypeError):
        lambda_bk(BETA, 3.0, 2)
    with pytest.raises(ValueError):
        LambdaMeasure.atomic([(0.5, 0.6), (1.0, 0.3)])
    with pytest.raises(ValueError):
        LambdaMeasure.atomic([(0.0, 1.0)])
    with pytest.raises(ValueError):
        LambdaMeasure.beta(2.0)


def test_parse_and_round_trip():
    assert LambdaMeasure.parse("beta:0.5") == BETA
    assert LambdaMeasure.parse(str(ATOMIC)) == ATOMIC
    assert LambdaMeasure.from_dict(ATOMIC.to_dict()) == ATOMIC
    assert BETA.is_dust and not LambdaMeasure.beta(1.0).is_dust


def mp_psi(alpha, a):
    # Gamma-function closed form for the beta family, at 30 digits
    return float(mp.gamma(alpha + a) / ((1 - alpha) * mp.gamma(1 + alpha) * mp.gamma(a)))


@pytest.mark.parametrize("alpha,a", [(0.5, 0.5), (0.3, 0.2), (0.7, 0.9), (0.5, 1.0)])
def test_psi_against_mpmath(alpha, a):
    mp.mp.dps = 30
    assert psi(LambdaMeasure.beta(alpha), a) == pytest.approx(mp_psi(alpha, a), rel=1e-11)


def test_psi_special_values():
    assert psi(BETA, 0.5) == pytest.approx(4 / math.pi, rel=1e-13)
    assert psi(BETA, 1.0) == pytest.approx(mean_inv_x(BETA), rel=1e-12)
    expected = 0.3 * 1 + 0.7 * (1 - 0.5**0.5) / 0.25
    assert psi(ATOMIC, 0.5) == pytest.approx(expected, rel=1e-14)


def test_alpha_c():
    ac = alpha_c(BETA, 1.0)
    assert psi(BETA, ac) == pytest.approx(1.0, abs=1e-11)
    # closed form of psi for the beta family, solved by mpmath
    root = mp.findroot(lambda x: mp.gamma(0.5 + x) / (0.5 * mp.gamma(1.5) * mp.gamma(x)) - 1, 0.3)
    assert ac == pytest.approx(float(root), abs=1e-10)
    with pytest.raises(DomainError):
        alpha_c(BETA, 2.0)


def test_phi():
    assert phi_n(BETA, 1) == pytest.approx(psi(BETA, 1.0), rel=1e-12)
    # phi_n = sum_{j<n} E[(1-X)^j / X]
    for m in [BETA, ATOMIC]:
        ph = phi_values(m, 30)
        partial = np.cumsum([moment(m, -1, j) for j in range(30)])
        assert np.allclose(ph[1:], partial, rtol=1e-12)
        assert phi_n(m, 17) == pytest.approx(ph[17], rel=1e-12)
