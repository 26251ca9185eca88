import numpy as np
import pytest

from ncl.errors import DomainError
from ncl.kernel import b_sequence, build_kernel
from ncl.measure import LambdaMeasure, lambda_bk
from ncl.sim import simulate_lny

from conftest import ATOMIC, BETA, STAR


def test_star_closed_form():
    c = 0.7
    k = build_kernel(STAR, c, 40)
    for i in range(2, 41):
        row = np.zeros(i)
        row[0] = 1 / (1 + c)
        row[-1] = c / (1 + c)
        assert np.allclose(k.row(i), row, atol=1e-15)
    assert k.inf_row == pytest.approx((1 / (1 + c), c / (1 + c)))


@pytest.mark.parametrize("m", [BETA, ATOMIC])
def test_three_blocks_by_hand(m):
    c = 1.3
    k = build_kernel(m, c, 3)
    l2, l32, l33 = 1.0, lambda_bk(m, 3, 2), lambda_bk(m, 3, 3)
    lam3 = 3 * l32 + l33
    to2 = 3 * l32 / (lam3 + c)
    expected = [l33 / (lam3 + c) + to2 * l2 / (l2 + c), to2 * c / (l2 + c), c / (lam3 + c)]
    assert np.allclose(k.row(3), expected, atol=1e-15)


def test_rows_stochastic_and_diagonal(beta_kernel):
    K = beta_kernel.K
    assert np.abs(K[1:].sum(axis=1) - 1).max() <= 1e-12
    i = np.arange(1, 513)
    assert np.abs(K[i, i] * (beta_kernel.lam[i] + 1.0) - 1.0).max() <= 1e-12
    assert np.all(np.triu(K[1:, 1:], 1) == 0)


def test_means_increase(beta_kernel):
    b = b_sequence(beta_kernel, 400)
    assert b.min() > 0
    with pytest.raises(ValueError):
        b_sequence(beta_kernel, 512)


def test_monte_carlo_agrees():
    k = build_kernel(ATOMIC, 0.8, 12)
    reps = 200_000
    freq = simulate_lny(ATOMIC, 0.8, 12, reps, seed=3)
    p = k.row(12)
    sd = np.sqrt(p * (1 - p) / reps)
    assert np.all(np.abs(freq[1:] - p) <= 4 * sd + 1e-12)


def test_domain_checks():
    with pytest.raises(DomainError):
        build_kernel(LambdaMeasure.beta(1.5), 1.0, 10)
    k = build_kernel(LambdaMeasure.beta(1.5), 1.0, 10, inf_row=False)
    assert k.inf_row is None
    with pytest.raises(ValueError):
        build_kernel(BETA, 0.0, 10)
