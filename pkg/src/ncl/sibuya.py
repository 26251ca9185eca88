"""Sibuya coefficients and heavy-tailed sub- and super-solutions of G_c.

The coefficients gamma_{a,n} = (-1)^{n+1} C(a, n) satisfy
1 - (1-x)^a = sum_n gamma_{a,n} x^n and decay like n^{-1-a}. Mixtures of them
give a distribution mu0 with G_c(mu0) >= mu0 and a distribution nu0 with
G_c(nu0) <= nu0 (stochastic order), both with tail index alpha_c where
psi(alpha_c) = c. Iterating G_c from each side then brackets a solution of
infinite mean.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrityError, SearchError
from .kernel import LYKernel, build_kernel, down_rates
from .measure import (LambdaMeasure, alpha_c, mean_inv_x, moment, phi_values,
                      psi)
from .rde import (ExtDist, FixedPoint, TailPolicy, dominance_margin,
                  fix_from_delta1, g_map, tv)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GammaSeq:
    alpha: float
    n_max: int
    gamma: np.ndarray  # gamma[0] = 0, gamma[n] for 1 <= n <= n_max

    def partial_sum(self, n: int) -> float:
        return math.fsum(self.gamma[1:n + 1])

    def tail_sum(self, n: int) -> float:
        """sum_{i > n} gamma_i, using that the full series sums to 1 (alpha < 1)."""
        return 1.0 - self.partial_sum(n)


def gamma_coeffs(alpha: float, n_max: int) -> GammaSeq:
    """gamma_{alpha,n} for n <= n_max by gamma_{n+1} = gamma_n (n - alpha)/(n + 1)."""
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    n = np.arange(1, n_max, dtype=float)
    g = np.empty(n_max + 1)
    g[0] = 0.0
    g[1] = alpha
    g[2:] = alpha * np.cumprod((n - alpha) / (n + 1.0))
    g.setflags(write=False)
    return GammaSeq(float(alpha), n_max, g)


def sibuya_limit_constant(alpha: float) -> float:
    """lim gamma_{alpha,n} n^{1+alpha} = alpha / Gamma(1 - alpha)."""
    return alpha / math.gamma(1.0 - alpha)


# -- s from r ---------------------------------------------------------------

def s_from_r(r, measure: LambdaMeasure, c: float, tail=None):
    """Coefficients s of the law of T given those of L_T(Y) = r.

    s_n = (lambda_n + c)/c r_n - (1/c) sum_{i>n} q(i, n) r_i, with the sum
    cut at N = len(r) - 1 (``r[0]`` is ignored). ``tail = (M, a)`` declares
    r_i <= M gamma_{a,i-1} for i > N; the neglected part of the sum is then
    bounded termwise and returned. Without ``tail`` r is taken to vanish
    beyond N and the bound is zero.

    Returns ``(s, bound)``, arrays of length N + 1.
    """
    r = np.asarray(r, dtype=float)
    N = r.size - 1
    q = down_rates(measure, N)
    lam = q.sum(axis=1)
    s = (lam + c) / c * r - (q.T @ r) / c
    s[0] = 0.0
    bound = np.zeros(N + 1)
    if tail is not None:
        M, a = tail
        bound[1:] = M / c * _gamma_tail_sums(measure, a, N)
    return s, bound


def _gamma_tail_sums(measure, a, N):
    """For n = 1..N an upper bound on sum_{i>N} C(i, n-1) lambda_{i,i-n+1} gamma_{a,i-1}.

    The full sums over i >= n have closed forms (binomial series of
    (1-y)^a differentiated n-1 times), so the tail is the closed form minus
    the computed partial sum, times max_{i>N} C(i,n-1)/C(i-1,n-1).
    """
    g = gamma_coeffs(a, N).gamma
    q = down_rates(measure, N)
    out = np.empty(N)
    for n in range(1, N + 1):
        if n == 1:
            full = moment(measure, -1, 0) - moment(measure, -1, a)
            part = math.fsum(q[2:, 1] * g[1:N])  # C(i-1, 0) lambda_{i,i} gamma_{i-1}
            factor = 1.0
        else:
            full = moment(measure, -1, a) * g[n - 1]
            rows = np.arange(n + 1, N + 1)
            w = q[rows, n] * (rows - n + 1) / rows  # C(i-1, n-1) lambda_{i, i-n+1}
            part = moment(measure, -1, n - 1) * g[n - 1] + math.fsum(w * g[rows - 1])
            factor = (N + 1.0) / (N + 2.0 - n)
        out[n - 1] = factor * max(full - part, 0.0)
    return out


def sibuya_s(measure: LambdaMeasure, c: float, a: float, n_max: int) -> np.ndarray:
    """Exact s for r = gamma_{a, .}, i.e. R(x) = 1 - (1-x)^a.

    s_1 = (a E[1/X] - psi(a))/c + a and, for n >= 2,
    s_n = (gamma_n phi_n - gamma_{n-1}(phi_{n-1} - psi(a)))/c + gamma_n.
    No truncation is involved.
    """
    g = gamma_coeffs(a, n_max).gamma
    ph = phi_values(measure, n_max)
    ps = psi(measure, a)
    s = np.zeros(n_max + 1)
    s[1] = (a * mean_inv_x(measure) - ps) / c + a
    n = np.arange(2, n_max + 1)
    s[2:] = (g[n] * ph[n] - g[n - 1] * (ph[n - 1] - ps)) / c + g[n]
    return s


# -- sub-solution -----------------------------------------------------------

def _mu0_violations(ac, beta, a, eps):
    bad = []
    if not ac < beta < min(2 * ac, 1.0):
        bad.append(f"beta={beta} not in (alpha_c, min(2 alpha_c, 1)) = ({ac}, {min(2 * ac, 1.0)})")
    if not 0.0 < a < 0.25:
        bad.append(f"a={a} not in (0, 1/4)")
    if not 0.0 <= eps < ac / beta:
        bad.append(f"eps={eps} not in [0, alpha_c/beta) = [0, {ac / beta})")
    return bad


def build_mu0(measure: LambdaMeasure, c: float, beta: float, a: float, eps: float,
              N: int = 512, ac: float | None = None) -> ExtDist:
    """r_1 = 1 - a + eps a + a alpha_c - eps a beta, r_n = a gamma_{alpha_c,n} - eps a gamma_{beta,n}."""
    ac = alpha_c(measure, c) if ac is None else ac
    bad = _mu0_violations(ac, beta, a, eps)
    if bad:
        raise ValueError("; ".join(bad))
    ga = gamma_coeffs(ac, N)
    gb = gamma_coeffs(beta, N)
    r = a * ga.gamma - eps * a * gb.gamma
    r[1] = 1.0 - a + eps * a + a * ac - eps * a * beta
    if r.min() < 0:
        n = int(np.argmin(r))
        raise ValueError(f"negative mass {r[n]:.3g} at n={n}; a or eps too large")
    tail = a * (ga.tail_sum(N) - eps * gb.tail_sum(N))
    return ExtDist(r, 0.0, tail, TailPolicy.ENVELOPE)


# -- super-solution ---------------------------------------------------------

@dataclass
class Nu0:
    dist: ExtDist
    k: int
    M1: int
    s: np.ndarray
    t: np.ndarray  # law of T on 1..N
    t_tail: float  # P(T > N)
    normaliser: float


def build_nu0(measure: LambdaMeasure, c: float, beta: float, k: int, N: int = 512,
              kernel: LYKernel | None = None, ac: float | None = None) -> Nu0:
    """Law of L_T(Y) for the T built from r_n ~ gamma_{alpha_c,n} + gamma_{beta,n}, n >= k.

    T is zero below M1, carries 1 - sum_{i>M1} s_i at M1 and s_n above.
    Because T - s vanishes above M1, L_T(Y) equals r plus the kernel image
    of (T - s) restricted to {1..M1}; this is exact, with no truncation.
    """
    ac = alpha_c(measure, c) if ac is None else ac
    half = psi(measure, 0.5)
    if not c < half:
        raise DomainError(f"need c < E[(1-(1-X)^(1/2))/X^2] = {half}")
    if not 2 <= k <= N:
        raise ValueError("k must lie in [2, N]")
    ga = gamma_coeffs(ac, N).gamma
    gb = gamma_coeffs(beta, N).gamma
    Z = (1.0 - math.fsum(ga[1:k])) + (1.0 - math.fsum(gb[1:k]))
    r = np.zeros(N + 1)
    r[k:] = (ga[k:] + gb[k:]) / Z
    head = np.zeros(N + 1)
    head[1:k] = ga[1:k] + gb[1:k]
    s_head, _ = s_from_r(head, measure, c)
    s_full = (sibuya_s(measure, c, ac, N) + sibuya_s(measure, c, beta, N) - s_head) / Z

    # M1: sum_{n > M1} s_n <= 1 < sum_{n >= M1} s_n, with sum_n s_n = 1
    above = 1.0 - np.cumsum(s_full)  # above[m] = sum_{n > m} s_n
    M1 = None
    for m in range(k, N + 1):
        if above[m] <= 1.0 < above[m - 1]:
            M1 = m
            break
    if M1 is None:
        raise SearchError(f"no M1 in [{k}, {N}]", {"k": k, "N": N})
    t = np.zeros(N + 1)
    t[M1] = 1.0 - above[M1]
    t[M1 + 1:] = s_full[M1 + 1:]
    if t.min() < 0:
        raise SearchError(f"negative T mass for k={k}", {"k": k, "min": float(t.min())})
    K = (kernel or build_kernel(measure, c, N)).K
    diff = t[:M1 + 1] - s_full[:M1 + 1]
    diff[0] = 0.0
    nu = r + diff @ K[:M1 + 1]
    r_tail = (1.0 - math.fsum(ga[1:N + 1]) + 1.0 - math.fsum(gb[1:N + 1])) / Z
    if nu.min() < -1e-14:
        raise IntegrityError(f"negative mass {nu.min():.3g} in nu0")
    nu = np.maximum(nu, 0.0)
    dist = ExtDist(nu, 0.0, r_tail, TailPolicy.ENVELOPE)
    return Nu0(dist, k, M1, s_full, t, above[N], Z)


# -- dominance checks and the bracket ------------------------------------------

def check_mu0(mu0: ExtDist, kernel: LYKernel):
    """Margins CDF(mu0) - CDF(G(mu0)) and the truncation band; G(mu0) >= mu0 iff margins >= -band."""
    img = g_map(mu0, kernel, TailPolicy.ENVELOPE)
    return dominance_margin(mu0, img), img.band


def check_nu0(nu0: ExtDist, kernel: LYKernel):
    """Margins CDF(G(nu0)) - CDF(nu0) and the band; G(nu0) <= nu0 iff margins >= -band."""
    img = g_map(nu0, kernel, TailPolicy.ENVELOPE)
    return dominance_margin(img, nu0), img.band


def tail_index(dist: ExtDist, n_lo: int = 8, n_hi: int | None = None) -> float:
    """Least-squares slope of -log P(W > n) against log n over [n_lo, n_hi]."""
    n_hi = n_hi or dist.N // 2
    surv = 1.0 - dist.cdf()  # surv[n-1] = P(W > n)
    n = np.arange(n_lo, n_hi + 1)
    y = surv[n - 1]
    keep = y > 0
    if keep.sum() < 2:
        return math.inf
    slope = np.polyfit(np.log(n[keep]), np.log(y[keep]), 1)[0]
    return float(-slope)


def condition_ratio(measure: LambdaMeasure, p: float, j_max: int = 20) -> float:
    """max/min of n^-p phi_n over n = 2^j, j = 0..j_max."""
    ns = 2 ** np.arange(j_max + 1)
    ph = phi_values(measure, int(ns[-1]))[ns]
    v = ns.astype(float) ** (-p) * ph
    return float(v.max() / v.min())


@dataclass
class Bracket:
    params: dict
    mu0: ExtDist
    nu0: Nu0
    lower: FixedPoint
    upper: FixedPoint
    star: FixedPoint
    mu0_margin: np.ndarray
    mu0_band: np.ndarray
    nu0_margin: np.ndarray
    nu0_band: np.ndarray
    order_margin: np.ndarray
    tail_indices: dict
    notes: list = field(default_factory=list)

    @property
    def band(self) -> float:
        return float(max(self.mu0_band.max(), self.nu0_band.max()))

    def passed(self) -> bool:
        return bool((self.mu0_margin >= -self.mu0_band - 1e-12).all()
                    and (self.nu0_margin >= -self.nu0_band - 1e-12).all())


def default_beta(ac: float, p: float) -> float:
    hi = min(ac + 1.0 - p, 2.0 * ac, 0.5)
    if not hi > ac:
        raise DomainError(f"empty range for beta: ({ac}, {hi})")
    return 0.5 * (ac + hi)


def default_p(measure: LambdaMeasure) -> float:
    return measure.alpha if measure.kind == "beta" else 0.0


def search_mu0(measure, c, beta, kernel, ac, a_grid=None, eps_steps=8):
    a_grid = a_grid or [2.0 ** -j for j in range(3, 13)]
    tried = []
    for a in a_grid:
        for i in range(eps_steps):
            eps = ac / (2.0 * beta) / 2.0**i
            try:
                mu0 = build_mu0(measure, c, beta, a, eps, kernel.N, ac=ac)
            except ValueError as exc:
                tried.append((a, eps, str(exc)))
                continue
            margin, band = check_mu0(mu0, kernel)
            worst = float((margin + band).min())
            tried.append((a, eps, worst))
            if worst >= -1e-12:
                return a, eps, mu0, margin, band
    raise SearchError("no admissible (a, eps) for the sub-solution", {"tried": tried})


def search_nu0(measure, c, beta, kernel, ac):
    tried = []
    k = 2
    while k <= kernel.N:
        try:
            nu0 = build_nu0(measure, c, beta, k, kernel.N, kernel=kernel, ac=ac)
        except SearchError as exc:
            tried.append((k, str(exc)))
            k *= 2
            continue
        margin, band = check_nu0(nu0.dist, kernel)
        worst = float((margin + band).min())
        tried.append((k, worst))
        if worst >= -1e-12:
            return k, nu0, margin, band
        k *= 2
    raise SearchError("no admissible k for the super-solution", {"tried": tried})


def theorem3_bracket(measure: LambdaMeasure, c: float, N: int = 512, beta: float | None = None,
                     tol: float = 1e-10, max_iter: int = 100_000,
                     kernel: LYKernel | None = None) -> Bracket:
    """Sub- and super-solution, their iterates under G_c, and the order checks.

    Raises DomainError when the hypotheses fail, SearchError when no
    parameters pass, and IntegrityError if the lower limit is not below the
    upper limit beyond the truncation band.
    """
    if not measure.is_dust:
        raise DomainError("measure is not dust")
    half = psi(measure, 0.5)
    if not c < half:
        raise DomainError(f"need c < E[(1-(1-X)^(1/2))/X^2] = {half!r}")
    p = default_p(measure)
    cond = condition_ratio(measure, p)
    if not cond < 10.0:
        raise DomainError(f"n^-p phi_n not bounded on the dyadic grid (ratio {cond:.3g})")
    ac = alpha_c(measure, c)
    beta = default_beta(ac, p) if beta is None else beta
    kernel = kernel or build_kernel(measure, c, N)

    a, eps, mu0, m_mu, b_mu = search_mu0(measure, c, beta, kernel, ac)
    k, nu0, m_nu, b_nu = search_nu0(measure, c, beta, kernel, ac)

    lower = _iterate_envelope(mu0, kernel, tol, max_iter, +1)
    upper = _iterate_envelope(nu0.dist, kernel, tol, max_iter, -1)
    star = fix_from_delta1(kernel, tol=min(tol, 1e-12), max_iter=max_iter)
    order = dominance_margin(lower.dist, upper.dist)
    band = max(float(b_mu.max()), float(b_nu.max()))
    if order.min() < -band - 1e-12:
        raise IntegrityError(f"lower limit exceeds upper limit by {-order.min():.3g}")
    tails = {
        "alpha_c": ac,
        "mu0": tail_index(mu0),
        "nu0": tail_index(nu0.dist),
        "lower_limit": tail_index(lower.dist),
        "upper_limit": tail_index(upper.dist),
    }
    params = {"a": a, "eps": eps, "k": k, "beta": beta, "alpha_c": ac,
              "M1": nu0.M1, "p": p, "condition_ratio": cond, "N": kernel.N}
    br = Bracket(params, mu0, nu0, lower, upper, star, m_mu, b_mu, m_nu, b_nu,
                 order, tails)
    br.notes.append(f"TV between the two limits: {tv(lower.dist, upper.dist):.6g}")
    for name in ("lower_limit", "upper_limit"):
        if tails[name] > 1.0:
            br.notes.append(
                f"{name} has empirical tail index {tails[name]:.3g}, not alpha_c={ac:.3g}: "
                f"FoldToN iteration on 1..{kernel.N} cannot hold a tail heavier than the "
                "truncation, so the limit is not claimed to be the infinite-mean solution")
    if lower.monotone_violation > 1e-10:
        br.notes.append(
            f"first iterates from mu0 rise in CDF by up to {lower.monotone_violation:.3g} "
            "(within the truncation band)")
    return br


def _iterate_envelope(start: ExtDist, kernel: LYKernel, tol, max_iter, direction) -> FixedPoint:
    """Iterate G_c with the envelope policy; direction +1 expects increase."""
    from .rde import _iterate
    return _iterate(start, kernel, tol, max_iter, direction, TailPolicy.ENVELOPE)
