"""Distributions on {1..N} u {inf} and the map G_c.

G_c sends the law of W to the law of L_{W1+W2}(Y), with W1 and W2 independent
copies of W and Y ~ Exp(c) independent of everything. Fixed points are found
by monotone iteration from delta_1 and from delta_inf. The diagnostics check
a fixed point against the generating-function equation, the inverse relation
between T and L_T(Y), and the identity for the mean.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, DomainError, IntegrityError
from .kernel import LYKernel
from .measure import LambdaMeasure, atom_at_one, expect_over_x, mean_inv_x

logger = logging.getLogger(__name__)

NEG_CLIP = -1e-14


class TailPolicy(str, enum.Enum):
    """How counts above N are sent through the kernel.

    FOLD_TO_N uses row N (a stochastic lower bound, since rows increase in i).
    FOLD_TO_INF uses the row for infinitely many blocks, booking the surviving
    mass as ``tail`` (an upper bound). ENVELOPE returns the FOLD_TO_N image and
    keeps the FOLD_TO_INF image alongside as the error band.
    """

    FOLD_TO_N = "FoldToN"
    FOLD_TO_INF = "FoldToInf"
    ENVELOPE = "Envelope"


@dataclass(frozen=True)
class ExtDist:
    """Probability distribution on {1, ..., N} u {inf}.

    ``p`` has length N + 1 and ``p[n]`` is the mass at n (``p[0]`` is always
    0). ``tail`` is finite mass known only to lie beyond N. Under the
    envelope policy ``upper`` is the matching FoldToInf image and
    ``band`` the pointwise CDF gap between the two on {1..N}.
    """

    p: np.ndarray
    p_inf: float = 0.0
    tail: float = 0.0
    tail_policy: TailPolicy = TailPolicy.FOLD_TO_N
    upper: "ExtDist | None" = field(default=None, repr=False, compare=False)
    band: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.p.size - 1

    @property
    def total(self) -> float:
        return math.fsum(self.p) + self.p_inf + self.tail

    def mean(self) -> float:
        """Mean of the distribution.

        Infinite when there is mass at inf, or tail mass under FoldToInf.
        Otherwise tail mass is counted at N + 1, giving a lower bound.
        """
        if self.p_inf > 0:
            return math.inf
        if self.tail > 0 and self.tail_policy == TailPolicy.FOLD_TO_INF:
            return math.inf
        return float(np.arange(self.N + 1) @ self.p) + (self.N + 1) * self.tail

    def cdf(self) -> np.ndarray:
        """P(W <= n) for n = 1..N."""
        return np.cumsum(self.p[1:])

    def band_max(self) -> float:
        return 0.0 if self.band is None else float(np.max(self.band))

    def with_policy(self, policy: TailPolicy) -> "ExtDist":
        return replace(self, tail_policy=TailPolicy(policy), upper=None, band=None)

    @classmethod
    def delta(cls, n: int, N: int, policy=TailPolicy.FOLD_TO_N) -> "ExtDist":
        if not 1 <= n <= N:
            raise ValueError("atom outside {1..N}")
        p = np.zeros(N + 1)
        p[n] = 1.0
        return cls(p, tail_policy=TailPolicy(policy))

    @classmethod
    def delta_inf(cls, N: int, policy=TailPolicy.FOLD_TO_N) -> "ExtDist":
        return cls(np.zeros(N + 1), p_inf=1.0, tail_policy=TailPolicy(policy))

    @classmethod
    def from_masses(cls, masses, p_inf=0.0, tail=0.0,
                    policy=TailPolicy.FOLD_TO_N) -> "ExtDist":
        """Build from masses at 1..N (index 0 of ``masses`` is the mass at 1)."""
        p = np.concatenate([[0.0], np.asarray(masses, dtype=float)])
        return cls(p, float(p_inf), float(tail), TailPolicy(policy))


def tv(a: ExtDist, b: ExtDist) -> float:
    """Total variation on {1..N} u {beyond N} u {inf}."""
    if a.N != b.N:
        raise ValueError("distributions live on different truncations")
    return 0.5 * (float(np.abs(a.p - b.p).sum()) + abs(a.p_inf - b.p_inf)
                  + abs(a.tail - b.tail))


def dominance_margin(lower: ExtDist, upper: ExtDist) -> np.ndarray:
    """CDF(lower) - CDF(upper) on 1..N; nonnegative everywhere iff lower <= upper."""
    return lower.cdf() - upper.cdf()


def _clean(p: np.ndarray, *extra: float):
    """Clip round-off negatives and renormalise; refuse real negatives."""
    worst = min(float(p.min()), *extra) if extra else float(p.min())
    if worst < NEG_CLIP:
        raise IntegrityError(f"negative mass {worst:.3g} in distribution")
    p = np.where(p < 0, 0.0, p)
    extra = tuple(max(e, 0.0) for e in extra)
    s = math.fsum(p) + math.fsum(extra)
    return p / s, tuple(e / s for e in extra)


def _push(mu: ExtDist, kernel: LYKernel, policy: TailPolicy) -> ExtDist:
    N = kernel.N
    K = kernel.K
    if mu.N > N:
        raise ValueError(f"distribution on 1..{mu.N} exceeds kernel size {N}")
    pf = np.zeros(N + 1)
    pf[:mu.N + 1] = mu.p
    fin = math.fsum(pf)
    conv = np.convolve(pf, pf)  # index = value of W1 + W2
    inside = conv[:N + 1]
    overflow = math.fsum(conv[N + 1:]) + 2 * fin * mu.tail + mu.tail**2
    to_inf = 1.0 - (1.0 - mu.p_inf) ** 2

    out = inside @ K
    p_inf = 0.0
    tail = 0.0
    if to_inf > 0:
        if kernel.inf_row is None:
            raise DomainError("kernel has no row for infinitely many blocks")
        out[1] += to_inf * kernel.inf_row[0]
        p_inf = to_inf * kernel.inf_row[1]
    if overflow > 0:
        if policy == TailPolicy.FOLD_TO_N:
            out += overflow * K[N]
        else:
            if kernel.inf_row is None:
                raise DomainError("FoldToInf needs the row for infinitely many blocks")
            out[1] += overflow * kernel.inf_row[0]
            tail = overflow * kernel.inf_row[1]
    out, (p_inf, tail) = _clean(out, p_inf, tail)
    return ExtDist(out, p_inf, tail, policy)


def g_map(mu: ExtDist, kernel: LYKernel, policy: TailPolicy | str | None = None) -> ExtDist:
    """One application of G_c, with counts above N handled per ``policy``."""
    policy = TailPolicy(policy or mu.tail_policy)
    if abs(mu.total - 1.0) > 1e-10:
        raise ValueError(f"input distribution has total mass {mu.total!r}")
    if policy != TailPolicy.ENVELOPE:
        return _push(mu, kernel, policy)
    low = _push(mu, kernel, TailPolicy.FOLD_TO_N)
    high = _push(mu, kernel, TailPolicy.FOLD_TO_INF)
    band = np.abs(low.cdf() - high.cdf())
    return replace(low, tail_policy=TailPolicy.ENVELOPE, upper=high, band=band)


# -- fixed points ----------------------------------------------------------

@dataclass
class FixedPoint:
    dist: ExtDist
    tv_trace: list
    mean_trace: list
    iterations: int
    converged: bool
    regime: str
    monotone_violation: float = 0.0
    notes: list = field(default_factory=list)

    def growth_ratios(self) -> np.ndarray:
        m = np.asarray(self.mean_trace, dtype=float)
        return m[1:] / m[:-1]


def regime(measure: LambdaMeasure, c: float) -> str:
    e = mean_inv_x(measure)
    if not math.isfinite(e):
        return "non-dust"
    if math.isclose(c, e, rel_tol=1e-12):
        return "boundary regime: finite-mean hypothesis c < E[1/X] not met"
    return "finite-mean regime" if c < e else "infinite-mean regime"


def _iterate(start: ExtDist, kernel: LYKernel, tol: float, max_iter: int,
             direction: int, policy) -> FixedPoint:
    mu = start.with_policy(policy)
    tvs, means = [], [mu.mean()]
    worst = 0.0
    rg = regime(kernel.measure, kernel.c)
    for it in range(1, max_iter + 1):
        nxt = g_map(mu, kernel)
        # direction +1: increasing iterates, so any CDF rise is a violation
        step = (nxt.cdf() - mu.cdf()) * direction
        worst = max(worst, float(step.max()) if step.size else 0.0)
        d = tv(nxt, mu)
        tvs.append(d)
        means.append(nxt.mean())
        mu = nxt
        if d < tol:
            res = FixedPoint(mu, tvs, means, it, True, rg, worst)
            break
    else:
        res = FixedPoint(mu, tvs, means, max_iter, False, rg, worst)
        if rg == "infinite-mean regime":
            e = mean_inv_x(kernel.measure)
            res.notes.append(
                f"mean growth ratio lower bound 2c/(c+E[1/X]) = {2 * kernel.c / (kernel.c + e):.6g}")
        raise ConvergenceError(
            f"no TV stagnation below {tol:g} within {max_iter} iterations", res)
    if worst > 1e-10:
        res.notes.append(f"monotonicity of iterates violated by {worst:.3g}")
    return res


def fix_from_delta1(kernel: LYKernel, tol: float = 1e-12, max_iter: int = 100_000,
                    policy=TailPolicy.FOLD_TO_N) -> FixedPoint:
    """Limit of G_c^n(delta_1); iterates increase stochastically."""
    res = _iterate(ExtDist.delta(1, kernel.N), kernel, tol, max_iter, 1, policy)
    res.notes.append("uniqueness among finite-mean solutions is not certified numerically")
    return res


def fix_from_delta_inf(kernel: LYKernel, tol: float = 1e-12, max_iter: int = 100_000,
                       policy=TailPolicy.FOLD_TO_N) -> FixedPoint:
    """Limit of G_c^n(delta_inf); iterates decrease stochastically.

    The mass at inf of the limit must equal max(0, 1 - P(X=1)/c).
    """
    if kernel.inf_row is None:
        raise DomainError("kernel has no row for infinitely many blocks")
    res = _iterate(ExtDist.delta_inf(kernel.N), kernel, tol, max_iter, -1, policy)
    expected = max(0.0, 1.0 - atom_at_one(kernel.measure) / kernel.c)
    if abs(res.dist.p_inf - expected) > 1e-8:
        raise IntegrityError(
            f"mass at inf {res.dist.p_inf!r} differs from 1 - P(X=1)/c = {expected!r}")
    return res


# -- generating function and identities -------------------------------------

def pgf(dist: ExtDist, x: float) -> float:
    """sum_n p[n] x^n; at x = 1 this is 1 - p_inf."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 1.0:
        return 1.0 - dist.p_inf
    return float(np.polynomial.polynomial.polyval(x, dist.p))


def _pow_diff_over_X(p, n, X, x):
    """sum_n p_n [(X + (1-X)x)^n - ((1-X)x)^n] / X, stable for small X."""
    if X == 0.0:
        return float(np.sum(p * n * x ** (n - 1.0)))
    y = (1.0 - X) * x
    z = y + X
    if y == 0.0:
        return float(np.sum(p * z**n)) / X
    e = n * math.log1p(X / y)
    small = e < 30.0
    diff = np.where(small, y**n * np.expm1(np.where(small, e, 0.0)), z**n - y**n)
    return float(np.sum(p * diff)) / X


def _one_minus_pow_sum_over_X(p, n, X, scale=1.0):
    """sum_n p_n scale^n (1 - (1-X)^n) / X, stable for small X."""
    w = p * scale**n
    if X == 0.0:
        return float(np.sum(w * n))
    if X == 1.0:
        return float(np.sum(w))
    return float(np.sum(w * -np.expm1(n * math.log1p(-X)))) / X


def pgf_residual(dist: ExtDist, measure: LambdaMeasure, c: float, xs) -> np.ndarray:
    """Residual of the generating-function equation at each x.

    residual(x) = E[(R(x) - R((1-X)x))/X^2] + c(R(x) - R(x)^2)
                  - x E[(R(X + (1-X)x) - R((1-X)x))/X^2]

    with R the generating function of the finite part of ``dist``. The
    identity is only expected to hold for finite-mean solutions; with mass
    at inf the residual is still returned but a warning is logged.
    """
    if not measure.is_dust:
        raise DomainError("generating-function identity needs a dust measure")
    if dist.p_inf > 0 or dist.tail > 0:
        logger.warning("mass outside {1..N}: identity not asserted, residual uses finite part")
    p = dist.p[1:]
    n = np.arange(1, dist.N + 1, dtype=float)
    out = []
    for x in xs:
        x = float(x)
        R = pgf(dist, x) if x < 1 else float(p.sum())
        A = expect_over_x(measure, lambda X: _one_minus_pow_sum_over_X(p, n, X, x))
        B = expect_over_x(measure, lambda X: _pow_diff_over_X(p, n, X, x))
        out.append(A + c * (R - R * R) - x * B)
    return np.array(out)


def inverse_T(dist: ExtDist, kernel: LYKernel) -> np.ndarray:
    """Recover the law of T from the law of L_T(Y), truncated at N.

    t[n] = (lambda_n + c)/c d[n] - (1/c) sum_{i>n} q(i, n) d[i]. Entries may
    be negative, which signals that ``dist`` is not of the form L_T(Y).
    """
    if dist.N != kernel.N:
        raise ValueError("distribution and kernel sizes differ")
    c = kernel.c
    d = dist.p
    t = (kernel.lam + c) / c * d - (kernel.down.T @ d) / c
    t[0] = 0.0
    return t


def mean_identity_check(dist: ExtDist, measure: LambdaMeasure, c: float):
    """(mean, E[(1 - R(1-X))/X^2] / (E[1/X] - c)); equal at a finite-mean fixed point."""
    e = mean_inv_x(measure)
    if not c < e:
        raise DomainError(f"mean identity needs c < E[1/X] = {e}")
    if dist.p_inf > 0:
        raise DomainError("mean identity needs a distribution without mass at inf")
    p = dist.p[1:]
    n = np.arange(1, dist.N + 1, dtype=float)
    # 1 - R(1-X) = sum p_n (1 - (1-X)^n) once the masses sum to 1
    num = expect_over_x(measure, lambda X: _one_minus_pow_sum_over_X(p, n, X))
    return dist.mean(), num / (e - c)
