"""The measure Lambda driving the block coalescent, and its moments.

Two families are supported. ``beta`` is Beta(2 - alpha, alpha) and
``atomic`` is a finite mixture of point masses on (0, 1]. Throughout, X
denotes a random variable with law Lambda.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import betaln, gammaln, logsumexp

from .errors import DomainError

logger = logging.getLogger(__name__)

_QUAD_OPTS = dict(epsabs=1e-15, epsrel=1e-13, limit=200)


@dataclass(frozen=True)
class LambdaMeasure:
    """Probability measure on [0, 1].

    Use :meth:`beta` or :meth:`atomic` rather than the constructor.
    """

    kind: str
    alpha: float = 0.0
    atoms: tuple = ()

    def __post_init__(self):
        if self.kind == "beta":
            if not 0.0 < self.alpha < 2.0:
                raise ValueError(f"beta parameter must lie in (0, 2), got {self.alpha}")
        elif self.kind == "atomic":
            if not self.atoms:
                raise ValueError("atomic measure needs at least one atom")
            for x, w in self.atoms:
                if not 0.0 < x <= 1.0:
                    raise ValueError(f"atom location {x} outside (0, 1]")
                if not w > 0.0:
                    raise ValueError(f"atom weight {w} must be positive")
            total = math.fsum(w for _, w in self.atoms)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"atom weights sum to {total!r}, expected 1")
        else:
            raise ValueError(f"unknown measure kind {self.kind!r}")

    @classmethod
    def beta(cls, alpha: float) -> "LambdaMeasure":
        return cls("beta", alpha=float(alpha))

    @classmethod
    def atomic(cls, atoms) -> "LambdaMeasure":
        atoms = tuple(sorted((float(x), float(w)) for x, w in atoms))
        return cls("atomic", atoms=atoms)

    @property
    def is_dust(self) -> bool:
        return math.isfinite(mean_inv_x(self))

    def to_dict(self) -> dict:
        if self.kind == "beta":
            return {"kind": "beta", "alpha": self.alpha}
        return {"kind": "atomic", "atoms": [[x, w] for x, w in self.atoms]}

    @classmethod
    def from_dict(cls, d: dict) -> "LambdaMeasure":
        kind = d.get("kind")
        if kind == "beta":
            return cls.beta(d["alpha"])
        if kind == "atomic":
            return cls.atomic(d["atoms"])
        raise ValueError(f"unknown measure kind {kind!r}")

    @classmethod
    def parse(cls, text: str) -> "LambdaMeasure":
        """Parse either JSON or the shorthand ``beta:<alpha>``."""
        text = text.strip()
        if text.startswith("beta:"):
            return cls.beta(float(text[5:]))
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"cannot parse measure {text!r}: {exc}") from None
        if not isinstance(d, dict):
            raise ValueError("measure JSON must be an object")
        return cls.from_dict(d)

    def __str__(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))


# -- moments ---------------------------------------------------------------

def _atoms(measure):
    xs = np.array([x for x, _ in measure.atoms])
    ws = np.array([w for _, w in measure.atoms])
    return xs, ws


def _log_beta_norm(alpha):
    return betaln(2.0 - alpha, alpha)


def moment(measure: LambdaMeasure, j: float, m: float) -> float:
    """E[X^j (1-X)^m] for j >= -1 and m >= 0 (infinite if it diverges)."""
    if measure.kind == "beta":
        a = measure.alpha
        if j + 2.0 - a <= 0.0:
            return math.inf
        return math.exp(betaln(j + 2.0 - a, m + a) - _log_beta_norm(a))
    xs, ws = _atoms(measure)
    one_minus = np.where(m == 0, 1.0, (1.0 - xs) ** m)
    return float(np.sum(ws * xs**j * one_minus))


def lambda_bk(measure: LambdaMeasure, b: int, k: int) -> float:
    """Rate at which one given k-tuple out of b blocks merges."""
    if not (isinstance(b, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise TypeError("b and k must be integers")
    if b < 2 or not 2 <= k <= b:
        raise ValueError(f"need 2 <= k <= b, got b={b}, k={k}")
    return moment(measure, k - 2, b - k)


def mean_inv_x(measure: LambdaMeasure) -> float:
    """E[1/X]; finite exactly in the dust regime."""
    if measure.kind == "beta":
        a = measure.alpha
        return 1.0 / (1.0 - a) if a < 1.0 else math.inf
    xs, ws = _atoms(measure)
    return float(np.sum(ws / xs))


def atom_at_one(measure: LambdaMeasure) -> float:
    """P(X = 1)."""
    if measure.kind == "beta":
        return 0.0
    return math.fsum(w for x, w in measure.atoms if x == 1.0)


def _require_dust(measure):
    if not measure.is_dust:
        raise DomainError(f"measure {measure} is not dust (E[1/X] is infinite)")


# -- log-space rate tables -------------------------------------------------

def log_lambda_matrix(measure: LambdaMeasure, b_max: int) -> np.ndarray:
    """log lambda_{b,k} on a (b_max+1)^2 grid, -inf off the triangle 2<=k<=b."""
    b = np.arange(b_max + 1)[:, None].astype(float)
    k = np.arange(b_max + 1)[None, :].astype(float)
    valid = (k >= 2) & (k <= b)
    out = np.full((b_max + 1, b_max + 1), -np.inf)
    if measure.kind == "beta":
        a = measure.alpha
        with np.errstate(invalid="ignore"):
            vals = betaln(k - a, b - k + a) - _log_beta_norm(a)
        out[valid] = vals[valid]
        return out
    xs, ws = _atoms(measure)
    terms = []
    for x, w in zip(xs, ws):
        lx = math.log(x)
        if x == 1.0:
            t = np.where(b == k, math.log(w) + (k - 2) * lx, -np.inf)
        else:
            t = math.log(w) + (k - 2) * lx + (b - k) * math.log1p(-x)
        terms.append(np.broadcast_to(t, out.shape))
    vals = logsumexp(np.stack(terms), axis=0)
    out[valid] = vals[valid]
    return out


def log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


@lru_cache(maxsize=8)
def jump_rates(measure: LambdaMeasure, b_max: int) -> np.ndarray:
    """Matrix J[b, k] = C(b, k) * lambda_{b,k}, the rate of a k-merger from b blocks.

    Products are formed in log space and exponentiated once. The returned
    array is read-only and cached per (measure, b_max).
    """
    b = np.arange(b_max + 1)[:, None].astype(float)
    k = np.arange(b_max + 1)[None, :].astype(float)
    with np.errstate(invalid="ignore"):
        logj = log_lambda_matrix(measure, b_max) + np.where(
            (k <= b), log_binom(b, k), -np.inf)
    out = np.exp(logj)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RateTable:
    b_max: int
    lambda_bk: np.ndarray  # [b, k], zero off the triangle
    lambda_b: np.ndarray   # [b], lambda_b[0] and lambda_b[1] are 0


def rate_table(measure: LambdaMeasure, b_max: int) -> RateTable:
    if b_max < 2:
        raise ValueError("b_max must be at least 2")
    lam = np.exp(log_lambda_matrix(measure, b_max))
    total = jump_rates(measure, b_max).sum(axis=1)
    total[:2] = 0.0
    lam.setflags(write=False)
    total.setflags(write=False)
    return RateTable(b_max, lam, total)


def total_rates(measure: LambdaMeasure, b_max: int) -> np.ndarray:
    """lambda_b for 0 <= b <= b_max."""
    out = np.array(jump_rates(measure, b_max).sum(axis=1))
    out[:2] = 0.0
    return out


# -- expectations of the form E[h(X)/X^2] ----------------------------------

def _one_minus_pow_over_x(x, a):
    """(1 - (1-x)^a) / x without cancellation for small x; a at x = 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(a * np.log1p(-x)) / x
    out = np.where(x == 0.0, a, out)
    return out if out.ndim else float(out)


def expect_over_x(measure: LambdaMeasure, g) -> float:
    """E[g(X)/X] for g smooth on [0, 1] (typically g(x) = h(x)/x).

    For the beta family the integral is split at 1/2 and each half handed to
    QUADPACK with the algebraic endpoint singularity as the weight.
    """
    if measure.kind == "atomic":
        xs, ws = _atoms(measure)
        return math.fsum(w * float(g(x)) / x for x, w in zip(xs, ws))
    a = measure.alpha
    if a >= 1.0:
        raise DomainError("E[g(X)/X] diverges for non-dust beta measures")
    norm = math.exp(-_log_beta_norm(a))
    left, _ = integrate.quad(lambda x: g(x) * (1.0 - x) ** (a - 1.0), 0.0, 0.5,
                             weight="alg", wvar=(-a, 0.0), **_QUAD_OPTS)
    right, _ = integrate.quad(lambda x: g(x) * x ** (-a), 0.5, 1.0,
                              weight="alg", wvar=(0.0, a - 1.0), **_QUAD_OPTS)
    return norm * (left + right)


def psi(measure: LambdaMeasure, alpha: float) -> float:
    """E[(1 - (1-X)^alpha) / X^2], increasing in alpha."""
    _require_dust(measure)
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if measure.kind == "atomic":
        xs, ws = _atoms(measure)
        return float(np.sum(ws * _one_minus_pow_over_x(xs, alpha) / xs))
    a = measure.alpha
    norm = math.exp(-_log_beta_norm(a))
    left, _ = integrate.quad(
        lambda x: _one_minus_pow_over_x(x, alpha) * (1.0 - x) ** (a - 1.0),
        0.0, 0.5, weight="alg", wvar=(-a, 0.0), **_QUAD_OPTS)
    # On [1/2, 1] the two terms carry different powers of (1-x); each goes
    # to its own weighted rule so the integrands stay smooth.
    r1, _ = integrate.quad(lambda x: x ** (-1.0 - a), 0.5, 1.0,
                           weight="alg", wvar=(0.0, a - 1.0), **_QUAD_OPTS)
    r2, _ = integrate.quad(lambda x: x ** (-1.0 - a), 0.5, 1.0,
                           weight="alg", wvar=(0.0, a - 1.0 + alpha), **_QUAD_OPTS)
    return norm * (left + r1 - r2)


def alpha_c(measure: LambdaMeasure, c: float, tol: float = 1e-12) -> float:
    """The exponent in (0, 1) with psi(alpha_c) = c, by bisection."""
    _require_dust(measure)
    if c <= 0.0:
        raise ValueError("c must be positive")
    if c >= mean_inv_x(measure):
        raise DomainError(f"no root in (0,1): c={c} >= E[1/X]={mean_inv_x(measure)}")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if psi(measure, mid) < c:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def phi_n(measure: LambdaMeasure, n: float) -> float:
    """E[(1 - (1-X)^n) / X^2].

    For the beta family this equals
    Gamma(alpha + n) / ((1 - alpha) Gamma(1 + alpha) Gamma(n)),
    which stays accurate for n in the millions where quadrature would not.
    """
    _require_dust(measure)
    if n < 1:
        raise ValueError("n must be at least 1")
    if measure.kind == "atomic":
        xs, ws = _atoms(measure)
        return float(np.sum(ws * _one_minus_pow_over_x(xs, float(n)) / xs))
    a = measure.alpha
    return math.exp(gammaln(a + n) - gammaln(1.0 + a) - gammaln(n)) / (1.0 - a)


def phi_values(measure: LambdaMeasure, n_max: int) -> np.ndarray:
    """phi_n for n = 0..n_max as an array (phi_0 = 0)."""
    _require_dust(measure)
    n = np.arange(1, n_max + 1, dtype=float)
    if measure.kind == "beta":
        a = measure.alpha
        vals = np.exp(gammaln(a + n) - gammaln(1.0 + a) - gammaln(n)) / (1.0 - a)
    else:
        xs, ws = _atoms(measure)
        vals = sum(w * _one_minus_pow_over_x(x, n) / x for x, w in zip(xs, ws))
    return np.concatenate([[0.0], vals])
