"""Law of the block count of a Lambda-coalescent at an independent Exp(c) time.

Row i of the kernel is the distribution of L_i(Y), the number of blocks left
at time Y ~ Exp(c) when starting from i blocks. Rows are built in increasing
i with the first-step decomposition

    P(L_i(Y) = k) = (lambda_i + c)^-1 * sum_{n=k}^{i-1} q(i, n) P(L_n(Y) = k),

where q(i, n) = C(i, i-n+1) lambda_{i, i-n+1} is the rate of jumping from i
blocks to n blocks, and P(L_i(Y) = i) = c / (lambda_i + c).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .measure import LambdaMeasure, atom_at_one, jump_rates

logger = logging.getLogger(__name__)

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class LYKernel:
    """Triangular stochastic matrix K[i, k] = P(L_i(Y) = k), 1 <= k <= i <= N.

    Index 0 is unused so that K[i, k] reads as in the formulas. ``inf_row``
    is (P(L_inf(Y) = 1), P(L_inf(Y) = inf)), or None when not requested.
    ``down`` holds q(i, n) and ``lam`` the total rates lambda_i.
    """

    measure: LambdaMeasure
    c: float
    N: int
    K: np.ndarray
    lam: np.ndarray
    down: np.ndarray
    inf_row: tuple[float, float] | None
    renorm_delta: float = field(default=0.0)

    def row(self, i: int) -> np.ndarray:
        return self.K[i, 1:i + 1]

    @property
    def means(self) -> np.ndarray:
        """E[L_i(Y)] for i = 0..N (entry 0 is 0)."""
        return self.K @ np.arange(self.N + 1, dtype=float)


def down_rates(measure: LambdaMeasure, N: int) -> np.ndarray:
    """q[i, n] = C(i, i-n+1) lambda_{i,i-n+1} for 1 <= n < i <= N, else 0."""
    J = jump_rates(measure, max(N, 2))
    q = np.zeros((N + 1, N + 1))
    for i in range(2, N + 1):
        q[i, 1:i] = J[i, i:1:-1]
    return q


def build_kernel(measure: LambdaMeasure, c: float, N: int = 512,
                 inf_row: bool = True) -> LYKernel:
    if N < 1:
        raise ValueError("N must be at least 1")
    if c <= 0:
        raise ValueError("c must be positive")
    p1 = atom_at_one(measure)
    if inf_row:
        if not measure.is_dust:
            raise DomainError("the row for infinitely many blocks needs a dust measure")
        inf = (p1 / (p1 + c), c / (p1 + c))
    else:
        inf = None

    q = down_rates(measure, N)
    lam = q.sum(axis=1)
    K = np.zeros((N + 1, N + 1))
    K[1, 1] = 1.0
    delta = 0.0
    for i in range(2, N + 1):
        rate = lam[i] + c
        K[i, :i] = (q[i, 1:i] @ K[1:i, :i]) / rate
        K[i, i] = c / rate
        tiny = (K[i] > 0) & (K[i] < UNDERFLOW)
        if tiny.any():
            s_before = K[i].sum()
            K[i, tiny] = 0.0
            K[i] /= K[i].sum()
            delta = max(delta, abs(K[i].sum() - s_before))
    if delta:
        logger.info("kernel underflow renormalisation, max delta %.3g", delta)
    K.setflags(write=False)
    lam.setflags(write=False)
    q.setflags(write=False)
    return LYKernel(measure, float(c), N, K, lam, q, inf, delta)


def b_sequence(kernel: LYKernel, i_max: int) -> np.ndarray:
    """b_i = E[L_{i+1}(Y)] - E[L_i(Y)] for i = 1..i_max (returned 0-based)."""
    if not 1 <= i_max < kernel.N:
        raise ValueError(f"need 1 <= i_max < N={kernel.N}")
    m = kernel.means
    return np.diff(m[1:i_max + 2])
