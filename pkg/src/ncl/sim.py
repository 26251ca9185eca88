"""Monte Carlo for the nested coalescent and for L_n(Y).

Species die at rate c each. A dying species' lineages join a uniformly chosen
survivor; when a death fires while exactly m species remain, the m lineage
counts are recorded (the left limit at the last time m species exist) and the
run stops. Inside a species with n lineages, k-mergers happen at total rate
C(n,k) lambda_{n,k}. A count of infinity is symbolic: under dust it changes
only by a full collapse to one lineage, at rate P(X = 1).

Events are drawn by the direct (Gillespie) method with a Fenwick tree over
per-species rates. The inner loops are compiled with numba.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numba
import numpy as np

from .measure import LambdaMeasure, atom_at_one, jump_rates
from .rde import ExtDist

logger = logging.getLogger(__name__)

INF = -1  # symbolic infinite count inside the compiled code
MAX_TABLE = 6000  # (b_cap + 1)^2 doubles; 6000 is about 290 MB


@dataclass(frozen=True)
class SimConfig:
    s: int
    m: int
    c: float
    measure: LambdaMeasure
    init: str = "one"  # "one" or "inf"
    replicates: int = 1000
    seed: int = 0
    b_cap: int | None = None

    def __post_init__(self):
        if self.s < 2:
            raise ValueError("s must be at least 2")
        if not 1 <= self.m <= self.s:
            raise ValueError("need 1 <= m <= s")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.init not in ("one", "inf"):
            raise ValueError("init must be 'one' or 'inf'")

    @property
    def table_size(self) -> int:
        # finite counts never exceed s: they start at 1 (or 1 after a collapse)
        # and only grow by adding whole species
        return max(self.b_cap or self.s, 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measure"] = self.measure.to_dict()
        d["b_cap"] = self.table_size
        return d


@lru_cache(maxsize=4)
def merger_tables(measure: LambdaMeasure, b_max: int):
    """(lambda_b, cdf) with cdf[b, k] = P(merger size <= k | b blocks)."""
    if b_max > MAX_TABLE:
        raise MemoryError(f"rate table for b up to {b_max} exceeds the memory budget")
    J = jump_rates(measure, b_max)
    lam = J.sum(axis=1)
    lam[:2] = 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        cdf = np.cumsum(J, axis=1) / lam[:, None]
    cdf[:2] = 1.0
    for b in range(2, b_max + 1):
        cdf[b, b:] = 1.0
    return lam, np.ascontiguousarray(cdf)


# -- compiled core -----------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _fen_add(tree, i, delta):
    n = tree.size - 1
    i += 1
    while i <= n:
        tree[i] += delta
        i += i & (-i)


@numba.njit(cache=True, nogil=True)
def _fen_build(tree, vals, size):
    tree[:] = 0.0
    for i in range(size):
        tree[i + 1] = vals[i]
    n = tree.size - 1
    for i in range(1, n + 1):
        j = i + (i & (-i))
        if j <= n:
            tree[j] += tree[i]


@numba.njit(cache=True, nogil=True)
def _fen_find(tree, target):
    """Smallest 0-based index whose prefix sum exceeds target."""
    n = tree.size - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step //= 2
    return pos


@numba.njit(cache=True, nogil=True)
def _rate(n, lam, p1):
    if n == -1:
        return p1
    return lam[n]


@numba.njit(cache=True, nogil=True)
def _sample_merge(rng, n, cdf):
    u = rng.random()
    k = np.searchsorted(cdf[n, 2:n + 1], u, side="right") + 2
    if k > n:
        k = n
    return n - k + 1


@numba.njit(cache=True, nogil=True)
def _run_once(rng, s, m, c, init_inf, lam, cdf, p1, out):
    cnt = np.empty(s, dtype=np.int64)
    rt = np.zeros(s)
    tree = np.zeros(s + 1)
    first = -1 if init_inf else 1
    for i in range(s):
        cnt[i] = first
        rt[i] = _rate(first, lam, p1)
    _fen_build(tree, rt, s)
    lin = 0.0
    for i in range(s):
        lin += rt[i]
    S = s
    since = 0
    b_cap = lam.size - 1
    while True:
        since += 1
        if since > s:
            _fen_build(tree, rt, S)
            lin = 0.0
            for i in range(S):
                lin += rt[i]
            since = 0
        if lin < 0.0:
            lin = 0.0
        death = c * S
        u = rng.random() * (death + lin)
        if u < death:
            d = int(rng.random() * S)
            if d >= S:
                d = S - 1
            if S == m:
                for i in range(m):
                    out[i] = cnt[i]
                # shuffle so coordinates are exchangeable regardless of slot order
                for i in range(m - 1, 0, -1):
                    j = int(rng.random() * (i + 1))
                    if j > i:
                        j = i
                    tmp = out[i]
                    out[i] = out[j]
                    out[j] = tmp
                return 0
            t = int(rng.random() * (S - 1))
            if t >= S - 1:
                t = S - 2
            if t >= d:
                t += 1
            if cnt[t] == -1 or cnt[d] == -1:
                new = -1
            else:
                new = cnt[t] + cnt[d]
                if new > b_cap:
                    return 1
            cnt[t] = new
            r_new = _rate(new, lam, p1)
            _fen_add(tree, t, r_new - rt[t])
            lin += r_new - rt[t]
            rt[t] = r_new
            last = S - 1
            lin -= rt[d]
            if d != last:
                _fen_add(tree, d, rt[last] - rt[d])
                cnt[d] = cnt[last]
                rt[d] = rt[last]
            _fen_add(tree, last, -rt[last])
            rt[last] = 0.0
            cnt[last] = 0
            S -= 1
        else:
            pos = _fen_find(tree, u - death)
            if pos >= S or rt[pos] <= 0.0:
                since = s + 1  # drift in the running sums; rebuild and redraw
                continue
            n = cnt[pos]
            if n == -1:
                new = 1
            else:
                new = _sample_merge(rng, n, cdf)
            cnt[pos] = new
            r_new = _rate(new, lam, p1)
            _fen_add(tree, pos, r_new - rt[pos])
            lin += r_new - rt[pos]
            rt[pos] = r_new


@numba.njit(cache=True, nogil=True)
def _lny_chunk(rng, n, reps, c, lam, cdf, hist):
    for _ in range(reps):
        b = n
        while b > 1:
            if rng.random() * (lam[b] + c) < c:
                break
            b = _sample_merge(rng, b, cdf)
        hist[b] += 1


# -- drivers -----------------------------------------------------------------

def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def _threads(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("NCL_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_once(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """One realisation; returns m counts as floats with inf for symbolic infinity."""
    lam, cdf = merger_tables(config.measure, config.table_size)
    out = np.zeros(config.m, dtype=np.int64)
    status = _run_once(rng, config.s, config.m, float(config.c), config.init == "inf",
                       lam, cdf, atom_at_one(config.measure), out)
    if status:
        raise MemoryError("finite count exceeded b_cap")
    res = out.astype(float)
    res[out == INF] = math.inf
    return res


@dataclass
class SimResult:
    config: SimConfig
    counts: np.ndarray  # (replicates, m); inf marks a symbolic infinite count
    runtime: float = field(default=0.0, compare=False)

    def marginal_pmf(self, cutoff: int = 50, coord: int | None = None) -> np.ndarray:
        """Empirical masses at 1..cutoff followed by one bucket for > cutoff (incl. inf)."""
        x = self.counts if coord is None else self.counts[:, coord]
        x = x.ravel()
        h = np.zeros(cutoff + 1)
        fin = x[x <= cutoff].astype(int)
        np.add.at(h, fin - 1, 1.0)
        h[cutoff] = np.count_nonzero(x > cutoff)
        return h / x.size

    def correlations(self) -> np.ndarray:
        """Pairwise Pearson correlations on replicates where both counts are finite."""
        m = self.config.m
        out = np.full((m, m), np.nan)
        for i in range(m):
            for j in range(m):
                a, b = self.counts[:, i], self.counts[:, j]
                ok = np.isfinite(a) & np.isfinite(b)
                if ok.sum() > 2 and a[ok].std() > 0 and b[ok].std() > 0:
                    out[i, j] = np.corrcoef(a[ok], b[ok])[0, 1]
        return out

    def max_abs_correlation(self) -> float:
        c = self.correlations()
        off = c[~np.eye(c.shape[0], dtype=bool)]
        off = off[np.isfinite(off)]
        return float(np.abs(off).max()) if off.size else 0.0

    def tv_to(self, ref: ExtDist, cutoff: int = 50) -> np.ndarray:
        """Per-coordinate TV to ``ref`` on the buckets {1..cutoff, > cutoff}."""
        r = np.empty(cutoff + 1)
        r[:cutoff] = ref.p[1:cutoff + 1]
        r[cutoff] = max(0.0, 1.0 - r[:cutoff].sum())
        return np.array([0.5 * np.abs(self.marginal_pmf(cutoff, j) - r).sum()
                         for j in range(self.config.m)])


def run_many(config: SimConfig, threads: int | None = None) -> SimResult:
    """Independent replicates, replicate i driven by substream (seed, i).

    Results are written by replicate index, so any thread count gives the
    same bytes.
    """
    lam, cdf = merger_tables(config.measure, config.table_size)
    p1 = atom_at_one(config.measure)
    out = np.zeros((config.replicates, config.m), dtype=np.int64)
    init_inf = config.init == "inf"
    c = float(config.c)

    def work(lo, hi):
        for i in range(lo, hi):
            if _run_once(_stream(config.seed, i), config.s, config.m, c, init_inf,
                         lam, cdf, p1, out[i]):
                raise MemoryError("finite count exceeded b_cap")

    t0 = time.perf_counter()
    nt = min(_threads(threads), config.replicates)
    bounds = np.linspace(0, config.replicates, nt + 1).astype(int)
    if nt == 1:
        work(0, config.replicates)
    else:
        with ThreadPoolExecutor(nt) as ex:
            list(ex.map(work, bounds[:-1], bounds[1:]))
    counts = out.astype(float)
    counts[out == INF] = math.inf
    dt = time.perf_counter() - t0
    logger.info("%d replicates with s=%d in %.2fs", config.replicates, config.s, dt)
    return SimResult(config, counts, dt)


LNY_CHUNK = 1 << 16


def simulate_lny(measure: LambdaMeasure, c: float, n: int, replicates: int,
                 seed: int = 0) -> np.ndarray:
    """Empirical law of L_n(Y) from the jump chain; entry k is the frequency of k."""
    if n < 1:
        raise ValueError("n must be positive")
    lam, cdf = merger_tables(measure, max(n, 2))
    hist = np.zeros(n + 1, dtype=np.int64)
    done = 0
    chunk = 0
    while done < replicates:
        todo = min(LNY_CHUNK, replicates - done)
        _lny_chunk(_stream(seed, chunk), n, todo, float(c), lam, cdf, hist)
        done += todo
        chunk += 1
    return hist / replicates
