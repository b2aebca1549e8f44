"""Exact sampling from the quenched Gibbs measure.

The return skeleton is drawn backwards from the computed partition tables:
first the last return, then each previous return given the next one.  Given
the skeleton, the path between returns is uniform, so gaps are filled with
uniform excursions and the tail with a uniform origin-avoiding walk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from .kernel import RejectionBudgetExceeded, WalkKernel, avoiding_walks, get_kernel, sample_excursion, sample_avoiding_segment
from .model import Disorder, ModelParams, fmt, replica_seed, sample_disorder, stream
from .partition import PartitionTables, compute_tables, replica_map

SKELETON_RETRIES = 100
_MATRIX_LIMIT = 2500  # largest K for which the full transition CDF matrix is kept


@dataclass
class PathSample:
    returns: list
    path: np.ndarray
    endpoint: np.ndarray
    last_hit: int
    n_returns: int


def check_path(sample: PathSample) -> None:
    """Raise AssertionError if the sample breaks a path invariant."""
    path = sample.path
    assert np.all(path[0] == 0)
    assert np.all(np.abs(np.diff(path, axis=0)) == 1)
    hits = [int(t) for t in np.flatnonzero(np.all(path == 0, axis=1)) if t > 0]
    assert hits == list(sample.returns), (hits, sample.returns)
    assert sample.n_returns == len(hits)
    assert sample.last_hit == (hits[-1] if hits else 0)
    assert np.array_equal(sample.endpoint, path[-1])


class SkeletonSampler:
    """Backward sampler of return times for one set of partition tables."""

    def __init__(self, tables: PartitionTables, kernel: WalkKernel, n: int | None = None):
        n = tables.n if n is None else n
        self.n = n
        self.K = n // 2
        logy = tables.log_pinned_norm[: self.K + 1]
        with np.errstate(divide="ignore"):
            self.log_b = np.log(kernel.b_tab[: self.K + 1])
            log_a = np.log(kernel.a_tab[: n + 1])
        self.logy = logy
        j = np.arange(self.K + 1)
        last = logy + log_a[n - 2 * j]
        self.last_cdf = _cdf(last)
        self._rows: dict = {}
        self._flat = None
        if 1 <= self.K <= _MATRIX_LIMIT:
            self._flat = self._build_matrix()

    def _row(self, k: int) -> np.ndarray:
        row = self._rows.get(k)
        if row is None:
            row = _cdf(self.logy[:k] + self.log_b[k:0:-1])
            self._rows[k] = row
        return row

    def _build_matrix(self) -> np.ndarray:
        K = self.K
        kk = np.arange(K + 1)[:, None]
        jj = np.arange(K + 1)[None, :]
        gap = kk - jj
        logw = np.where(gap >= 1, self.logy[None, :] + self.log_b[np.clip(gap, 0, K)], -np.inf)
        logw[0, 0] = 0.0
        mx = logw.max(axis=1, keepdims=True)
        w = np.exp(logw - mx)
        cdf = np.cumsum(w, axis=1)
        cdf /= cdf[:, -1:]
        return (cdf + kk).ravel()

    def sample(self, size: int, rng: np.random.Generator, keep_sets: bool = True):
        """Draw ``size`` skeletons.

        Returns (last return times, return counts, list of return-time arrays or None).
        """
        u = rng.random(size)
        j = np.searchsorted(self.last_cdf, u, side="right")
        last = 2 * j
        counts = (j > 0).astype(np.int64)
        sets = [[int(x)] if x > 0 else [] for x in j] if keep_sets else None
        cur = j.copy()
        active = np.flatnonzero(cur > 0)
        while active.size:
            u = rng.random(active.size)
            k = cur[active]
            if self._flat is not None:
                pos = np.searchsorted(self._flat, k + u, side="right")
                prev = np.minimum(pos - k * (self.K + 1), k - 1)
            else:
                prev = np.array([np.searchsorted(self._row(int(kk)), uu, side="right")
                                 for kk, uu in zip(k, u)])
            cur[active] = prev
            still = prev > 0
            counts[active[still]] += 1
            if keep_sets:
                for i, pv in zip(active[still], prev[still]):
                    sets[i].append(int(pv))
            active = active[still]
        if keep_sets:
            sets = [sorted(2 * t for t in s) for s in sets]
        return last, counts, sets


def _cdf(logw: np.ndarray) -> np.ndarray:
    w = np.exp(logw - np.max(logw))
    c = np.cumsum(w)
    return c / c[-1]


def sample_return_skeleton(tables: PartitionTables, disorder: Disorder, params: ModelParams,
                           kernel: WalkKernel, rng: np.random.Generator) -> list:
    """Return times of one path drawn from Q; exact marginal of the Gibbs measure."""
    sampler = SkeletonSampler(tables, kernel, params.n)
    return sampler.sample(1, rng)[2][0]


def fill_path(skeleton, kernel: WalkKernel, n: int, rng: np.random.Generator) -> PathSample:
    """Complete a skeleton into a full path with uniform excursions and an avoiding tail."""
    d = kernel.d
    path = np.zeros((n + 1, d), dtype=np.int32)
    prev = 0
    for t in skeleton:
        if t - prev < 2 or (t - prev) % 2:
            raise ValueError(f"invalid skeleton {skeleton}")
        path[prev:t + 1] = sample_excursion(kernel, t - prev, rng)
        prev = t
    if prev > n:
        raise ValueError(f"skeleton time {prev} beyond n = {n}")
    if prev < n:
        path[prev:] = sample_avoiding_segment(kernel, n - prev, rng)
    return PathSample(list(skeleton), path, path[-1].copy(), prev, len(skeleton))


def sample_paths(tables: PartitionTables, kernel: WalkKernel, count: int,
                 rng: np.random.Generator) -> tuple[list, dict]:
    """Full paths from Q; a skeleton whose fill exhausts the rejection budget is redrawn."""
    sampler = SkeletonSampler(tables, kernel)
    out = []
    stats = {"skeleton_resamples": 0}
    for _ in range(count):
        for attempt in range(SKELETON_RETRIES):
            skel = sampler.sample(1, rng)[2][0]
            try:
                out.append(fill_path(skel, kernel, tables.n, rng))
                break
            except RejectionBudgetExceeded:
                stats["skeleton_resamples"] += 1
        else:
            raise RejectionBudgetExceeded("path fill", SKELETON_RETRIES)
    return out, stats


def sample_endpoints(tables: PartitionTables, kernel: WalkKernel, count: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Endpoints, return counts and last-hit times of ``count`` paths from Q.

    Only the tail after the last return affects the endpoint, so the
    excursions are never materialized.
    """
    n = tables.n
    sampler = SkeletonSampler(tables, kernel)
    last, counts, _ = sampler.sample(count, rng, keep_sets=False)
    ends = np.zeros((count, kernel.d), dtype=np.int64)
    tails = n - last
    for t in np.unique(tails):
        if t == 0:
            continue
        idx = np.flatnonzero(tails == t)
        hint = kernel.a_tab[t] if t <= kernel.horizon else max(kernel.alpha, 0.01)
        walks = avoiding_walks(kernel.d, int(t), idx.size, rng, accept_hint=hint)
        ends[idx] = walks[:, -1, :]
    return ends, counts, last


def exact_endpoint_law_1d(disorder: Disorder, params: ModelParams, n: int | None = None) -> np.ndarray:
    """Law of w(n) under Q for d = 1 by forward recursion over (time, position).

    Entry ``z + n`` holds Q[w(n) = z].
    """
    law, _ = _spatial_dp_1d(disorder, params, n)
    return law


def _spatial_dp_1d(disorder: Disorder, params: ModelParams, n: int | None = None):
    n = params.n if n is None else n
    if params.d != 1:
        raise ValueError("exact endpoint law is implemented for d = 1 only")
    if n > 4000:
        raise ValueError("n <= 4000 required")
    lam, h = params.lam, params.h
    f = np.zeros(2 * n + 3)  # positions -n-1..n+1, padded
    f[n + 1] = 1.0
    log_scale = 0.0
    for i in range(1, n + 1):
        g = np.zeros_like(f)
        g[1:-1] = 0.5 * (f[:-2] + f[2:])
        w = lam * (disorder.omega[i - 1] + h)
        g *= math.exp(w)
        if disorder.eta[i - 1] == 1:
            g[n + 1] *= math.exp(-2 * w)
        s = g.sum()
        log_scale += math.log(s)
        f = g / s
    return f[1:-1].copy(), log_scale


@dataclass
class EndpointHistogram:
    mode: str
    n: int
    d: int
    bins: np.ndarray
    counts: np.ndarray
    samples: int
    lower_ci: np.ndarray
    upper_ci: np.ndarray
    per_replica: np.ndarray
    seeds: list = field(default_factory=list)
    reversed_time: bool = True

    def radius(self) -> np.ndarray:
        """|z| represented by each bin (bin centre for shells)."""
        if self.d == 1:
            return np.abs(self.bins).astype(float)
        return (self.bins + 0.5) * SHELL_WIDTH * math.sqrt(self.n)

    def tail_mass(self, threshold: float) -> tuple[float, float]:
        """Pooled fraction with |w(n)| > threshold and its standard error across replicas."""
        if self.d == 1:
            mask = np.abs(self.bins) > threshold
        else:
            mask = self.bins * SHELL_WIDTH * math.sqrt(self.n) > threshold
        per = self.per_replica[:, mask].sum(axis=1) / self.per_replica.sum(axis=1)
        mass = float(self.counts[mask].sum() / self.samples)
        if len(per) > 1:
            se = float(per.std(ddof=1) / math.sqrt(len(per)))
        else:
            se = math.sqrt(max(mass * (1 - mass), 1.0 / self.samples) / self.samples)
        return mass, se

    def to_csv(self) -> str:
        lines = ["bin,count,lower_ci,upper_ci"]
        for b, c, lo, hi in zip(self.bins, self.counts, self.lower_ci, self.upper_ci):
            lines.append(f"{int(b)},{int(c)},{fmt(lo)},{fmt(hi)}")
        return "\n".join(lines) + "\n"


SHELL_WIDTH = 0.1


def _bin_endpoints(ends: np.ndarray, n: int, d: int) -> np.ndarray:
    if d == 1:
        return ends[:, 0] + n
    r = np.sqrt((ends.astype(float) ** 2).sum(axis=1)) / math.sqrt(n)
    return np.floor(r / SHELL_WIDTH + 1e-9).astype(np.int64)


def _nbins(n: int, d: int) -> int:
    if d == 1:
        return 2 * n + 1
    return int(math.ceil(math.sqrt(d * n) / SHELL_WIDTH)) + 2


def _endpoint_job(args):
    params, seed, samples = args
    kernel = get_kernel(params.d, params.n // 2 + 1)
    dis = sample_disorder(params, seed)
    tab = compute_tables(dis, params, kernel, times=[params.n])
    ends, counts, last = sample_endpoints(tab, kernel, samples, stream(seed, 0, "skeleton"))
    return np.bincount(_bin_endpoints(ends, params.n, params.d), minlength=_nbins(params.n, params.d))


def endpoint_distribution(params: ModelParams, n: int, replicas: int, samples_per_replica: int,
                          mode: str = "annealed", base_seed: int = 0, workers: int = 1) -> EndpointHistogram:
    """Histogram of w(n) under Q (quenched, one disorder) or its disorder average (annealed).

    The forward polymer from the origin stands in for the time-reversed one;
    both have the same law, and ``reversed_time`` records the convention.
    """
    if mode not in ("quenched", "annealed"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "quenched" and replicas != 1:
        raise ValueError("quenched histograms use a single disorder (replicas = 1)")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    params = params.replace(n=n)
    seeds = [replica_seed(base_seed, r) for r in range(replicas)]
    per = np.array(replica_map(_endpoint_job, [(params, s, samples_per_replica) for s in seeds], workers))
    counts = per.sum(axis=0)
    total = int(counts.sum())
    lo, hi = proportion_confint(counts, total, alpha=0.05, method="wilson")
    bins = np.arange(-n, n + 1) if params.d == 1 else np.arange(len(counts))
    return EndpointHistogram(mode, n, params.d, bins, counts, total, np.asarray(lo), np.asarray(hi),
                             per, seeds)


@dataclass
class ReturnCountRow:
    n: int
    mean: float
    stderr: float
    lower: float
    upper: float


def _returns_job(args):
    params, seed, n_list, samples = args
    kernel = get_kernel(params.d, params.n // 2 + 1)
    dis = sample_disorder(params, seed)
    tab = compute_tables(dis, params, kernel, times=[])
    means = []
    for n in n_list:
        sub = _truncate(tab, n)
        _, counts, _ = SkeletonSampler(sub, kernel).sample(samples, stream(seed, n, "skeleton"), keep_sets=False)
        means.append(counts.mean())
    return means


def _truncate(tables: PartitionTables, n: int) -> PartitionTables:
    """Tables for the same disorder at a shorter horizon (prefix of the longer one)."""
    return PartitionTables(tables.params.replace(n=n), tables.log_zhat[: n // 2 + 1],
                           tables.log_z[: n + 1], tables.log_psi[: n + 1], tables.cum_field[: n + 1])


def return_count_stats(params: ModelParams, n_list, replicas: int, samples: int,
                       base_seed: int = 0, workers: int = 1) -> list[ReturnCountRow]:
    """E_Q[N_n] per horizon, averaged over disorder, with 95% normal intervals across replicas."""
    n_list = sorted(int(n) for n in n_list)
    top = params.replace(n=n_list[-1])
    seeds = [replica_seed(base_seed, r) for r in range(replicas)]
    rows = np.array(replica_map(_returns_job, [(top, s, n_list, samples) for s in seeds], workers))
    out = []
    for i, n in enumerate(n_list):
        col = rows[:, i]
        mean = float(col.mean())
        se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else float("nan")
        out.append(ReturnCountRow(n, mean, se, mean - 1.96 * se, mean + 1.96 * se))
    return out


def no_return_probability(tables: PartitionTables, kernel: WalkKernel, n: int | None = None) -> float:
    """Q[w(i) != 0 for all 0 < i <= n] = a_n / Psi^n."""
    n = tables.n if n is None else n
    return float(kernel.a_tab[n] * math.exp(-tables.log_psi[n]))
