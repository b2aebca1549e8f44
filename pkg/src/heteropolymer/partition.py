"""Quenched partition sums by renewal over returns to the droplet axis.

Off the axis the sign field is +1, so between two returns the Gibbs weight
is exp of a field prefix sum and does not depend on the path.  Everything
reduces to a one-dimensional recursion over return times:

    y_k = g_k * sum_{j<k} y_j b_{k-j},       y_0 = 1
    Psi^m = sum_{2j <= m} y_j a_{m-2j}

with g_k = exp(-2 lam (omega_2k + h)) on a droplet and 1 otherwise.  Here
y_k = Zhat^{2k} exp(-F(2k)) with F the prefix sum of lam (omega_i + h), and
Z^m = exp(F(m)) Psi^m.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .kernel import WalkKernel, get_kernel
from .model import MAX_HORIZON, Disorder, ModelParams, replica_seed, sample_disorder

_RESCALE = 230.0  # rescale the linear accumulator once values pass e^230


@njit(cache=True)
def _pinned_renewal(b, log_g, K):
    # scaled linear accumulator: y_j = Y[j] * exp(shift)
    Y = np.empty(K + 1)
    logy = np.empty(K + 1)
    Y[0] = 1.0
    logy[0] = 0.0
    shift = 0.0
    for k in range(1, K + 1):
        s = 0.0
        for j in range(k):
            s += Y[j] * b[k - j]
        lv = math.log(s) + log_g[k]
        if lv > _RESCALE:
            f = math.exp(-lv)
            for j in range(k):
                Y[j] *= f
            shift += lv
            lv = 0.0
        Y[k] = math.exp(lv)
        logy[k] = lv + shift
    return logy


@njit(cache=True)
def _free_from_pinned(logy, log_a, n, want):
    # streaming log-sum-exp: running max and rescaled accumulator
    out = np.full(n + 1, np.nan)
    for m in range(n + 1):
        if not want[m]:
            continue
        mx = -np.inf
        acc = 0.0
        for j in range(m // 2 + 1):
            t = logy[j] + log_a[m - 2 * j]
            if t == -np.inf:
                continue
            if t > mx:
                acc = acc * math.exp(mx - t) + 1.0
                mx = t
            else:
                acc += math.exp(t - mx)
        out[m] = mx + math.log(acc)
    return out


@dataclass(eq=False)
class PartitionTables:
    """Log partition sums for one disorder realization.

    ``log_zhat[k]`` is log Zhat at time 2k; ``log_z``, ``log_psi`` and
    ``cum_field`` are indexed by time m = 0..n.  Entries of ``log_z`` and
    ``log_psi`` that were not requested are NaN.
    """

    params: ModelParams
    log_zhat: np.ndarray
    log_z: np.ndarray
    log_psi: np.ndarray
    cum_field: np.ndarray

    @property
    def n(self) -> int:
        return len(self.cum_field) - 1

    @property
    def log_pinned_norm(self) -> np.ndarray:
        """log y_k = log Zhat^{2k} - F(2k)."""
        return self.log_zhat - self.cum_field[0::2]


def _check_horizon(disorder: Disorder, params: ModelParams, kernel: WalkKernel, n: int):
    if n > MAX_HORIZON:
        raise ValueError(f"horizon {n} exceeds the cap {MAX_HORIZON}; "
                         "reduce n and raise the replica count instead")
    if disorder.n < n:
        raise ValueError(f"disorder has {disorder.n} monomers, horizon needs {n}")
    if kernel.d != params.d:
        raise ValueError(f"kernel is for d={kernel.d}, params have d={params.d}")
    if kernel.n_max < n // 2:
        raise ValueError(f"kernel horizon {kernel.n_max} < n/2 = {n // 2}")


def cumulative_field(disorder: Disorder, params: ModelParams, n: int | None = None) -> np.ndarray:
    n = params.n if n is None else n
    field_ = params.lam * (disorder.omega[:n].astype(np.float64) + params.h)
    return np.concatenate(([0.0], np.cumsum(field_)))


def _log_charges(disorder: Disorder, params: ModelParams, K: int) -> np.ndarray:
    """log g_k for k = 0..K: the extra weight of a return at time 2k."""
    omega = disorder.omega[1:2 * K:2].astype(np.float64)
    eta = disorder.eta[1:2 * K:2]
    charge = np.where(eta == 1, -2.0 * params.lam * (omega + params.h), 0.0)
    return np.concatenate(([0.0], charge))


def pinned_log_partition(disorder: Disorder, params: ModelParams, kernel: WalkKernel) -> np.ndarray:
    """log Zhat^{2k} for k = 0..n//2 (paths pinned at the origin at time 2k)."""
    n = params.n
    _check_horizon(disorder, params, kernel, n)
    K = n // 2
    if params.lam == 0:
        # all weights are 1: Zhat is the return probability
        return np.log(kernel.p_tab[:K + 1])
    logy = _pinned_renewal(kernel.b_tab[:K + 1], _log_charges(disorder, params, K), K)
    return logy + cumulative_field(disorder, params)[0::2]


def free_log_partition(disorder: Disorder, params: ModelParams, kernel: WalkKernel,
                       log_zhat: np.ndarray, times=None) -> np.ndarray:
    """log Z^m by decomposing over the last return; ``times`` restricts the output (others NaN)."""
    n = params.n
    _check_horizon(disorder, params, kernel, n)
    if params.lam == 0:
        # Z is a total probability
        return np.zeros(n + 1)
    cum = cumulative_field(disorder, params)
    want = np.ones(n + 1, dtype=np.bool_)
    if times is not None:
        want[:] = False
        want[np.asarray(times, dtype=np.int64)] = True
    with np.errstate(divide="ignore"):
        log_a = np.log(kernel.a_tab[:n + 1])
    log_psi = _free_from_pinned(log_zhat - cum[0::2], log_a, n, want)
    return log_psi + cum


def psi(tables: PartitionTables) -> np.ndarray:
    """log Psi^m = log Z^m - F(m)."""
    return tables.log_z - tables.cum_field


def compute_tables(disorder: Disorder, params: ModelParams, kernel: WalkKernel | None = None,
                   times=None) -> PartitionTables:
    kernel = get_kernel(params.d, params.n // 2 + 1) if kernel is None else kernel
    log_zhat = pinned_log_partition(disorder, params, kernel)
    log_z = free_log_partition(disorder, params, kernel, log_zhat, times)
    cum = cumulative_field(disorder, params)
    tables = PartitionTables(params, log_zhat, log_z, np.empty(0), cum)
    tables.log_psi = psi(tables)
    return tables


def supermartingale_step_check(params: ModelParams, kernel: WalkKernel | None = None,
                               at_origin_mass: float = 1.0) -> float:
    """Disorder-averaged one-step factor of Psi given arrival mass q at the origin.

    1 - q p (1 - (exp(-2 lam (1 + h)) + exp(2 lam (1 - h))) / 2); the factor is
    <= 1 exactly when the bracket is >= 0.  ``kernel`` is accepted for
    symmetry with the other checks and is not needed for the closed form.
    """
    lam, h, p = params.lam, params.h, params.p
    bracket = 1.0 - 0.5 * (math.exp(-2 * lam * (1 + h)) + math.exp(2 * lam * (1 - h)))
    return 1.0 - at_origin_mass * p * bracket


@dataclass
class FreeEnergyEstimate:
    phi_hat: float
    stderr: float
    n: int
    replicas: int
    psi_p_hat: float
    per_replica: np.ndarray
    pinned_hat: float
    pinned_per_replica: np.ndarray
    seeds: list = field(default_factory=list)


def _replica_row(args):
    params, seed, times = args
    kernel = get_kernel(params.d, params.n // 2 + 1)
    dis = sample_disorder(params, seed)
    tab = compute_tables(dis, params, kernel, times=times)
    return tab.log_z, tab.log_zhat, tab.cum_field


def replica_map(fn, jobs, workers: int = 1):
    """Map ``fn`` over ``jobs`` keeping job order; results do not depend on ``workers``."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def free_energy_estimate(params: ModelParams, replicas: int, base_seed: int,
                         workers: int = 1) -> FreeEnergyEstimate:
    """Replica average of (1/n) log Z^n, with the pinned estimator as a cross-check."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    n = params.n
    n_even = n - n % 2
    seeds = [replica_seed(base_seed, r) for r in range(replicas)]
    rows = replica_map(_replica_row, [(params, s, [n]) for s in seeds], workers)
    free = np.array([lz[n] / n for lz, _, _ in rows])
    if n_even:
        pinned = np.array([lzh[n_even // 2] / n_even for _, lzh, _ in rows])
    else:
        pinned = np.full(replicas, np.nan)
    phi = float(free.mean())
    se = float(free.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("nan")
    return FreeEnergyEstimate(phi, se, n, replicas, phi - params.lam * params.h, free,
                              float(pinned.mean()), pinned, seeds)


def sandwich_log_gap(params: ModelParams, c1: float, half_time: int) -> float:
    """Upper bound on log Z^{2K} - log Zhat^{2K} for K = ``half_time``.

    Uses the last-excursion factor exp(2 lam (1 + |h|)): replacing a final
    off-axis step by a pinned one changes the weight by at most that much.
    """
    return math.log1p(c1 * half_time ** params.d * math.exp(2 * params.lam * (1 + abs(params.h))))


@dataclass
class BruteForce:
    log_z: float
    log_zhat: float
    endpoint_law: dict
    mean_returns: float
    skeleton_law: dict

    @property
    def z(self) -> float:
        return math.exp(self.log_z)

    @property
    def zhat(self) -> float:
        return math.exp(self.log_zhat)


def brute_force_partition(disorder: Disorder, params: ModelParams, n: int | None = None) -> BruteForce:
    """Sum over every path of length n; independent of the renewal recursion."""
    n = params.n if n is None else n
    d = params.d
    if d * n > 24:
        raise ValueError(f"(2^d)^n = 2^{d * n} paths exceeds the enumeration cap 2^24")
    if disorder.n < n:
        raise ValueError("disorder shorter than n")
    omega = disorder.omega[:n].astype(np.float64)
    droplet = disorder.eta[:n] == 1
    total = 1 << (d * n)
    logw_parts, ends, returns = [], [], []
    chunk = 1 << 16
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        bits = (idx[:, None] >> np.arange(d * n)) & 1
        steps = (2 * bits - 1).reshape(-1, n, d)
        pos = np.cumsum(steps, axis=1)
        origin = np.all(pos == 0, axis=2)
        sign = np.where(origin & droplet, -1.0, 1.0)
        logw_parts.append(params.lam * (sign * (omega + params.h)).sum(axis=1))
        ends.append(pos[:, -1, :])
        returns.append(origin)
    logw = np.concatenate(logw_parts) - d * n * math.log(2)
    ends = np.concatenate(ends)
    origin = np.concatenate(returns)
    log_z = float(logsumexp(logw))
    pinned = np.all(ends == 0, axis=1)
    log_zhat = float(logsumexp(logw[pinned])) if pinned.any() else -math.inf
    q = np.exp(logw - log_z)
    endpoint_law: dict = {}
    for key, mass in zip(map(tuple, ends.tolist()), q):
        endpoint_law[key] = endpoint_law.get(key, 0.0) + mass
    skeleton_law: dict = {}
    for row, mass in zip(origin, q):
        key = tuple(int(t) + 1 for t in np.flatnonzero(row))
        skeleton_law[key] = skeleton_law.get(key, 0.0) + mass
    mean_returns = float(np.dot(q, origin.sum(axis=1)))
    return BruteForce(log_z, log_zhat, endpoint_law, mean_returns, skeleton_law)


@dataclass
class SuperadditivityResult:
    holds: bool
    slack: float
    pinned_slack: float
    block_logs: np.ndarray


def superadditivity_check(disorder: Disorder, params: ModelParams, kernel: WalkKernel,
                          N: int, k: int, tol: float = 1e-9) -> SuperadditivityResult:
    """Check log Z^{kN} >= sum_j log Zhat(block j) for k consecutive pinned blocks of length N.

    ``pinned_slack`` is the same comparison against log Zhat^{kN}, which also
    dominates the block product.
    """
    if N % 2 or N < 2 or k < 1:
        raise ValueError("need N even and positive, k >= 1")
    horizon = k * N
    if horizon > disorder.n:
        raise ValueError("k N exceeds the disorder length")
    whole = params.replace(n=horizon)
    tab = compute_tables(disorder, whole, kernel, times=[horizon])
    block = params.replace(n=N)
    logs = np.array([pinned_log_partition(disorder.window(j * N, N), block, kernel)[-1]
                     for j in range(k)])
    slack = float(tab.log_z[horizon] - logs.sum())
    pinned_slack = float(tab.log_zhat[horizon // 2] - logs.sum())
    return SuperadditivityResult(slack >= -tol, slack, pinned_slack, logs)
