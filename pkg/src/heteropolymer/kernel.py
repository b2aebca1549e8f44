"""Disorder-free combinatorics of the directed walk.

Each of the ``d`` transverse coordinates moves by +-1 per step, so the walk is
a product of ``d`` independent simple walks.  Returns to the origin happen only
at even times.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .model import fmt

CLAMP = 1e-300
REJECTION_BUDGET = 1_000_000


class RejectionBudgetExceeded(RuntimeError):
    def __init__(self, what: str, attempts: int):
        super().__init__(f"{what}: rejection budget exhausted after {attempts} attempts")
        self.attempts = attempts


@dataclass(frozen=True, eq=False)
class WalkKernel:
    """Return, first-return and survival tables.

    ``p_tab[k]``: P[w(2k) = 0].  ``b_tab[k]``: P[first return at 2k].
    ``a_tab[m]``: P[no return within m steps], defined for every m <= 2 n_max.
    """

    d: int
    n_max: int
    p_tab: np.ndarray
    b_tab: np.ndarray
    a_tab: np.ndarray
    alpha: float
    alpha_error: float
    clamped: int = 0

    @property
    def horizon(self) -> int:
        """Largest number of steps the tables cover."""
        return 2 * self.n_max

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps({"d": self.d, "n_max": self.n_max, "alpha": self.alpha,
                                     "alpha_error": self.alpha_error, "clamped": self.clamped}) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "p_k", "b_k", "a_2k"])
        for k in range(self.n_max + 1):
            writer.writerow([k, fmt(self.p_tab[k]), fmt(self.b_tab[k]), fmt(self.a_tab[2 * k])])
        return buf.getvalue()


def central_binomial_ratios(k_max: int) -> np.ndarray:
    """C(2k, k) / 4^k for k = 0..k_max via r_{k+1} = r_k (2k+1)/(2k+2)."""
    k = np.arange(k_max, dtype=np.float64)
    factors = (2 * k + 1) / (2 * k + 2)
    return np.concatenate(([1.0], np.cumprod(factors)))


def first_return_from_returns(p: np.ndarray) -> np.ndarray:
    """Invert the renewal equation p_k = sum_{j=1..k} b_j p_{k-j}."""
    b = np.zeros_like(p)
    for k in range(1, len(p)):
        # p[k-1:0:-1] = p_{k-1}, ..., p_1 pairs with b_1, ..., b_{k-1}
        b[k] = p[k] - np.dot(b[1:k], p[k - 1:0:-1])
    return b


def renewal_reconstruct(b: np.ndarray) -> np.ndarray:
    """Rebuild p from b; the inverse of :func:`first_return_from_returns`."""
    p = np.zeros_like(b)
    p[0] = 1.0
    for k in range(1, len(b)):
        p[k] = np.dot(b[1:k + 1], p[k - 1::-1])
    return p


def build_kernel(d: int, n_max: int) -> WalkKernel:
    if d < 1 or n_max < 1:
        raise ValueError("need d >= 1 and n_max >= 1")
    p = central_binomial_ratios(n_max) ** d
    b = first_return_from_returns(p)
    small = b < CLAMP
    small[0] = False
    clamped = int(small.sum())
    b[small] = 0.0
    b[0] = 0.0
    # survival over m steps only changes at even m
    a_even = 1.0 - np.concatenate(([0.0], np.cumsum(b[1:])))
    a = np.repeat(a_even, 2)[: 2 * n_max + 1]
    a = np.minimum.accumulate(np.clip(a, 0.0, 1.0))
    alpha, err = escape_probability(d, max(n_max, 1_000_000)) if d >= 3 else (0.0, 0.0)
    return WalkKernel(d, n_max, p, b, a, alpha, err, clamped)


_KERNELS: dict = {}


def get_kernel(d: int, n_max: int) -> WalkKernel:
    """Shared kernel covering at least ``n_max``; tables are reused across calls."""
    cached = _KERNELS.get(d)
    if cached is None or cached.n_max < n_max:
        cached = build_kernel(d, max(n_max, 64))
        _KERNELS[d] = cached
    return cached


def escape_probability(d: int, n_max: int = 1_000_000, tail_tol: float = 1e-8) -> tuple[float, float]:
    """Probability that the walk never returns to the origin, with an error bound.

    The series sum_k p_k is summed to ``n_max``; its tail is bracketed using
    1/sqrt(pi (k + 1/2)) < C(2k,k)/4^k <= 1/sqrt(pi (k + 1/4)) and integral
    comparison.  The returned error is the half-width of the resulting interval
    for alpha plus a rounding allowance; if it exceeds ``tail_tol`` it is still
    reported, never hidden.
    """
    if d <= 2:
        return 0.0, 0.0
    terms = central_binomial_ratios(n_max) ** d
    partial = math.fsum(terms)
    e = d / 2.0
    scale = math.pi ** (-e) / (e - 1.0)
    tail_lo = scale * (n_max + 1.5) ** (1.0 - e)
    tail_hi = scale * (n_max + 0.25) ** (1.0 - e)
    rounding = 4 * n_max * np.finfo(float).eps * partial
    alpha_hi = 1.0 / (partial + tail_lo - rounding)
    alpha_lo = 1.0 / (partial + tail_hi + rounding)
    alpha = 0.5 * (alpha_hi + alpha_lo)
    error = 0.5 * (alpha_hi - alpha_lo)
    return alpha, error


def escape_probability_mc(d: int, walks: int, steps: int, rng: np.random.Generator,
                          batch: int = 500) -> tuple[float, float]:
    """Fraction of ``walks`` free walks of ``steps`` steps that never revisit 0, with its standard error."""
    survivors = 0
    done = 0
    while done < walks:
        m = min(batch, walks - done)
        at_zero = np.ones((m, steps // 2), dtype=bool)
        for _ in range(d):
            bits = rng.integers(0, 2, size=(m, steps), dtype=np.int8)
            pos = np.cumsum(2 * bits - 1, axis=1, dtype=np.int16)
            at_zero &= pos[:, 1::2] == 0
        survivors += int(np.count_nonzero(~at_zero.any(axis=1)))
        done += m
    frac = survivors / walks
    return frac, math.sqrt(frac * (1 - frac) / walks)


def _bridges(m: int, d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` products of uniform +-1 bridges of length 2m, as positions (count, 2m+1, d)."""
    base = np.concatenate((np.ones(m, np.int8), -np.ones(m, np.int8)))
    steps = np.broadcast_to(base, (count, d, 2 * m))
    steps = rng.permuted(steps, axis=2)
    pos = np.zeros((count, 2 * m + 1, d), dtype=np.int32)
    pos[:, 1:, :] = np.cumsum(steps, axis=2, dtype=np.int32).transpose(0, 2, 1)
    return pos


def sample_excursion(kernel: WalkKernel, length: int, rng: np.random.Generator,
                     budget: int = REJECTION_BUDGET) -> np.ndarray:
    """Uniform path of ``length`` steps from 0 back to 0 avoiding 0 in between.

    Returns positions of shape (length + 1, d).
    """
    if length < 2 or length % 2:
        raise ValueError(f"excursion length must be even and >= 2, got {length}")
    m = length // 2
    d = kernel.d
    if m == 1:
        path = np.zeros((3, d), dtype=np.int32)
        path[1] = 2 * rng.integers(0, 2, size=d) - 1
        return path
    if m <= kernel.n_max and kernel.b_tab[m] == 0.0:
        raise ValueError(f"no excursions of length {length} in the tables")
    attempts = 0
    accept = kernel.b_tab[m] / kernel.p_tab[m] if m <= kernel.n_max else 0.1
    while attempts < budget:
        count = int(min(budget - attempts, max(8, 2.0 / max(accept, 1e-6)), 4096))
        pos = _bridges(m, d, count, rng)
        attempts += count
        hits = np.all(pos[:, 1:-1, :] == 0, axis=2).any(axis=1)
        good = np.flatnonzero(~hits)
        if good.size:
            return pos[good[0]]
    raise RejectionBudgetExceeded(f"excursion of length {length}", attempts)


def avoiding_walks(d: int, m: int, count: int, rng: np.random.Generator,
                   budget: int = REJECTION_BUDGET, accept_hint: float = 0.5) -> np.ndarray:
    """``count`` independent uniform walks of ``m`` steps that never revisit 0.

    Rejection from the free walk.  Returns positions (count, m+1, d).
    """
    out = np.empty((count, m + 1, d), dtype=np.int32)
    filled = 0
    attempts = 0
    while filled < count:
        if attempts >= budget:
            raise RejectionBudgetExceeded(f"avoiding segment of length {m}", attempts)
        need = count - filled
        batch = int(min(budget - attempts, max(16, 1.2 * need / max(accept_hint, 1e-6)),
                        max(16, 4_000_000 // max(m * d, 1))))
        steps = 2 * rng.integers(0, 2, size=(batch, m, d), dtype=np.int8) - 1
        pos = np.zeros((batch, m + 1, d), dtype=np.int32)
        pos[:, 1:, :] = np.cumsum(steps, axis=1, dtype=np.int32)
        attempts += batch
        ok = ~np.all(pos[:, 1:, :] == 0, axis=2).any(axis=1)
        good = pos[ok][:need]
        out[filled:filled + len(good)] = good
        filled += len(good)
    return out


def sample_avoiding_segment(kernel: WalkKernel, length: int, rng: np.random.Generator,
                            budget: int = REJECTION_BUDGET) -> np.ndarray:
    """Uniform walk of ``length`` steps from 0 that never comes back to 0; shape (length+1, d)."""
    if length < 1:
        raise ValueError("segment length must be >= 1")
    hint = kernel.a_tab[length] if length <= kernel.horizon else max(kernel.alpha, 0.01)
    return avoiding_walks(kernel.d, length, 1, rng, budget, hint)[0]


@dataclass
class RatioGrowth:
    k: np.ndarray
    ratio: np.ndarray
    slope: float
    c1: float


def ratio_growth_check(kernel: WalkKernel, k_max: int | None = None) -> RatioGrowth:
    """Ratios a_{2k} / b_k, their log-log slope and the smallest c1 with ratio <= c1 k^d."""
    k_max = kernel.n_max if k_max is None else k_max
    if k_max > kernel.n_max:
        raise ValueError(f"tables only reach k = {kernel.n_max}")
    k = np.arange(1, k_max + 1)
    b = kernel.b_tab[1:k_max + 1]
    keep = b > 0
    k = k[keep]
    ratio = kernel.a_tab[2 * k] / b[keep]
    slope = float(np.polyfit(np.log(k), np.log(ratio), 1)[0]) if len(k) > 1 else float("nan")
    c1 = float(np.max(ratio / k.astype(float) ** kernel.d))
    return RatioGrowth(k, ratio, slope, c1)


def axis_avoidance(kernel_1d: WalkKernel, d: int, n: int) -> float:
    """P[no coordinate of the d-dimensional walk is ever 0 in 1..n] = (a^1_n)^d."""
    if kernel_1d.d != 1:
        raise ValueError("needs the one-dimensional kernel")
    return float(kernel_1d.a_tab[n] ** d)
