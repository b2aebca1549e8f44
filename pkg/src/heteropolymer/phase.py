"""Phase classification, critical-curve bisection and tail diagnostics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .kernel import WalkKernel, get_kernel
from .model import ModelParams, replica_seed, sample_disorder
from .partition import compute_tables, replica_map
from .sampler import EndpointHistogram

LOCALIZED = "Localized"
DELOCALIZED = "Delocalized"
UNCERTAIN = "Uncertain"

SHRINK = 0.65  # Psi_p estimate at 2n must fall below this fraction of the value at n


class BoundaryWarning(UserWarning):
    pass


def bound_localized(lam: float, p: float, d: int) -> float:
    """h below this value is localized: 1 - (2d - (1 - p)) log 2 / (p lam)."""
    if p <= 0 or lam <= 0:
        raise ValueError("the localization bound needs p > 0 and lambda > 0")
    return 1.0 - (2 * d - (1 - p)) * math.log(2) / (p * lam)


def _log_cosh(x: float) -> float:
    return float(np.logaddexp(x, -x) - math.log(2))


def bound_delocalized(lam: float) -> float:
    """h at or above (1 / 2 lam) log cosh(2 lam) is delocalized."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        warnings.warn("lambda = 0: returning the limit value 0", BoundaryWarning, stacklevel=2)
        return 0.0
    return _log_cosh(2 * lam) / (2 * lam)


def diffusive_threshold(lam: float, d: int, kernel: WalkKernel | None = None) -> float:
    """Smallest h for which diffusive behaviour is guaranteed (needs d >= 3)."""
    if d < 3:
        raise ValueError("the diffusive regime is only established for d >= 3")
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    alpha = (kernel if kernel is not None else get_kernel(d, 64)).alpha
    return max(bound_delocalized(lam), 1.0 - math.log(1.0 / (1.0 - alpha)) / (2 * lam))


@dataclass
class PhasePoint:
    lam: float
    h: float
    p: float
    d: int
    psi_p_hat: float
    stderr: float
    n: int
    replicas: int
    verdict: str
    psi_p_hat_2n: float = float("nan")
    stderr_2n: float = float("nan")
    shrink: float = float("nan")
    shrink_se: float = float("nan")
    base_seed: int = 0

    def row(self) -> list:
        return [self.lam, self.h, self.p, self.d, self.n, self.replicas,
                self.psi_p_hat, self.stderr, self.verdict]


def _point_job(args):
    params, n, seed = args
    kernel = get_kernel(params.d, n + 1)
    long = params.replace(n=2 * n)
    tab = compute_tables(sample_disorder(long, seed), long, kernel, times=[n, 2 * n])
    excess = params.lam * params.h
    return tab.log_z[n] / n - excess, tab.log_z[2 * n] / (2 * n) - excess


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("inf")


def verdict_from(psi_n: float, se_n: float, shrink: float, shrink_se: float, kappa: float,
                 floor: float = 0.0) -> str:
    """Two-horizon rule.

    Localized needs a positive excess at n that does not decay by 35% at 2n;
    Delocalized needs an excess within the noise band that does decay (or is
    noise-level at both horizons).  ``floor`` is the smallest mean excess the
    finite-n estimator can have; values more than 4 se below it are
    inconsistent and give Uncertain.
    """
    if psi_n > kappa * se_n and shrink > kappa * shrink_se:
        return LOCALIZED
    if psi_n <= kappa * se_n and shrink <= kappa * shrink_se and psi_n >= floor - 4 * se_n:
        return DELOCALIZED
    return UNCERTAIN


def classify_point(params: ModelParams, n: int, replicas: int, kappa: float = 3.0,
                   base_seed: int = 0, workers: int = 1) -> PhasePoint:
    """Classify (lam, h) by the replica-averaged excess free energy at horizons n and 2n."""
    lam, h, p, d = params.lam, params.h, params.p, params.d
    if lam == 0 or p == 0:
        # no coupling or no droplets: the excess free energy is identically 0
        return PhasePoint(lam, h, p, d, 0.0, 0.0, n, 0, DELOCALIZED, 0.0, 0.0, 0.0, 0.0, base_seed)
    seeds = [replica_seed(base_seed, r) for r in range(replicas)]
    rows = np.array(replica_map(_point_job, [(params, n, s) for s in seeds], workers))
    at_n, at_2n = rows[:, 0], rows[:, 1]
    shrink = at_2n - SHRINK * at_n
    psi_n, se_n = float(at_n.mean()), _se(at_n)
    # Psi^n >= a_n, so the excess is at least lam * mean(omega) + log(a_n) / n
    floor = math.log(get_kernel(d, n // 2 + 1).a_tab[n]) / n
    verdict = verdict_from(psi_n, se_n, float(shrink.mean()), _se(shrink), kappa, floor)
    return PhasePoint(lam, h, p, d, psi_n, se_n, n, replicas, verdict,
                      float(at_2n.mean()), _se(at_2n), float(shrink.mean()), _se(shrink), base_seed)


def phase_scan(lams, hs, p: float, d: int, n: int, replicas: int, base_seed: int = 0,
               kappa: float = 3.0, workers: int = 1) -> list[PhasePoint]:
    """Classify every (lam, h) of a grid; grid point i uses its own seed range."""
    jobs = [(lam, h) for lam in lams for h in hs]
    return [classify_point(ModelParams(lam, h, p, d, n), n, replicas, kappa,
                           replica_seed(base_seed, 1_000_000 + i), workers)
            for i, (lam, h) in enumerate(jobs)]


class BracketError(RuntimeError):
    pass


@dataclass
class CriticalPoint:
    lam: float
    low: float
    high: float
    steps: list = field(default_factory=list)
    stopped_on_uncertain: bool = False

    @property
    def width(self) -> float:
        return self.high - self.low

    @property
    def mid(self) -> float:
        return 0.5 * (self.low + self.high)


def critical_h(lam: float, p: float, d: int, n: int, replicas: int, tol: float = 0.05,
               base_seed: int = 0, kappa: float = 3.0, workers: int = 1) -> CriticalPoint:
    """Bracket the critical h at fixed lambda by bisection between the two analytic bounds.

    Every classification reuses the same disorder seeds, so the verdict is a
    monotone function of h up to sampling noise shared by all midpoints.
    """
    if lam <= 0 or p <= 0:
        raise ValueError("critical_h needs lambda > 0 and p > 0")
    low, high = bound_localized(lam, p, d), bound_delocalized(lam)
    steps = []

    def classify(h):
        point = classify_point(ModelParams(lam, h, p, d, n), n, replicas, kappa, base_seed, workers)
        steps.append(point)
        return point

    for h, want in ((low, LOCALIZED), (high, DELOCALIZED)):
        point = classify(h)
        if point.verdict != want:
            raise BracketError(
                f"bracket end h={h:.6g} at lambda={lam} classified {point.verdict}, expected {want} "
                f"(psi={point.psi_p_hat:.4g} +- {point.stderr:.2g})")
    uncertain = False
    while high - low > tol:
        mid = 0.5 * (low + high)
        verdict = classify(mid).verdict
        if verdict == LOCALIZED:
            low = mid
        elif verdict == DELOCALIZED:
            high = mid
        else:
            uncertain = True
            break
    return CriticalPoint(lam, low, high, steps, uncertain)


def critical_curve(lams, p: float, d: int, n: int, replicas: int, tol: float = 0.05,
                   base_seed: int = 0, workers: int = 1) -> list[CriticalPoint]:
    return [critical_h(lam, p, d, n, replicas, tol, base_seed, workers=workers) for lam in lams]


def monotone_consistent(curve: list[CriticalPoint]) -> bool:
    """True if some nondecreasing function passes through every interval."""
    ordered = sorted(curve, key=lambda c: c.lam)
    running = -math.inf
    for c in ordered:
        running = max(running, c.low)
        if running > c.high:
            return False
    return True


@dataclass
class TailFit:
    epsilon_hat: float
    epsilon_se: float
    ci: tuple
    c_hat: float
    onset: float
    bins_used: int
    curvature_ratio: float
    linear: bool
    reduced_chi2: float
    delta_ratio: float = float("nan")


def _folded(hist: EndpointHistogram) -> tuple[np.ndarray, np.ndarray]:
    r = hist.radius()
    if hist.d == 1:
        radii = np.unique(r)
        counts = np.array([hist.counts[r == x].sum() for x in radii], dtype=float)
        # parity leaves every other radius empty
        # the z = 0 atom is a return exactly at time n, not part of the tail
        keep = ((radii.astype(int) % 2) == (hist.n % 2)) & (radii > 0)
        return radii[keep], counts[keep]
    return r, hist.counts.astype(float)


def tail_fit(hist: EndpointHistogram, min_count: int = 5, psi_p_hat: float | None = None,
             max_curvature: float = 0.25) -> TailFit:
    """Weighted least-squares fit of log mass against |z| beyond the histogram mode.

    ``curvature_ratio`` compares the quadratic term of a second fit with the
    total linear drop over the fitted range; Gaussian tails give values near
    one, exponential tails values near zero.
    """
    radii, counts = _folded(hist)
    onset = float(radii[np.argmax(counts)])
    sel = (radii >= onset) & (counts >= min_count)
    # stop at the first bin that falls under min_count so the fit covers a contiguous range
    idx = np.flatnonzero(radii >= onset)
    stop = next((i for i in idx if counts[i] < min_count), None)
    if stop is not None:
        sel &= radii < radii[stop]
    x, c = radii[sel], counts[sel]
    if len(x) < 4:
        raise ValueError(f"too few tail bins ({len(x)}) for an exponential fit")
    y = np.log(c / hist.samples)
    w = np.sqrt(c)
    coef, cov = np.polyfit(x, y, 1, w=w, cov="unscaled")
    resid = (y - np.polyval(coef, x)) * w
    red = float(resid @ resid / max(len(x) - 2, 1))
    cov = cov * max(red, 1.0)
    slope, intercept = coef
    se = math.sqrt(cov[0, 0])
    z = stats.norm.ppf(0.975)
    quad = np.polyfit(x, y, 2, w=w)
    span = x[-1] - x[0]
    drop = abs(np.polyval(quad, x[-1]) - np.polyval(quad, x[0]))
    curvature = abs(quad[0]) * span ** 2 / max(drop, 1e-12)
    eps = -float(slope)
    ratio = eps / (psi_p_hat / 2) if psi_p_hat else float("nan")
    return TailFit(eps, se, (eps - z * se, eps + z * se), float(math.exp(intercept)), onset,
                   int(len(x)), float(curvature), bool(curvature < max_curvature), red, ratio)


@dataclass
class DiffusiveReport:
    d: int
    samples: int
    floor_checks: dict
    upper_mass: float
    upper_ok: bool
    reference: dict
    ks_statistic: float
    ks_pvalue: float

    @property
    def ok(self) -> bool:
        return self.upper_ok and all(v["ok"] for v in self.floor_checks.values())


def diffusive_check(scaled_radii, d: int, a0s=(0.5, 1.0), c0: float = 4.0, floor: float = 0.2,
                    upper: float = 0.01, params: ModelParams | None = None,
                    kernel: WalkKernel | None = None) -> DiffusiveReport:
    """Compare samples of |w(n)|/sqrt(n) with the diffusive bounds.

    Checks a Wilson 95% lower bound above ``floor`` for each a0 and a mass
    below ``upper`` beyond c0.  The distance to the chi_d radial law of the
    free walk is reported only.
    """
    from statsmodels.stats.proportion import proportion_confint

    if d < 3:
        raise ValueError("diffusive check needs d >= 3")
    if params is not None and params.h < diffusive_threshold(params.lam, d, kernel):
        raise ValueError(f"h = {params.h} is below the diffusive threshold")
    r = np.asarray(scaled_radii, dtype=float)
    m = len(r)
    floors = {}
    ref = {}
    for a0 in a0s:
        k = int(np.count_nonzero(r > a0))
        lo, hi = proportion_confint(k, m, alpha=0.05, method="wilson")
        floors[a0] = {"p": k / m, "lower": float(lo), "upper": float(hi), "ok": bool(lo > floor)}
        ref[a0] = float(stats.chi2.sf(a0 ** 2, d))
    up = float(np.count_nonzero(r > c0) / m)
    ref[c0] = float(stats.chi2.sf(c0 ** 2, d))
    ks = stats.kstest(r ** 2, "chi2", args=(d,))
    return DiffusiveReport(d, m, floors, up, up <= upper, ref, float(ks.statistic), float(ks.pvalue))
