"""Oracle and invariant checks run by the ``verify`` command."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import build_kernel, get_kernel, ratio_growth_check, renewal_reconstruct
from .model import ModelParams, sample_disorder, stream
from .partition import (brute_force_partition, compute_tables, sandwich_log_gap,
                        superadditivity_check, supermartingale_step_check)
from .phase import bound_delocalized


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_params(rng, d, n):
    return ModelParams(float(rng.uniform(0, 2)), float(rng.uniform(-1.5, 1.5)),
                       float(rng.choice([0.0, 0.5, 1.0])), d, n)


def check_brute_force(instances: int = 200, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = stream(seed, 0, "mc")
    worst = 0.0
    for i in range(instances):
        d = 1 if i % 2 == 0 else 2
        n = int(rng.integers(1, 13 if d == 1 else 9))
        params = _random_params(rng, d, n)
        dis = sample_disorder(params, int(rng.integers(2**62)))
        tab = compute_tables(dis, params, get_kernel(d, 64))
        bf = brute_force_partition(dis, params)
        worst = max(worst, abs(math.expm1(tab.log_z[n] - bf.log_z)))
        if n % 2 == 0:
            worst = max(worst, abs(math.expm1(tab.log_zhat[n // 2] - bf.log_zhat)))
    return CheckResult("brute-force equivalence", worst <= tol, f"max relative error {worst:.3g}")


def check_renewal(k_max: int = 5000, tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    for d in (1, 2, 3):
        kernel = build_kernel(d, k_max)
        rebuilt = renewal_reconstruct(kernel.b_tab)
        worst = max(worst, float(np.max(np.abs(rebuilt - kernel.p_tab) / kernel.p_tab)))
    return CheckResult("renewal reconstruction", worst <= tol, f"max relative error {worst:.3g}")


def check_exact_inequalities(instances: int = 200, seed: int = 1) -> CheckResult:
    """Z >= Zhat, Psi >= a, block superadditivity and the pinned/free sandwich."""
    rng = stream(seed, 0, "mc")
    kernels = {d: get_kernel(d, 200) for d in (1, 2, 3)}
    c1 = {d: ratio_growth_check(kernels[d], 100).c1 for d in kernels}
    failures = []
    for i in range(instances):
        d = int(rng.integers(1, 4))
        n = 2 * int(rng.integers(1, 101))
        params = _random_params(rng, d, n)
        dis = sample_disorder(params, int(rng.integers(2**62)))
        tab = compute_tables(dis, params, kernels[d])
        even = tab.log_z[0::2]
        if np.any(even < tab.log_zhat - 1e-9):
            failures.append(f"Z<Zhat at instance {i}")
        with np.errstate(divide="ignore"):
            floor = np.log(kernels[d].a_tab[: n + 1])
        if np.any(tab.log_psi < floor - 1e-9):
            failures.append(f"Psi<a at instance {i}")
        K = n // 2
        gap = tab.log_z[n] - tab.log_zhat[K]
        if gap > sandwich_log_gap(params, c1[d], K) + 1e-9:
            failures.append(f"sandwich at instance {i}")
        N = 2 * int(rng.integers(1, max(2, n // 4) + 1))
        k = max(1, n // N)
        sup = superadditivity_check(dis, params, kernels[d], N, k)
        if not sup.holds:
            failures.append(f"superadditivity slack {sup.slack:.3g} at instance {i}")
    return CheckResult("exact inequalities", not failures, "; ".join(failures[:5]) or f"{instances} instances")


def check_supermartingale_step() -> CheckResult:
    worst = -math.inf
    for lam in (0.25, 0.5, 1.0, 2.0, 3.0):
        h = bound_delocalized(lam)
        for extra in (0.0, 0.1, 0.5):
            for p in (0.25, 0.5, 1.0):
                for q in (0.1, 0.5, 1.0):
                    factor = supermartingale_step_check(ModelParams(lam, h + extra, p, 3, 1), None, q)
                    worst = max(worst, factor)
    return CheckResult("supermartingale step", worst <= 1 + 1e-12, f"largest one-step factor {worst:.15g}")


def run_all(instances: int = 200, seed: int = 0) -> list[CheckResult]:
    return [
        check_brute_force(instances, seed),
        check_renewal(),
        check_exact_inequalities(instances, seed + 1),
        check_supermartingale_step(),
    ]
