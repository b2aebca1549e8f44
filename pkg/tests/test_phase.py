import math
import warnings

import numpy as np
import pytest

from heteropolymer.kernel import build_kernel
from heteropolymer.model import ModelParams, stream
from heteropolymer.phase import (DELOCALIZED, LOCALIZED, UNCERTAIN, BoundaryWarning, CriticalPoint,
                                 bound_delocalized, bound_localized, classify_point, critical_h,
                                 diffusive_check, diffusive_threshold, monotone_consistent,
                                 phase_scan, tail_fit, verdict_from)
from heteropolymer.sampler import EndpointHistogram


def test_localized_bound_values():
    assert bound_localized(2 * math.log(2), 1.0, 1) == pytest.approx(0.0, abs=1e-15)
    assert bound_localized(1.0, 0.5, 1) == pytest.approx(1 - 3 * math.log(2))
    assert bound_localized(1.0, 0.5, 1) == pytest.approx(-1.0794, abs=1e-4)
    assert bound_localized(1e9, 0.7, 3) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        bound_localized(1.0, 0.0, 1)


def test_delocalized_bound_values():
    assert bound_delocalized(1.0) == pytest.approx(0.5 * math.log(math.cosh(2)), rel=1e-14)
    assert bound_delocalized(1.0) == pytest.approx(0.6625, abs=1e-4)
    assert bound_delocalized(1e-4) == pytest.approx(1e-4, rel=1e-3)
    assert bound_delocalized(500.0) == pytest.approx(1 - math.log(2) / 1000, rel=1e-12)
    with pytest.warns(BoundaryWarning):
        assert bound_delocalized(0.0) == 0.0


def test_bounds_are_ordered():
    for lam in np.linspace(0.1, 5, 30):
        for p in (0.25, 0.5, 1.0):
            assert bound_localized(lam, p, 1) < bound_delocalized(lam)


def test_diffusive_threshold():
    k3 = build_kernel(3, 100)
    alpha = k3.alpha
    assert diffusive_threshold(1.0, 3, k3) == pytest.approx(bound_delocalized(1.0))
    assert diffusive_threshold(1.0, 3, k3) == pytest.approx(0.6625, abs=1e-4)
    second = 1 - math.log(1 / (1 - alpha)) / (2 * 0.1)
    assert diffusive_threshold(0.1, 3, k3) == pytest.approx(max(bound_delocalized(0.1), second))
    assert diffusive_threshold(50.0, 3, k3) == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ValueError):
        diffusive_threshold(1.0, 2)


def test_verdict_rule():
    assert verdict_from(0.3, 0.01, 0.1, 0.01, 3.0) == LOCALIZED
    assert verdict_from(0.001, 0.01, 0.0, 0.01, 3.0) == DELOCALIZED
    assert verdict_from(-0.1, 0.01, 0.0, 0.01, 3.0) == UNCERTAIN
    assert verdict_from(0.3, 0.01, -0.2, 0.01, 3.0) == UNCERTAIN
    # an excess below zero is allowed down to the finite-n floor
    assert verdict_from(-0.05, 0.001, 0.0, 0.001, 3.0, floor=-0.048) == DELOCALIZED
    assert verdict_from(-0.05, 0.001, 0.0, 0.001, 3.0, floor=0.0) == UNCERTAIN


def test_trivial_points_are_delocalized():
    assert classify_point(ModelParams(0.0, 0.3, 1.0, 1, 100), 100, 10).verdict == DELOCALIZED
    pt = classify_point(ModelParams(1.0, -5.0, 0.0, 1, 100), 100, 10)
    assert pt.verdict == DELOCALIZED and pt.psi_p_hat == 0.0


def test_classification_far_from_the_boundary():
    lam, p = 1.0, 1.0
    low = classify_point(ModelParams(lam, bound_localized(lam, p, 1) - 0.1, p, 1, 1000), 1000, 40, base_seed=1)
    high = classify_point(ModelParams(lam, bound_delocalized(lam) + 0.1, p, 1, 1000), 1000, 40, base_seed=1)
    assert low.verdict == LOCALIZED
    assert high.verdict == DELOCALIZED
    assert high.psi_p_hat >= -4 * high.stderr


def test_scan_is_row_major_and_reproducible():
    a = phase_scan([0.5, 1.0], [0.0, 1.0], 1.0, 1, 300, 10, base_seed=3)
    b = phase_scan([0.5, 1.0], [0.0, 1.0], 1.0, 1, 300, 10, base_seed=3, workers=2)
    assert [(pt.lam, pt.h) for pt in a] == [(0.5, 0.0), (0.5, 1.0), (1.0, 0.0), (1.0, 1.0)]
    assert [pt.row() for pt in a] == [pt.row() for pt in b]
    assert len({pt.base_seed for pt in a}) == 4


def test_excess_free_energy_is_convex_in_lambda():
    h, n, reps = 0.2, 1000, 60
    vals = {}
    for lam in (0.8, 1.2, 1.6):
        pt = classify_point(ModelParams(lam, h, 1.0, 1, n), n, reps, base_seed=5)
        vals[lam] = (pt.psi_p_hat, pt.stderr)
    mid, ends = vals[1.2], (vals[0.8], vals[1.6])
    pooled = math.sqrt(mid[1] ** 2 + 0.25 * (ends[0][1] ** 2 + ends[1][1] ** 2))
    assert mid[0] <= 0.5 * (ends[0][0] + ends[1][0]) + 4 * pooled


def test_critical_h_inside_envelope():
    cp = critical_h(1.0, 1.0, 1, 600, 40, tol=0.2, base_seed=2)
    assert bound_localized(1.0, 1.0, 1) <= cp.low <= cp.high <= bound_delocalized(1.0)
    assert cp.width <= 0.2 or cp.stopped_on_uncertain
    assert cp.steps[0].verdict == LOCALIZED and cp.steps[1].verdict == DELOCALIZED
    with pytest.raises(ValueError):
        critical_h(1.0, 0.0, 1, 100, 4)


def test_monotone_consistency():
    ok = [CriticalPoint(0.5, 0.1, 0.3), CriticalPoint(1.0, 0.25, 0.5), CriticalPoint(2.0, 0.6, 0.8)]
    assert monotone_consistent(ok)
    bad = [CriticalPoint(0.5, 0.6, 0.7), CriticalPoint(1.0, 0.1, 0.3)]
    assert not monotone_consistent(bad)


def _synthetic_histogram(rate, n=200, samples=2_000_000, seed=0):
    rng = stream(seed)
    z = np.arange(-n, n + 1)
    w = np.where((z + n) % 2 == 0, np.exp(-rate * np.abs(z)), 0.0)
    counts = rng.multinomial(samples, w / w.sum())
    return EndpointHistogram("annealed", n, 1, z, counts, samples, counts * 0.0, counts * 0.0,
                             counts[None, :])


def test_tail_fit_recovers_synthetic_rate():
    fit = tail_fit(_synthetic_histogram(0.3))
    assert abs(fit.epsilon_hat - 0.3) <= 0.02
    assert fit.ci[0] > 0 and fit.linear
    assert fit.ci[0] <= 0.3 <= fit.ci[1] or abs(fit.epsilon_hat - 0.3) < 3 * fit.epsilon_se


def test_tail_fit_needs_bins():
    hist = _synthetic_histogram(3.0, samples=50)
    with pytest.raises(ValueError):
        tail_fit(hist)


def test_diffusive_check_on_free_walks():
    rng = stream(11)
    n, m = 400, 20_000
    radii = np.zeros(m)
    for start in range(0, m, 2000):
        steps = 2 * rng.integers(0, 2, size=(2000, n, 3), dtype=np.int8) - 1
        ends = steps.sum(axis=1, dtype=np.int64)
        radii[start:start + 2000] = np.sqrt((ends ** 2).sum(axis=1) / n)
    rep = diffusive_check(radii, 3)
    assert rep.ok
    assert rep.reference[1.0] == pytest.approx(0.8013, abs=1e-4)
    assert rep.reference[4.0] < 0.002
    assert abs(rep.floor_checks[1.0]["p"] - 0.8013) <= 4 * math.sqrt(0.8 * 0.2 / m) + 0.01
    with pytest.raises(ValueError):
        diffusive_check(radii, 2)
    with pytest.raises(ValueError):
        diffusive_check(radii, 3, params=ModelParams(1.0, 0.1, 1.0, 3, n))
