import itertools
import math
from collections import Counter

import numpy as np
import pytest

from heteropolymer.kernel import (RejectionBudgetExceeded, avoiding_walks, axis_avoidance, build_kernel,
                                  central_binomial_ratios, escape_probability, escape_probability_mc,
                                  first_return_from_returns, ratio_growth_check, renewal_reconstruct,
                                  sample_avoiding_segment, sample_excursion)
from heteropolymer.model import stream


def _enumerate_first_returns(m):
    """Counts of 1-D paths of length 2m by first-return time, by brute force."""
    counts = Counter()
    for steps in itertools.product((-1, 1), repeat=2 * m):
        pos = np.cumsum(steps)
        zeros = np.flatnonzero(pos == 0)
        if zeros.size:
            counts[int(zeros[0]) + 1] += 1
    return counts


def test_binomial_ratios():
    r = central_binomial_ratios(30)
    exact = [math.comb(2 * k, k) / 4 ** k for k in range(31)]
    assert np.allclose(r, exact, rtol=1e-14)


def test_small_tables_one_dim():
    k = build_kernel(1, 10)
    assert k.p_tab[1] == 0.5
    assert k.b_tab[1] == 0.5
    assert k.b_tab[2] == 0.125
    assert k.b_tab[3] == 1 / 16
    assert k.b_tab[4] == 5 / 128
    assert k.a_tab[4] == pytest.approx(3 / 8, abs=1e-15)
    assert k.a_tab[3] == k.a_tab[2] == 0.5
    assert k.a_tab[0] == k.a_tab[1] == 1.0


def test_first_returns_match_enumeration():
    k = build_kernel(1, 5)
    counts = _enumerate_first_returns(5)
    for m in range(1, 6):
        assert k.b_tab[m] == pytest.approx(counts[2 * m] / 4 ** 5, rel=1e-13)


def test_three_dim_first_entry():
    assert build_kernel(3, 4).p_tab[1] == 0.125


def test_renewal_reconstruction():
    for d in (1, 2, 3):
        k = build_kernel(d, 5000)
        rebuilt = renewal_reconstruct(k.b_tab)
        assert np.max(np.abs(rebuilt - k.p_tab) / k.p_tab) <= 1e-12


def test_inversion_round_trip_random_kernel():
    rng = np.random.default_rng(0)
    b = np.concatenate(([0.0], rng.dirichlet(np.ones(40)) * 0.9))
    assert np.allclose(first_return_from_returns(renewal_reconstruct(b)), b, atol=1e-15)


def test_survival_is_monotone_and_bounded():
    k = build_kernel(2, 2000)
    assert np.all(np.diff(k.a_tab) <= 0)
    assert np.all((k.a_tab >= 0) & (k.a_tab <= 1))


def test_escape_probability():
    assert escape_probability(1) == (0.0, 0.0)
    assert escape_probability(2) == (0.0, 0.0)
    alpha, err = escape_probability(3)
    assert abs(alpha - 0.7178) < 1e-4
    assert err < 1e-8
    # bracket is consistent with a partial sum computed independently in float128-free Python
    partial = math.fsum((math.comb(2 * k, k) / 4 ** k) ** 3 for k in range(200))
    assert 1 / alpha > partial


def test_escape_probability_mc_small():
    frac, se = escape_probability_mc(3, 4000, 1000, stream(5, 0, "mc"))
    alpha, _ = escape_probability(3)
    k = build_kernel(3, 500)
    # a finite horizon survival exceeds alpha
    assert abs(frac - k.a_tab[1000]) <= 4 * se
    assert frac >= alpha - 4 * se


def test_excursion_two_steps():
    k = build_kernel(1, 10)
    rng = stream(1, 0, "fill")
    signs = [sample_excursion(k, 2, rng)[1, 0] for _ in range(2000)]
    assert set(signs) == {-1, 1}
    assert abs(np.mean(signs)) < 4 / math.sqrt(2000)


def test_excursion_four_steps_avoid_origin():
    k = build_kernel(1, 10)
    rng = stream(2, 0, "fill")
    shapes = {tuple(sample_excursion(k, 4, rng)[:, 0]) for _ in range(500)}
    assert shapes == {(0, 1, 2, 1, 0), (0, -1, -2, -1, 0)}


def test_excursion_six_steps_uniform():
    k = build_kernel(1, 10)
    rng = stream(3, 0, "fill")
    valid = [p for p in itertools.product((-1, 1), repeat=6)
             if np.cumsum(p)[-1] == 0 and np.all(np.cumsum(p)[:-1] != 0)]
    assert len(valid) == 4
    draws = 100_000
    counts = Counter()
    for _ in range(draws // 1000):
        for _ in range(1000):
            path = sample_excursion(k, 6, rng)[:, 0]
            counts[tuple(np.diff(path))] += 1
    assert set(counts) == set(valid)
    expected = draws / len(valid)
    sd = math.sqrt(draws * (1 / 4) * (3 / 4))
    for key in valid:
        assert abs(counts[key] - expected) <= 4 * sd


def test_excursion_multi_dim_shape():
    k = build_kernel(3, 50)
    rng = stream(4, 0, "fill")
    path = sample_excursion(k, 20, rng)
    assert path.shape == (21, 3)
    assert np.all(path[0] == 0) and np.all(path[-1] == 0)
    assert not np.any(np.all(path[1:-1] == 0, axis=1))
    assert np.all(np.abs(np.diff(path, axis=0)) == 1)


def test_excursion_rejects_odd_length():
    with pytest.raises(ValueError):
        sample_excursion(build_kernel(1, 10), 3, stream(0))


def test_avoiding_acceptance_four_steps():
    # 6 of 16 four-step paths never revisit 0
    paths = list(itertools.product((-1, 1), repeat=4))
    good = sum(np.all(np.cumsum(p) != 0) for p in paths)
    assert good / 16 == 3 / 8 == pytest.approx(build_kernel(1, 4).a_tab[4])
    walks = avoiding_walks(1, 4, 2000, stream(6))
    assert not np.any(walks[:, 1:, 0] == 0)


def test_avoiding_acceptance_rate_three_dim():
    k = build_kernel(3, 200)
    rng = stream(7)
    m, tries = 200, 10_000
    steps = 2 * rng.integers(0, 2, size=(tries, m, 3)) - 1
    pos = np.cumsum(steps, axis=1)
    rate = np.mean(~np.all(pos == 0, axis=2).any(axis=1))
    se = math.sqrt(rate * (1 - rate) / tries)
    assert abs(rate - k.a_tab[m]) <= 4 * se
    assert k.a_tab[m] >= k.alpha


def test_avoiding_single_step_always_accepted():
    seg = sample_avoiding_segment(build_kernel(2, 4), 1, stream(8))
    assert seg.shape == (2, 2) and np.all(np.abs(seg[1]) == 1)


def test_rejection_budget_is_reported():
    with pytest.raises(RejectionBudgetExceeded) as info:
        avoiding_walks(1, 400, 5, stream(9), budget=10)
    assert info.value.attempts >= 10


def test_ratio_growth():
    g1 = ratio_growth_check(build_kernel(1, 4000))
    assert abs(g1.slope - 1) <= 0.15
    assert np.all(g1.ratio <= g1.c1 * g1.k ** 1 * (1 + 1e-12))
    g3 = ratio_growth_check(build_kernel(3, 4000))
    assert g3.slope <= 3 + 0.15
    assert math.isfinite(g3.c1)
    assert np.all(g3.ratio <= g3.c1 * g3.k.astype(float) ** 3 * (1 + 1e-12))


def test_axis_avoidance():
    k1 = build_kernel(1, 10)
    assert axis_avoidance(k1, 3, 4) == pytest.approx((3 / 8) ** 3)
    with pytest.raises(ValueError):
        axis_avoidance(build_kernel(2, 10), 3, 4)


def test_kernel_csv_header():
    text = build_kernel(3, 5).to_csv()
    lines = text.splitlines()
    assert lines[0].startswith("# {") and '"alpha"' in lines[0]
    assert lines[1] == "k,p_k,b_k,a_2k"
    assert lines[3].split(",")[1] == "0.125"
    assert len(lines) == 2 + 6
