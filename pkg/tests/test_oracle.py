from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firstreturn.lattice_model import lazy_simple_walk, power_tail, validate_law
from firstreturn.occupation import CapacityError, GridSpec, position_table, u_aliased, u_exact
from firstreturn.oracle import (
    _PowerTailSampler,
    exact_enumeration,
    lemma1_check,
    mc_containment,
    mc_paths,
    taboo_dp,
    wilson_interval,
)
from firstreturn.renewal import invert_renewal
from suite import deterministic, drifted

LAZY = lazy_simple_walk(3)


def test_taboo_first_layers():
    table = taboo_dp(LAZY, 2, "rational", keep_layers=True)
    f0, f1 = table.layers[0], table.layers[1]
    assert sum(f0.ravel()) == 1
    r = table.radius
    assert f1[r + 1, r, r] == Fraction(1, 12)
    assert f1[r, r, r] == 0
    assert table.first_return[1] == Fraction(1, 2)
    assert table.first_return[2] == Fraction(1, 24)


def test_taboo_matches_renewal_chain_rational():
    n = 12
    table = taboo_dp(LAZY, n, "rational")
    chain = invert_renewal(u_exact(LAZY, n, "rational"))
    assert table.first_return == list(chain.values)


def test_first_return_from_previous_layer():
    n = 6
    table = taboo_dp(LAZY, n, "rational", keep_layers=True)
    r = table.radius
    for m in range(1, n + 1):
        prev = table.layers[m - 1]
        total = Fraction(0)
        for x, p in zip(LAZY.points, LAZY.probs):
            total += prev[tuple(r - c for c in x)] * p
        assert total == table.first_return[m]


def test_survival_nonincreasing_and_heads_to_escape():
    table = taboo_dp(LAZY, 40)
    s = np.array(table.survival)
    assert s[0] == 1.0
    assert np.all(np.diff(s) <= 1e-15)
    assert s[-1] > 1 - 0.6703  # still above the escape probability, approaching it
    assert s[-1] - (1 - 0.6703) < 0.05


def test_rational_cap_refusal():
    with pytest.raises(CapacityError, match="n <= 16"):
        taboo_dp(LAZY, 30, "rational")
    taboo_dp(LAZY, 16, "rational")


def test_enumeration_examples():
    assert exact_enumeration(LAZY, 2) == (Fraction(7, 24), Fraction(1, 24))
    assert exact_enumeration(LAZY, 1) == (Fraction(1, 2), Fraction(1, 2))
    u2, p2 = exact_enumeration(drifted(), 2)
    assert u2 == p2 == Fraction(8, 25)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(-2, 2), st.integers(1, 5)), min_size=1, max_size=4),
       st.integers(1, 6))
def test_enumeration_equals_taboo(atoms, n):
    total = sum(w for _, w in atoms)
    law = validate_law({"dim": 1, "atoms": [[x, Fraction(w, total)] for x, w in atoms]})
    table = taboo_dp(law, n, "rational")
    u = u_exact(law, n, "rational")
    un, pn = exact_enumeration(law, n)
    assert un == u.values[n]
    assert pn == table.first_return[n]


def test_enumeration_cap():
    with pytest.raises(CapacityError):
        exact_enumeration(LAZY, 40)


def test_taboo_ratio_boundary_and_no_return_walks():
    n = 5
    table = taboo_dp(LAZY, n)
    pos = position_table(LAZY, n)
    _, rows = lemma1_check(table, pos, 0.67, (n, n))
    corner = {x: ratio for x, ratio, _ in rows}
    assert corner[(5, 0, 0)] == pytest.approx(1.0, abs=1e-15)
    det = deterministic()
    table = taboo_dp(det, 7)
    dev, _ = lemma1_check(table, position_table(det, 7), 0.0, (0, 7))
    assert dev == 0.0


def test_taboo_ratio_scaled_error_shrinks():
    # absolute error in units of 1 / C_n over ||x|| >= log n + 1
    p = 0.670269
    scaled = []
    for n in (20, 40):
        table = taboo_dp(LAZY, n)
        pos = position_table(LAZY, n)
        _, _, s = lemma1_check(table, pos, p, (np.log(n) + 1, n), norming=n**1.5)
        scaled.append(s)
    assert scaled[1] < scaled[0]


def test_wilson_interval():
    lo, hi = wilson_interval(np.array([0, 50, 100]), 100)
    assert lo[0] == 0 and hi[0] > 0
    assert lo[1] < 0.5 < hi[1]
    assert hi[2] == 1 and lo[2] < 1
    w1 = np.subtract(*wilson_interval(np.array([2500]), 10_000)[::-1])
    w2 = np.subtract(*wilson_interval(np.array([250_000]), 1_000_000)[::-1])
    assert w1 / w2 == pytest.approx(10, rel=0.01)


def test_mc_deterministic_law():
    est = mc_paths(deterministic(), 10, 1000, seed=1)
    assert np.all(est.hits[1:] == 0)
    assert np.all(est.u[1:] == 0)


def test_mc_reproducible_and_worker_independent():
    a = mc_paths(LAZY, 12, 150_000, seed=42)
    b = mc_paths(LAZY, 12, 150_000, seed=42, workers=3)
    assert np.array_equal(a.hits, b.hits)
    assert np.array_equal(a.first_returns, b.first_returns)
    c = mc_paths(LAZY, 12, 150_000, seed=43)
    assert not np.array_equal(a.hits, c.hits)


def test_mc_contains_exact_values():
    n = 20
    est = mc_paths(LAZY, n, 200_000, seed=5)
    u = u_exact(LAZY, n)
    p = invert_renewal(u)
    lo, hi = est.u_interval()
    assert lo[2] <= 7 / 24 <= hi[2]
    result = mc_containment(est, u.values, p.values)
    assert result["fraction"] >= 0.95


def test_power_tail_sampler_masses():
    law = power_tail(0.7)
    sampler = _PowerTailSampler(law)
    rng = np.random.default_rng(0)
    k = np.abs(sampler.steps(rng, 400_000))
    c = law.tail_constant
    for j in (1, 2, 5):
        expected = 2 * c * j ** -1.7
        observed = np.mean(k == j)
        assert observed == pytest.approx(expected, abs=5 * np.sqrt(expected / 400_000))
    far = np.mean(k > 10_000)
    # tail P{|xi| > K} ~ 2c K^-alpha / alpha
    assert far == pytest.approx(2 * c * 10_000**-0.7 / 0.7, rel=0.1)


def test_power_tail_mc_against_grid():
    law = power_tail(0.7)
    est = mc_paths(law, 16, 200_000, seed=9)
    u = u_aliased(law, 16, GridSpec.uniform(1 << 16, 1))
    p = invert_renewal(u)
    assert mc_containment(est, u.values, p.values)["fraction"] >= 0.9
