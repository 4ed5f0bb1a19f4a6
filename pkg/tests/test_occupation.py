import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import comb

from firstreturn.asymptotics import make_norming
from firstreturn.lattice_model import lazy_simple_walk, power_tail, simple_walk
from firstreturn.occupation import (
    CapacityError,
    GridSpec,
    USeq,
    _chernoff_tail,
    alias_error_bound,
    alias_richardson,
    auto_occupation,
    choose_grid,
    grid_average_powers,
    hurwitz_tail,
    u_aliased,
    u_convolution,
    u_exact,
    u_sum,
)
from suite import deterministic, drifted, finite_suite, power_suite


def binomial_u(n_max, q):
    """P{S_n = 0} for the +-1 walk with P{+1} = q."""
    u = np.zeros(n_max + 1)
    for n in range(0, n_max + 1, 2):
        u[n] = comb(n, n // 2, exact=True) * (q * (1 - q)) ** (n // 2)
    return u


def test_lazy_walk_first_values():
    u = u_exact(lazy_simple_walk(3), 4, "rational")
    assert u.values[0] == 1
    assert u.values[1] == Fraction(1, 2)
    assert u.values[2] == Fraction(7, 24)
    assert u.exact and not np.any(u.errors)


def test_deterministic_law_never_returns():
    u = u_exact(deterministic(), 20)
    assert np.all(u.values[1:] == 0)
    assert u_sum(u) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("q", [0.5, 0.8])
def test_one_dimensional_binomial_oracle(q):
    law = simple_walk(1) if q == 0.5 else drifted()
    u = u_exact(law, 200)
    assert np.max(np.abs(u.values - binomial_u(200, q))) <= 1e-14
    assert np.all(u.errors <= 1e-12)


@pytest.mark.parametrize("name", sorted(finite_suite()))
def test_dft_matches_convolution(name):
    law = finite_suite()[name]
    n = 64 if law.dim < 3 else 32
    a = u_exact(law, n)
    b = u_convolution(law, n)
    assert np.max(np.abs(a.values - b.values)) <= 1e-13


def test_rational_matches_float():
    law = lazy_simple_walk(3)
    r = u_exact(law, 20, "rational")
    f = u_exact(law, 20)
    assert np.max(np.abs(r.as_float() - f.values)) <= 1e-15


def test_parity_zeros():
    u = u_exact(simple_walk(3), 30)
    assert np.all(np.abs(u.values[1::2]) <= 1e-15)
    assert np.all(u.values[2::2] > 0)


def test_u_in_unit_interval():
    for law in finite_suite().values():
        u = u_exact(law, 40)
        assert u.values[0] == 1
        assert np.all(u.values >= -1e-15) and np.all(u.values <= 1)


def test_grid_average_order_independent_of_workers():
    law = lazy_simple_walk(3)
    grid = GridSpec.uniform(81, 3)
    a = grid_average_powers(law, grid, 40, workers=1)
    b = grid_average_powers(law, grid, 40, workers=3)
    assert np.array_equal(a, b)


def test_aliased_grid_zero_term():
    for law in list(finite_suite().values()) + list(power_suite().values()):
        u = u_aliased(law, 5, GridSpec.uniform(16, law.dim))
        assert u.values[0] == 1.0


def test_aliased_against_exact_on_lazy_walk():
    law = lazy_simple_walk(3)
    exact = u_exact(law, 64)
    u = u_aliased(law, 64, GridSpec.uniform(65, 3))
    diff = np.abs(u.values - exact.values)
    assert np.all(diff <= u.errors)
    assert np.max(diff) <= 1e-12


@pytest.mark.parametrize("name", sorted(finite_suite()))
def test_alias_monotone_in_grid(name):
    law = finite_suite()[name]
    n = 48
    exact = u_exact(law, n).values
    prev = None
    for m in (12, 24, 48):
        u = u_aliased(law, n, GridSpec.uniform(m, law.dim))
        slack = u.errors - alias_error_bound_vec(law, n, m)
        assert np.all(u.values >= exact - slack - 1e-15)
        assert np.all(u.values - exact <= u.errors)
        if prev is not None:
            assert np.all(u.values <= prev + 1e-15)
        prev = u.values


def alias_error_bound_vec(law, n_max, m):
    grid = GridSpec.uniform(m, law.dim)
    out = np.array([alias_error_bound(law, n, grid) for n in range(n_max + 1)])
    out[0] = 0.0
    return out


def test_chernoff_bound_example():
    # bounded support a = 1, n = 64, M = 260: Chernoff-based bound below the Hoeffding form
    law = lazy_simple_walk(3)
    n, m = 64, 65 * 4
    bound = alias_error_bound(law, n, GridSpec.uniform(m, 3))
    assert bound <= 2 * 3 * math.exp(-m**2 / (8 * n))


def test_chernoff_tail_against_binomial():
    # P{sum of n +-1 steps >= t} for the symmetric walk
    n, t = 40, 16
    exact = sum(comb(n, k, exact=True) for k in range(n + 1) if 2 * k - n >= t) / 2**n
    bound = _chernoff_tail(np.array([-1.0, 1.0]), np.array([0.5, 0.5]), n, t)
    assert exact <= bound <= 2 * exact * math.sqrt(n)


def test_alias_bound_edge_cases():
    law = lazy_simple_walk(3)
    assert alias_error_bound(law, 0, GridSpec.uniform(8, 3)) == 0.0
    bounds = [alias_error_bound(law, 64, GridSpec.uniform(m, 3)) for m in (20, 40, 80, 160)]
    assert all(a >= b for a, b in zip(bounds, bounds[1:]))
    assert bounds[-1] == 0.0  # 160 > 2 * 64: alias-free


def test_power_tail_alias_monotone_and_certified():
    for law in power_suite().values():
        n = 64
        ref = u_aliased(law, n, GridSpec.uniform(1 << 16, 1))
        prev = None
        for m in (1 << 10, 1 << 11, 1 << 12):
            u = u_aliased(law, n, GridSpec.uniform(m, 1))
            assert np.all(u.values - ref.values >= -1e-14)
            assert np.all(u.values - ref.values <= u.errors)
            if prev is not None:
                assert np.all(u.values <= prev + 1e-14)
            prev = u.values


def test_richardson_reduces_alias_excess():
    law = power_tail(0.7)
    n = 64
    ref = u_aliased(law, n, GridSpec.uniform(1 << 18, 1)).values
    rich = alias_richardson(law, n, GridSpec.uniform(1 << 12, 1))
    raw = rich.notes["raw"]
    assert np.max(np.abs(rich.values - ref)[1:]) < 0.2 * np.max(np.abs(raw - ref)[1:])


def test_choose_grid_meets_target():
    law = lazy_simple_walk(3)
    grid = choose_grid(law, 128, 1e-12)
    assert max(alias_error_bound(law, n, grid) for n in range(129)) <= 1e-12
    smaller = GridSpec.uniform(grid.sizes[0] - 1, 3)
    assert max(alias_error_bound(law, n, smaller) for n in range(129)) > 1e-12


@pytest.mark.parametrize("name", ["lazy_z3", "lazy_z1", "drift_z1", "wide_z1"])
def test_auto_occupation_picks_cheaper_certified_grid(name):
    law = finite_suite()[name]
    n = 48
    u, note = auto_occupation(law, n)
    full = (2 * n * law.radius + 1) ** law.dim
    chosen = choose_grid(law, n, 1e-12).total
    assert u.method == ("exact-dft" if full <= chosen else "aliased-dft")
    assert u.method in note
    assert np.max(np.abs(u.values - u_convolution(law, n).values)) <= 1e-12


def test_memory_cap_refusal(monkeypatch):
    monkeypatch.setenv("FIRSTRETURN_MEM_CAP", "1000")
    with pytest.raises(CapacityError):
        u_exact(lazy_simple_walk(3), 32)


def test_grid_parse():
    assert GridSpec.parse("65", 3).sizes == (65, 65, 65)
    assert GridSpec.parse("8,9", 2).sizes == (8, 9)
    with pytest.raises(ValueError):
        GridSpec.parse("2", 1)


def test_hurwitz_tail():
    exact = math.fsum(k**-1.5 for k in range(101, 2_000_001))
    assert hurwitz_tail(1.5, 100) == pytest.approx(exact + 2 / math.sqrt(2_000_000), rel=1e-6)


def test_simple_walk_watson_value():
    # closed form of the return probability for the simple walk on Z^3
    g = math.gamma
    w = math.sqrt(6) / (32 * math.pi**3) * g(1 / 24) * g(5 / 24) * g(7 / 24) * g(11 / 24)
    p_ref = 1 - 1 / w
    law = simple_walk(3)
    u, _ = auto_occupation(law, 300)
    plan = make_norming(law)
    # u_2k ~ 2 g0 / (2k)^{3/2} with g0 = (3 / 2 pi)^{3/2}: odd terms vanish
    g0 = 2 * (3 / (2 * math.pi)) ** 1.5
    U, tail, _ = u_sum(u, plan, g0 / 2)
    assert U / (1 + U) == pytest.approx(p_ref, abs=1e-4)


def test_laziness_identity():
    n = 150
    lazy, _ = auto_occupation(lazy_simple_walk(3), n)
    srw, _ = auto_occupation(simple_walk(3), 2 * n)
    g_lazy = 6**1.5 / (2 * math.pi) ** 1.5
    g_srw = (3 / (2 * math.pi)) ** 1.5
    U_lazy, _, _ = u_sum(lazy, make_norming(lazy_simple_walk(3)), g_lazy)
    U_srw, _, _ = u_sum(srw, make_norming(simple_walk(3)), g_srw)
    assert U_lazy == pytest.approx(1 + 2 * U_srw, abs=5e-4)


def test_scaled_occupation_bounded():
    law = lazy_simple_walk(3)
    plan = make_norming(law)
    sups = []
    for n in (64, 128, 256):
        u = auto_occupation(law, n)[0].values
        sups.append(np.max(plan.C(np.arange(1, n + 1)) * u[1:]))
    assert sups[-1] < 2
    assert sups[-1] - sups[0] < 0.01


def test_drift_tail_is_geometric():
    u = u_exact(drifted(), 400)
    U, tail, bound = u_sum(u)
    assert U == pytest.approx(2 / 3, abs=1e-12)
    assert abs(U - 2 / 3) <= bound


def test_useq_properties():
    u = USeq(np.array([Fraction(1), Fraction(1, 2)], dtype=object), np.zeros(2), "rational-dp", "x")
    assert u.exact and u.horizon == 1
    assert u.as_float().dtype == float
