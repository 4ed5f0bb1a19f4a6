"""Occupation sequence ``u_n = P{S_n = 0}``.

Three routes are available:

* averaging ``phi^n`` over a torus grid (``u_exact`` with a grid large enough
  to rule out aliasing, or ``u_aliased`` with a certified alias bound);
* iterated convolution of the position law on the reachable box, in float or
  exact rational arithmetic.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize, special

from .lattice_model import EPS, FINITE, POWER_TAIL, StepLaw, char_fn_grid_slab, lattice_index

MEM_CAP_ENV = "FIRSTRETURN_MEM_CAP"
DEFAULT_MEM_CAP = 2 * 1024**3
SLAB_POINTS = 1 << 18

METHODS = ("exact-dft", "aliased-dft", "convolution", "rational-dp")


class CapacityError(RuntimeError):
    """A computation would exceed the configured memory cap."""


def memory_cap() -> int:
    raw = os.environ.get(MEM_CAP_ENV)
    return int(float(raw)) if raw else DEFAULT_MEM_CAP


@dataclass(frozen=True)
class GridSpec:
    sizes: tuple[int, ...]

    def __post_init__(self):
        if any(m < 3 for m in self.sizes):
            raise ValueError(f"grid sizes must be >= 3, got {self.sizes}")

    @classmethod
    def uniform(cls, m: int, dim: int) -> GridSpec:
        return cls((int(m),) * dim)

    @classmethod
    def parse(cls, text: str, dim: int) -> GridSpec:
        parts = [int(float(p)) for p in text.replace("x", ",").split(",") if p.strip()]
        if len(parts) == 1:
            parts = parts * dim
        if len(parts) != dim:
            raise ValueError(f"grid {text!r} does not match dimension {dim}")
        return cls(tuple(parts))

    @property
    def total(self) -> int:
        return math.prod(self.sizes)

    def slab_points(self) -> int:
        row = math.prod(self.sizes[1:])
        return min(self.total, max(row, (SLAB_POINTS // row) * row))

    def memory_estimate(self, complex_values: bool = False, n_max: int = 0, workers: int = 1) -> int:
        """Peak bytes of a slab sweep.

        Each live slab holds about six point arrays (phase, characteristic
        function, running powers and temporaries); every slab also keeps three
        partial-sum rows of length ``n_max + 1``.
        """
        per_point = 16 if complex_values else 8
        live = min(workers, self.n_slabs())
        return 6 * live * self.slab_points() * per_point + 3 * 8 * (n_max + 1) * self.n_slabs()

    def n_slabs(self) -> int:
        return -(-self.sizes[0] // (self.slab_points() // math.prod(self.sizes[1:])))


@dataclass(frozen=True)
class USeq:
    values: np.ndarray
    errors: np.ndarray
    method: str
    fingerprint: str
    grid: GridSpec | None = None
    notes: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    @property
    def exact(self) -> bool:
        return self.values.dtype == object

    def as_float(self) -> np.ndarray:
        if self.exact:
            return np.array([float(v) for v in self.values])
        return self.values


# --- grid sweeps -------------------------------------------------------------


def _slab_bounds(shape: tuple[int, ...]) -> list[slice]:
    row = math.prod(shape[1:])
    rows = max(1, SLAB_POINTS // row)
    return [slice(i, min(i + rows, shape[0])) for i in range(0, shape[0], rows)]


def _slab_power_sums(law: StepLaw, shape, rows: slice, n_max: int, coarse: bool) -> np.ndarray:
    """Per-slab sums over ``n``.

    Row 0 holds sums of ``phi^n``, row 1 sums of ``|phi|^n`` and row 2 (when
    ``coarse``) sums of ``phi^n`` over the points with all indices even, i.e.
    the grid of half the size.
    """
    phi = char_fn_grid_slab(law, shape, rows)
    out = np.zeros((3, n_max + 1))
    sub = (slice(rows.start % 2, None, 2),) + (slice(None, None, 2),) * (len(shape) - 1)
    out[0, 0] = out[1, 0] = phi.size
    out[2, 0] = phi[sub].size if coarse else 0
    nonneg = not np.iscomplexobj(phi) and phi.min() >= 0
    power = phi.copy()
    mod = None if nonneg else np.abs(phi)
    mod_power = None if nonneg else mod.copy()
    for n in range(1, n_max + 1):
        out[0, n] = power.sum().real
        out[1, n] = out[0, n] if nonneg else mod_power.sum()
        if coarse:
            out[2, n] = power[sub].sum().real
        if n < n_max:
            power *= phi
            if not nonneg:
                mod_power *= mod
    return out


def grid_average_powers(law: StepLaw, grid: GridSpec, n_max: int, workers: int = 1,
                        with_modulus: bool = False, coarse: bool = False):
    """``(1 / prod M) sum_j phi(lam_j)^n`` for ``n = 0..n_max``.

    The grid is cut into fixed slabs that depend only on its shape; per-slab
    partial sums are combined with ``math.fsum`` so the result does not depend
    on ``workers``.  With ``with_modulus`` the grid averages of ``|phi|^n``
    are returned as well, and with ``coarse`` the averages over the half-size
    grid (even sizes only).
    """
    shape = grid.sizes
    if len(shape) != law.dim:
        raise ValueError(f"grid dimension {len(shape)} does not match law dimension {law.dim}")
    if coarse and any(m % 2 for m in shape):
        raise ValueError("the coarse sub-grid needs even grid sizes")
    slabs = _slab_bounds(shape)

    def work(rows):
        return _slab_power_sums(law, shape, rows, n_max, coarse)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            partials = list(pool.map(work, slabs))
    else:
        partials = [work(rows) for rows in slabs]
    stacked = np.stack(partials)
    sums = np.array([[math.fsum(stacked[:, k, n]) for n in range(n_max + 1)] for k in range(3)])
    avg = sums[0] / grid.total
    out = [avg]
    if with_modulus:
        out.append(sums[1] / grid.total)
    if coarse:
        out.append(sums[2] / sums[2, 0])
    return avg if len(out) == 1 else tuple(out)


def _rounding_bound(law: StepLaw, modulus_avg: np.ndarray, grid: GridSpec) -> np.ndarray:
    """First-order floating-point error of the grid averages of ``phi^n``.

    ``modulus_avg[n]`` is the grid average of ``|phi|^n``.  Each grid value of
    ``phi`` carries a relative error of a few ulps per atom plus the phase
    error; raising to the n-th power multiplies it by ``n |phi|^(n-1)``.
    """
    if law.family == FINITE:
        phi_err = (len(law.points) + 2 + 2 * math.pi * law.dim * law.radius) * EPS
    else:
        phi_err = 1e-15
    n = np.arange(len(modulus_avg))
    prev = np.concatenate([[1.0], modulus_avg[:-1]])
    return n * (phi_err + EPS) * prev + (math.log2(grid.total) + 2) * EPS * modulus_avg


def _check_grid_memory(law: StepLaw, grid: GridSpec, n_max: int = 0, workers: int = 1) -> None:
    need = grid.memory_estimate(not law.is_symmetric, n_max, workers)
    if need > memory_cap():
        raise CapacityError(
            f"grid {grid.sizes} needs about {need / 2**20:.0f} MiB, above the cap of "
            f"{memory_cap() / 2**20:.0f} MiB (set {MEM_CAP_ENV}); use u_aliased with a smaller grid"
        )


# --- box evolution -------------------------------------------------------------


def _int_dtype(den: int, n: int):
    return np.int64 if den**n < 2**62 else object


def evolve_box(law: StepLaw, n: int, exact: bool = False, taboo: bool = False):
    """Yield ``(m, f_m, absorbed_m)`` for ``m = 0..n`` on the box ``[-n a, n a]^d``.

    ``f_m`` is the position law after ``m`` steps (restricted to paths avoiding
    the origin after time 0 when ``taboo`` is set; the mass that lands on the
    origin at step ``m`` is then reported as ``absorbed_m``).  In exact mode
    arrays hold integer numerators over ``D^m``, where ``D`` is the common
    denominator of the step law.
    """
    if law.family != FINITE:
        raise ValueError("box evolution needs a finite-atoms law")
    a = law.radius
    radius = n * a
    width = 2 * radius + 1
    d = law.dim
    shape = (width,) * d
    if math.prod(shape) * (8 if not exact else 32) * 2 > memory_cap():
        raise CapacityError(f"box of width {width} in dimension {d} exceeds the memory cap")
    if exact:
        den, nums = law.common_denominator()
        dtype = _int_dtype(den, n)
        weights = [int(w) for w in nums]
    else:
        dtype = float
        weights = list(law.weights)
    origin = (radius,) * d
    f = np.zeros(shape, dtype=dtype)
    f[origin] = 1
    yield 0, f, 0
    for m in range(1, n + 1):
        lo_src, hi_src = radius - (m - 1) * a, radius + (m - 1) * a + 1
        g = np.zeros(shape, dtype=dtype)
        src = f[(slice(lo_src, hi_src),) * d]
        for x, w in zip(law.points, weights):
            dst = tuple(slice(lo_src + c, hi_src + c) for c in x)
            g[dst] += w * src
        absorbed = 0
        if taboo:
            absorbed = g[origin]
            g[origin] = 0
        f = g
        yield m, f, absorbed


def position_table(law: StepLaw, n: int, exact: bool = False) -> np.ndarray:
    """``P{S_n = x}`` on the box ``[-n a, n a]^d`` (exact Fractions in rational mode)."""
    for m, f, _ in evolve_box(law, n, exact=exact):
        pass
    if exact:
        den, _ = law.common_denominator()
        scale = den**n
        return np.vectorize(lambda v: Fraction(int(v), scale), otypes=[object])(f)
    return f


# --- public operations ---------------------------------------------------------


def u_convolution(law: StepLaw, n_max: int, exact: bool = False) -> USeq:
    """Occupation sequence by iterated convolution on the reachable box."""
    if exact and not law.exact:
        raise ValueError("rational mode needs a law with rational probabilities")
    values = np.empty(n_max + 1, dtype=object if exact else float)
    den = law.common_denominator()[0] if exact else None
    for m, f, _ in evolve_box(law, n_max, exact=exact):
        centre = f[(n_max * law.radius,) * law.dim]
        values[m] = Fraction(int(centre), den**m) if exact else centre
    return USeq(
        values=values,
        errors=np.zeros(n_max + 1),
        method="rational-dp" if exact else "convolution",
        fingerprint=law.fingerprint,
    )


def structural_zeros(law: StepLaw, n_max: int) -> np.ndarray:
    """Mask of ``n`` for which ``S_n = 0`` is impossible.

    Two certificates: the origin lies outside the convex hull of the support
    (the walk escapes along a direction), or ``n x_0`` is outside the lattice
    spanned by support differences (periodicity).  Returns all-False where
    neither applies.
    """
    mask = np.zeros(n_max + 1, dtype=bool)
    if law.family != FINITE:
        return mask
    pts = law.support.astype(float)
    k = len(pts)
    hull = optimize.linprog(
        np.zeros(k),
        A_eq=np.vstack([pts.T, np.ones(k)]),
        b_eq=np.concatenate([np.zeros(law.dim), [1.0]]),
        bounds=[(0, None)] * k,
        method="highs",
    )
    if hull.status == 2:  # infeasible
        mask[1:] = True
        return mask
    x0 = law.points[0]
    diffs = [tuple(a - b for a, b in zip(x, x0)) for x in law.points[1:]]
    index = lattice_index(diffs, law.dim)
    if index > 1:
        for n in range(1, n_max + 1):
            shifted = lattice_index(diffs + [tuple(n * c for c in x0)], law.dim)
            mask[n] = shifted != index
    return mask


def u_exact(law: StepLaw, n_max: int, mode: str = "float", workers: int = 1) -> USeq:
    """Alias-free occupation sequence for finite-support laws.

    Float mode averages ``phi^n`` over a grid with ``M_r = 2 N a + 1`` points
    per axis; ``phi^n`` is a trigonometric polynomial of degree at most ``N a``
    so the average is its exact constant Fourier coefficient and ``errors``
    holds only the floating-point term.  Rational mode
    runs the integer convolution instead.
    """
    if n_max < 1:
        raise ValueError("horizon must be >= 1")
    if law.family != FINITE:
        raise ValueError("u_exact needs a finite-support law; use u_aliased")
    if mode == "rational":
        return u_convolution(law, n_max, exact=True)
    if mode != "float":
        raise ValueError(f"unknown mode {mode!r}")
    grid = GridSpec.uniform(2 * n_max * law.radius + 1, law.dim)
    _check_grid_memory(law, grid, n_max, workers)
    values, modulus = grid_average_powers(law, grid, n_max, workers, with_modulus=True)
    values[0] = 1.0
    errors = _rounding_bound(law, modulus, grid)
    errors[0] = 0.0
    zeros = structural_zeros(law, n_max)
    values[zeros] = 0.0
    errors[zeros] = 0.0
    return USeq(values, errors, "exact-dft", law.fingerprint, grid)


def u_aliased(law: StepLaw, n_max: int, grid: GridSpec, workers: int = 1) -> USeq:
    """Grid average of ``phi^n``; equals ``sum_{x = 0 mod M} P{S_n = x}``.

    The per-entry error is the alias bound from :func:`alias_error_bound`
    plus a floating-point term.
    """
    if n_max < 1:
        raise ValueError("horizon must be >= 1")
    _check_grid_memory(law, grid, n_max, workers)
    values, modulus = grid_average_powers(law, grid, n_max, workers, with_modulus=True)
    values[0] = 1.0
    errors = np.array([alias_error_bound(law, n, grid) for n in range(n_max + 1)])
    errors += _rounding_bound(law, modulus, grid)
    errors[0] = 0.0
    return USeq(values, errors, "aliased-dft", law.fingerprint, grid)


def alias_richardson(law: StepLaw, n_max: int, grid: GridSpec, workers: int = 1) -> USeq:
    """Grid-size extrapolated occupation sequence for the power-tail family.

    For ``P{xi = +-k} ~ c k^(-1-alpha)`` the alias excess
    ``sum_{k != 0} P{S_n = k M}`` is dominated by one big jump and scales as
    ``M^(-1-alpha)``.  Combining the grid ``M`` with its even sub-grid ``M/2``
    (same sweep) cancels that leading term:
    ``u = (2^(1+alpha) u^(M) - u^(M/2)) / (2^(1+alpha) - 1)``.
    The result is no longer a one-sided bound; ``errors`` holds the raw
    certified bound plus the size of the correction.
    """
    if law.family != POWER_TAIL:
        raise ValueError("grid-size extrapolation assumes the power-tail alias law")
    _check_grid_memory(law, grid, n_max, workers)
    fine, modulus, half = grid_average_powers(law, grid, n_max, workers, with_modulus=True, coarse=True)
    fine[0] = half[0] = 1.0
    factor = 2.0 ** (1.0 + law.alpha)
    values = (factor * fine - half) / (factor - 1.0)
    errors = np.array([alias_error_bound(law, n, grid) for n in range(n_max + 1)])
    errors += _rounding_bound(law, modulus, grid) + np.abs(values - fine)
    errors[0] = 0.0
    notes = {"alias_correction": f"richardson M/2 -> M, order {1 + law.alpha:g}", "raw": fine}
    return USeq(values, errors, "aliased-dft", law.fingerprint, grid, notes)


def _chernoff_tail(values: np.ndarray, probs: np.ndarray, n: int, t: float) -> float:
    """Bound on ``P{sum of n iid copies >= t}`` from the exact moment generating function."""
    vmax = values.max()
    if n * vmax < t:
        return 0.0
    shift = values.max()

    def log_bound(theta):
        # log E exp(theta xi) computed stably around the largest value
        return -theta * t + n * (theta * shift + np.log(np.dot(probs, np.exp(theta * (values - shift)))))

    res = optimize.minimize_scalar(log_bound, bounds=(0.0, 60.0), method="bounded")
    best = min(log_bound(res.x), 0.0)
    return float(math.exp(best))


def _hoeffding_tail(values: np.ndarray, probs: np.ndarray, n: int, t: float) -> float:
    mean = float(np.dot(values, probs))
    span = float(values.max() - values.min())
    excess = t - n * mean
    if span == 0:
        return 0.0 if excess > 0 else 1.0
    if excess <= 0:
        return 1.0
    return math.exp(-2.0 * excess**2 / (n * span**2))


def _power_tail_escape(law: StepLaw, n: int, half_width: float) -> float:
    alpha = law.alpha
    c = law.tail_constant
    best = 1.0
    for b in np.unique(np.floor(np.geomspace(1, max(2.0, half_width), 200))):
        # P{|xi| > b} <= 2 c b^-alpha / alpha ;  E[xi^2; |xi| <= b] <= 2 c ((b+1)^(2-alpha)/(2-alpha) + 1)
        big = n * 2 * c * b**-alpha / alpha
        second = 2 * c * ((b + 1) ** (2 - alpha) / (2 - alpha) + 1)
        cheb = n * second / half_width**2
        best = min(best, big + cheb)
    return float(best)


def alias_error_bound(law: StepLaw, n: int, grid: GridSpec) -> float:
    """Upper bound on ``P{S_n outside (-M_r/2, M_r/2] for some r}``.

    Bounded support: per coordinate the smaller of Chernoff (exact moment
    generating function) and Hoeffding, union over coordinates and both
    signs.  Power tail: a single big jump beyond a truncation level ``b`` or a
    Chebyshev deviation of the truncated sum, minimised over ``b``.
    """
    if n == 0:
        return 0.0
    if law.family == POWER_TAIL:
        return _power_tail_escape(law, n, grid.sizes[0] / 2.0)
    pts = law.support.astype(float)
    probs = law.weights
    total = 0.0
    for r, m in enumerate(grid.sizes):
        t = m / 2.0
        coord = pts[:, r]
        for sign in (1.0, -1.0):
            vals = sign * coord
            total += min(_chernoff_tail(vals, probs, n, t), _hoeffding_tail(vals, probs, n, t))
    return min(1.0, total)


def choose_grid(law: StepLaw, n_max: int, target: float = 1e-12) -> GridSpec:
    """Smallest uniform grid whose alias bound at every ``n <= n_max`` is below ``target``.

    The floating-point part of the error is only known after the sweep and is
    checked by the caller against the same target.
    """
    if law.family != FINITE:
        raise ValueError("automatic grids need bounded support; pass a GridSpec for power tails")

    def worst(m):
        g = GridSpec.uniform(m, law.dim)
        return max(alias_error_bound(law, n, g) for n in range(n_max, 0, -max(1, n_max // 16)))

    hi = 2 * n_max * law.radius + 1
    lo = 3
    while lo < hi:
        mid = (lo + hi) // 2
        if worst(mid) <= target:
            hi = mid
        else:
            lo = mid + 1
    return GridSpec.uniform(lo, law.dim)


def auto_occupation(law: StepLaw, n_max: int, target: float = 1e-12, grid: GridSpec | None = None,
                    workers: int = 1) -> tuple[USeq, str]:
    """Pick between the alias-free grid and the smallest grid certified to ``target``.

    The sweep cost is proportional to the number of grid points, so the
    alias-free grid is used unless the certified aliased grid is smaller or
    the alias-free sweep would not fit under the memory cap.  Returns the
    sequence and a note recording the decision.
    """
    if grid is not None:
        return u_aliased(law, n_max, grid, workers), "aliased-dft (grid given)"
    if law.family == POWER_TAIL:
        grid = GridSpec.uniform(1 << 20, 1)
        return u_aliased(law, n_max, grid, workers), "aliased-dft (default power-tail grid 2^20)"
    full = GridSpec.uniform(2 * n_max * law.radius + 1, law.dim)
    fits = full.memory_estimate(not law.is_symmetric, n_max, workers) <= memory_cap()
    grid = choose_grid(law, n_max, target)
    if fits and full.total <= grid.total:
        return u_exact(law, n_max, "float", workers), f"exact-dft (alias-free M={full.sizes[0]})"
    reason = "exact grid over memory cap" if not fits else f"cheaper than alias-free M={full.sizes[0]}"
    return u_aliased(law, n_max, grid, workers), f"aliased-dft (M={grid.sizes[0]}, {reason})"


def hurwitz_tail(eta: float, n: int) -> float:
    """``sum_{k > n} k^-eta`` for ``eta > 1``."""
    return float(special.zeta(eta, n + 1))


def u_sum(u: USeq, plan=None, g0: float | None = None) -> tuple[float, float, float]:
    """Total occupation ``U = sum_{n >= 1} u_n`` with a tail correction.

    With a norming plan the tail beyond the horizon follows the model
    ``g0 / C_n`` (``g0`` extrapolated from ``u`` when not given); the
    returned bound adds the per-entry errors to the spread between using
    ``g0`` and the last observed ``C_N u_N`` in the tail model.  Without a
    plan the tail is taken geometric from the last two nonzero entries, which
    suits walks with drift.

    Returns ``(U, tail, bound)``.
    """
    vals = u.as_float()
    n_max = u.horizon
    partial = math.fsum(vals[1:])
    err_sum = math.fsum(u.errors[1:])
    if plan is not None:
        if not plan.transient:
            raise ValueError(f"sum of u_n diverges for a recurrent plan (eta = {plan.eta:g})")
        if g0 is None:
            from .asymptotics import empirical_g0

            g0, _ = empirical_g0(u, plan)
        scale = plan.scale_product
        zsum = hurwitz_tail(plan.eta, n_max) / scale
        tail = g0 * zsum
        last = _last_positive(vals)
        observed = plan.C(last) * vals[last] if last else g0
        bound = err_sum + abs(observed - g0) * zsum
        return partial + tail, tail, bound
    nz = np.nonzero(vals[1:] > 0)[0] + 1
    if len(nz) == 0:
        return 0.0, 0.0, err_sum
    if len(nz) < 2:
        raise ValueError("horizon too short to fit a geometric tail")
    n1, n2 = nz[-2], nz[-1]
    ratio = vals[n2] / vals[n1]
    if ratio >= 1:
        raise ValueError("occupation sequence is not decaying; supply a norming plan")
    tail = vals[n2] * ratio / (1 - ratio)
    return partial + tail, tail, err_sum + tail


def _last_positive(vals: np.ndarray) -> int:
    nz = np.nonzero(vals[1:] > 0)[0]
    return int(nz[-1] + 1) if len(nz) else 0
