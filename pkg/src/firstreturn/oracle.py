"""Independent ground truth: taboo dynamic programming, path enumeration, Monte Carlo."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist

import numpy as np

from .lattice_model import FINITE, POWER_TAIL, StepLaw
from .occupation import CapacityError, evolve_box

ENUMERATION_CAP = 20_000_000
RATIONAL_BOX_CAP = 40_000
MC_BLOCK = 1 << 16


@dataclass
class TabooTable:
    """``f_m(x) = P{S_m = x, tau > m}`` on the box ``[-n a, n a]^d``.

    ``final`` holds ``f_n``; ``layers`` every ``f_m`` when requested.  In
    rational mode entries are Fractions.
    """

    horizon: int
    radius: int
    final: np.ndarray
    first_return: list
    survival: list
    exact: bool
    layers: list | None = field(default=None, repr=False)

    def at(self, x) -> object:
        return self.final[tuple(c + self.radius for c in x)]


def _scale_layer(f: np.ndarray, den: int, m: int) -> np.ndarray:
    scale = den**m
    return np.vectorize(lambda v: Fraction(int(v), scale), otypes=[object])(f)


def taboo_dp(law: StepLaw, n: int, mode: str = "float", keep_layers: bool = False) -> TabooTable:
    """Position law of paths that have not revisited the origin.

    ``f_{m+1}(x) = sum_y f_m(y) P{xi = x - y}`` for ``x != 0``; the mass that
    lands on the origin at step ``m`` is ``p_m``.  A hold at the origin counts
    as a return, so ``p_1 = P{xi = 0}``.
    """
    if law.family != FINITE:
        raise ValueError("taboo_dp needs a finite-atoms law")
    exact = mode == "rational"
    if exact and not law.exact:
        raise ValueError("rational mode needs rational step probabilities")
    radius = n * law.radius
    if exact and (2 * radius + 1) ** law.dim > RATIONAL_BOX_CAP:
        limit = 0
        while (2 * (limit + 1) * law.radius + 1) ** law.dim <= RATIONAL_BOX_CAP:
            limit += 1
        raise CapacityError(f"rational taboo DP with n = {n} exceeds the box cap; use n <= {limit}")
    den = law.common_denominator()[0] if exact else 1
    first = [Fraction(0) if exact else 0.0]
    survival = [Fraction(1) if exact else 1.0]
    layers = [] if keep_layers else None
    f = None
    for m, f, absorbed in evolve_box(law, n, exact=exact, taboo=True):
        if m > 0:
            if exact:
                first.append(Fraction(int(absorbed), den**m))
                survival.append(Fraction(int(f.sum()), den**m))
            else:
                first.append(float(absorbed))
                survival.append(math.fsum(f.ravel()))
        if keep_layers:
            layers.append(_scale_layer(f, den, m) if exact else f.copy())
    final = _scale_layer(f, den, n) if exact else f
    return TabooTable(n, radius, final, first, survival, exact, layers)


def lemma1_check(table: TabooTable, positions: np.ndarray, p: float, band: tuple[float, float],
                 norming: float | None = None):
    """Compare ``P{S_n = x, tau > n} / P{S_n = x}`` with ``1 - p`` for ``||x||_inf`` in ``band``.

    ``positions`` is ``P{S_n = x}`` on the same box.  Returns
    ``(max_relative_deviation, rows)`` with rows ``(x, ratio, deviation)``
    sorted by decreasing deviation.  When ``norming`` (``C_n``) is given,
    ``rows`` is followed by ``C_n max |P{S_n = x, tau > n} - (1 - p) P{S_n = x}|``
    over the band, the error in units of ``1 / C_n``.
    """
    if positions.shape != table.final.shape:
        raise ValueError("taboo and position tables must share the box")
    lo, hi = band
    if lo > hi:
        raise ValueError("empty band")
    d = positions.ndim
    r = table.radius
    grids = np.meshgrid(*[np.arange(-r, r + 1)] * d, indexing="ij")
    norm = np.max(np.abs(np.stack(grids)), axis=0)
    pos = positions.astype(float) if positions.dtype == object else positions
    taboo = table.final.astype(float) if table.final.dtype == object else table.final
    in_band = (norm >= lo) & (norm <= hi)
    mask = in_band & (pos > 0)
    if not mask.any():
        raise ValueError(f"band {band} contains no reachable points")
    ratio = taboo[mask] / pos[mask]
    target = 1.0 - p
    dev = np.abs(ratio - target) / target
    coords = np.stack([g[mask] for g in grids], axis=-1)
    order = np.argsort(-dev, kind="stable")
    rows = [(tuple(int(c) for c in coords[i]), float(ratio[i]), float(dev[i])) for i in order]
    if norming is None:
        return float(dev.max()), rows
    scaled = float(norming * np.max(np.abs(taboo[in_band] - target * pos[in_band])))
    return float(dev.max()), rows, scaled


def exact_enumeration(law: StepLaw, n: int) -> tuple[Fraction, Fraction]:
    """Exact ``(u_n, p_n)`` by summing over every step sequence of length ``n``.

    Paths are kept individually (no merging of states); a path is dropped once
    it is farther from the origin than the remaining steps can cover.
    """
    if law.family != FINITE or not law.exact:
        raise ValueError("exact enumeration needs a rational finite-atoms law")
    if n < 1:
        raise ValueError("n must be >= 1")
    k = len(law.points)
    if k**n > ENUMERATION_CAP * 8:
        raise CapacityError(f"{k}^{n} paths exceed the enumeration cap")
    den, nums = law.common_denominator()
    dtype = np.int64 if den**n < 2**62 else object
    steps = law.support
    weights = np.array(nums, dtype=dtype)
    a = law.radius
    pos = np.zeros((1, law.dim), dtype=np.int64)
    wt = np.ones(1, dtype=dtype)
    returned = np.zeros(1, dtype=bool)
    for m in range(1, n + 1):
        count = len(pos) * k
        if count > ENUMERATION_CAP:
            raise CapacityError(f"enumeration frontier of {count} paths exceeds the cap")
        pos = (pos[:, None, :] + steps[None, :, :]).reshape(-1, law.dim)
        wt = (wt[:, None] * weights[None, :]).reshape(-1)
        returned = np.repeat(returned, k)
        at0 = ~pos.any(axis=1)
        if m < n:
            returned |= at0
            alive = np.abs(pos).max(axis=1) <= (n - m) * a
            pos, wt, returned = pos[alive], wt[alive], returned[alive]
        else:
            u_num = int(wt[at0].sum())
            p_num = int(wt[at0 & ~returned].sum())
    scale = den**n
    return Fraction(u_num, scale), Fraction(p_num, scale)


# --- Monte Carlo -------------------------------------------------------------------


def wilson_interval(successes, trials: int, confidence: float = 0.99):
    """Wilson score interval for a binomial proportion (vectorised over ``successes``)."""
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    k = np.asarray(successes, dtype=float)
    phat = k / trials
    denom = 1.0 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    lo = np.where(k == 0, 0.0, np.clip(centre - half, 0.0, 1.0))
    hi = np.where(k == trials, 1.0, np.clip(centre + half, 0.0, 1.0))
    return lo, hi


@dataclass
class MCEstimate:
    n_max: int
    trials: int
    seed: int
    hits: np.ndarray
    first_returns: np.ndarray
    confidence: float = 0.99
    interval_method: str = "wilson"

    @property
    def u(self) -> np.ndarray:
        return self.hits / self.trials

    @property
    def p(self) -> np.ndarray:
        return self.first_returns / self.trials

    def u_interval(self):
        return wilson_interval(self.hits, self.trials, self.confidence)

    def p_interval(self):
        return wilson_interval(self.first_returns, self.trials, self.confidence)


def _alias_table(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Walker/Vose alias table."""
    k = len(probs)
    scaled = probs * k
    prob = np.zeros(k)
    alias = np.zeros(k, dtype=np.int64)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s, g = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


class _PowerTailSampler:
    """Exact sampler for ``P{xi = +-k} = c k^(-1-alpha)``.

    Magnitudes up to ``cutoff`` come from an inverse-CDF table; beyond it a
    continuous Pareto proposal is floored and accepted with the exact ratio.
    """

    def __init__(self, law: StepLaw, cutoff: int = 1 << 16):
        from scipy import special

        self.alpha = a = law.alpha
        self.cutoff = cutoff
        ks = np.arange(1, cutoff + 1, dtype=float)
        mass = ks ** (-1.0 - a) / float(special.zeta(1.0 + a))
        self.cdf = np.cumsum(mass)
        self.tail = float(special.zeta(1.0 + a, cutoff + 1) / special.zeta(1.0 + a))
        self.cdf[-1] = 1.0 - self.tail
        start = cutoff + 1
        self.start = start
        self.bound = (1.0 + 1.0 / start) ** (1.0 + a) / a

    def magnitudes(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        out = np.searchsorted(self.cdf, u, side="right").astype(np.int64) + 1
        big = np.nonzero(out > self.cutoff)[0]
        while len(big):
            a = self.alpha
            x = self.start * rng.random(len(big)) ** (-1.0 / a)
            k = np.floor(x)
            q = k ** -a - (k + 1) ** -a
            accept = rng.random(len(big)) * self.bound * q <= k ** (-1.0 - a)
            out[big[accept]] = np.minimum(k[accept], 2**62).astype(np.int64)
            big = big[~accept]
        return out

    def steps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        mags = self.magnitudes(rng, size)
        signs = np.where(rng.random(size) < 0.5, -1, 1)
        return (mags * signs)[:, None]


def _mc_block(law: StepLaw, n_max: int, trials: int, seed_seq, sampler) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    pos = np.zeros((trials, law.dim), dtype=np.int64)
    returned = np.zeros(trials, dtype=bool)
    hits = np.zeros(n_max + 1, dtype=np.int64)
    firsts = np.zeros(n_max + 1, dtype=np.int64)
    hits[0] = trials
    if law.family == FINITE:
        prob, alias = sampler
        support = law.support
    for m in range(1, n_max + 1):
        if law.family == FINITE:
            col = rng.integers(0, len(prob), trials)
            keep = rng.random(trials) < prob[col]
            idx = np.where(keep, col, alias[col])
            pos += support[idx]
        else:
            pos += sampler.steps(rng, trials)
        at0 = ~pos.any(axis=1)
        hits[m] = at0.sum()
        firsts[m] = (at0 & ~returned).sum()
        returned |= at0
    return hits, firsts


def mc_paths(law: StepLaw, n_max: int, trials: int, seed: int, workers: int = 1) -> MCEstimate:
    """Simulate ``trials`` walks to ``n_max`` and count zero visits and first returns.

    Trials are cut into fixed blocks; block ``b`` draws from its own Philox
    stream spawned from ``seed``.  Integer counts are summed, so results are
    identical for any ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sampler = _alias_table(law.weights) if law.family == FINITE else _PowerTailSampler(law)
    sizes = [MC_BLOCK] * (trials // MC_BLOCK)
    if trials % MC_BLOCK:
        sizes.append(trials % MC_BLOCK)
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(i):
        return _mc_block(law, n_max, sizes[i], children[i], sampler)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    hits = sum(p[0] for p in parts)
    firsts = sum(p[1] for p in parts)
    return MCEstimate(n_max, trials, seed, hits, firsts)


def mc_containment(est: MCEstimate, u_exact, p_exact) -> dict:
    """Fraction of exact ``u_n``, ``p_n`` (``n = 1..n_max``) inside the MC intervals."""
    n = np.arange(1, est.n_max + 1)
    ulo, uhi = est.u_interval()
    plo, phi = est.p_interval()
    u_ex = np.asarray(u_exact, dtype=float)[n]
    p_ex = np.asarray(p_exact, dtype=float)[n]
    u_in = (ulo[n] <= u_ex) & (u_ex <= uhi[n])
    p_in = (plo[n] <= p_ex) & (p_ex <= phi[n])
    inside = int(u_in.sum() + p_in.sum())
    return {
        "inside": inside,
        "total": 2 * len(n),
        "fraction": inside / (2 * len(n)),
        "u_outside": [int(k) for k in n[~u_in]],
        "p_outside": [int(k) for k in n[~p_in]],
    }

