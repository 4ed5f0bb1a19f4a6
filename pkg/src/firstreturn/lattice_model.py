"""Step distributions on Z^d and walk classification.

Two families are supported:

``finite-atoms``
    finitely many lattice points with probabilities, stored as exact
    :class:`fractions.Fraction` values when every input was rational, floats
    otherwise.
``symmetric-power-tail``
    the one-dimensional law ``P{xi = +-k} = c k^(-1-alpha)``, ``k >= 1``, with
    ``c = 1 / (2 zeta(1 + alpha))``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import mpmath
import numpy as np

FINITE = "finite-atoms"
POWER_TAIL = "symmetric-power-tail"
FAMILIES = (FINITE, POWER_TAIL)

FLOAT_MASS_TOL = 1e-12
EPS = np.finfo(float).eps


class ModelError(ValueError):
    """Invalid step law or model file."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field_name = field_name


@dataclass(frozen=True)
class StepLaw:
    dim: int
    family: str
    points: tuple[tuple[int, ...], ...] = ()
    probs: tuple = ()
    alpha: float | None = None
    exact: bool = False

    @property
    def tail_constant(self) -> float:
        """``c`` such that ``P{xi = +-k} = c k^(-1-alpha)``."""
        if self.family != POWER_TAIL:
            raise ModelError("tail constant only defined for the power-tail family")
        return 1.0 / (2.0 * float(mpmath.zeta(1.0 + self.alpha)))

    @property
    def radius(self) -> int | None:
        """Largest absolute coordinate in the support, ``None`` for unbounded laws."""
        if self.family != FINITE:
            return None
        return max(max(abs(c) for c in x) for x in self.points)

    @property
    def support(self) -> np.ndarray:
        return np.array(self.points, dtype=np.int64).reshape(len(self.points), self.dim)

    @property
    def weights(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs])

    @property
    def is_symmetric(self) -> bool:
        if self.family == POWER_TAIL:
            return True
        table = dict(zip(self.points, self.probs))
        return all(table.get(tuple(-c for c in x)) == p for x, p in table.items())

    def common_denominator(self) -> tuple[int, tuple[int, ...]]:
        """Return ``(D, numerators)`` with ``probs[i] == numerators[i] / D``."""
        if not self.exact:
            raise ModelError("law is not in rational mode")
        den = 1
        for p in self.probs:
            den = math.lcm(den, p.denominator)
        return den, tuple(int(p * den) for p in self.probs)

    def to_dict(self) -> dict:
        out: dict = {"dim": self.dim, "family": self.family}
        if self.family == FINITE:
            out["atoms"] = [
                [*x, _prob_to_json(p, self.exact)] for x, p in zip(self.points, self.probs)
            ]
        else:
            out["alpha"] = self.alpha
        return out

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class WalkClass:
    dim: int
    aperiodic: bool
    mean: tuple[float, ...] | None
    covariance: np.ndarray | None = field(repr=False)
    alphas: tuple[float, ...]
    eta: float
    transient: bool
    drift_free: bool

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "aperiodic": self.aperiodic,
            "mean": None if self.mean is None else list(self.mean),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "alphas": list(self.alphas),
            "eta": self.eta,
            "transient": self.transient,
            "drift_free": self.drift_free,
        }


def _prob_to_json(p, exact: bool):
    if exact:
        return f"{p.numerator}/{p.denominator}"
    return float(p)


def _parse_prob(raw):
    """Rational strings, ints, Decimals and Fractions stay exact; floats do not."""
    if isinstance(raw, bool):
        raise ModelError(f"probability must be numeric, got {raw!r}", "atoms")
    if isinstance(raw, (Fraction, int)):
        return Fraction(raw), True
    if isinstance(raw, Decimal):
        return Fraction(raw), True
    if isinstance(raw, str):
        try:
            return Fraction(raw.strip()), True
        except (ValueError, ZeroDivisionError):
            raise ModelError(f"cannot parse probability {raw!r}", "atoms") from None
    if isinstance(raw, float):
        return raw, False
    raise ModelError(f"cannot parse probability {raw!r}", "atoms")


def validate_law(raw: dict | StepLaw) -> StepLaw:
    """Build a normalized :class:`StepLaw` from a model description.

    ``raw`` follows the model-file layout: ``{"dim": d, "family": ...,
    "atoms": [[x1, ..., xd, p], ...]}`` or ``{"dim": 1, "family":
    "symmetric-power-tail", "alpha": a}``.  Duplicate atoms are merged and
    zero-mass atoms dropped.  Rational input stays rational; if any
    probability is a float the whole law is stored in float mode.
    """
    if isinstance(raw, StepLaw):
        raw = raw.to_dict()
    if not isinstance(raw, dict):
        raise ModelError("model must be a mapping")
    dim = raw.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ModelError(f"dim must be a positive integer, got {dim!r}", "dim")
    family = raw.get("family", FINITE)
    if family not in FAMILIES:
        raise ModelError(f"unknown family {family!r}", "family")

    if family == POWER_TAIL:
        params = raw.get("params", raw)
        alpha = params.get("alpha")
        try:
            alpha = float(alpha)
        except (TypeError, ValueError):
            raise ModelError(f"alpha must be a number, got {alpha!r}", "alpha") from None
        if dim != 1:
            raise ModelError("symmetric-power-tail is only defined for dim = 1", "dim")
        if not 0.0 < alpha < 2.0:
            raise ModelError(f"alpha must lie in (0, 2), got {alpha}", "alpha")
        return StepLaw(dim=1, family=POWER_TAIL, alpha=alpha, exact=False)

    atoms = raw.get("atoms")
    if not atoms:
        raise ModelError("finite-atoms law needs a nonempty atom list", "atoms")
    merged: dict[tuple[int, ...], object] = {}
    exact = True
    for atom in atoms:
        if not isinstance(atom, (list, tuple)) or len(atom) != dim + 1:
            raise ModelError(f"atom {atom!r} must have {dim} coordinates and a probability", "atoms")
        coords = atom[:dim]
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in coords):
            raise ModelError(f"atom {atom!r} has non-integer coordinates", "atoms")
        prob, is_exact = _parse_prob(atom[dim])
        exact &= is_exact
        if prob < 0:
            raise ModelError(f"negative probability {atom[dim]!r} at {tuple(coords)}", "atoms")
        key = tuple(coords)
        merged[key] = merged.get(key, 0) + prob

    if not exact:
        merged = {k: float(v) for k, v in merged.items()}
    merged = {k: v for k, v in merged.items() if v != 0}
    if not merged:
        raise ModelError("support is empty (all probabilities are zero)", "atoms")

    total = sum(merged.values()) if exact else math.fsum(merged.values())
    if exact:
        if total != 1:
            raise ModelError(f"probabilities sum to {total} ({float(total):.6g}), not 1", "atoms")
    else:
        if abs(total - 1.0) > FLOAT_MASS_TOL:
            raise ModelError(f"probabilities sum to {total:.6g}, not 1", "atoms")
        merged = {k: v / total for k, v in merged.items()}

    keys = sorted(merged)
    return StepLaw(
        dim=dim,
        family=FINITE,
        points=tuple(keys),
        probs=tuple(merged[k] for k in keys),
        exact=exact,
    )


def load_model(path) -> StepLaw:
    with open(path) as fh:
        try:
            raw = json.load(fh, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            raise ModelError(f"malformed JSON: {exc}") from None
    if isinstance(raw, dict) and isinstance(raw.get("alpha"), Decimal):
        raw["alpha"] = float(raw["alpha"])
    return validate_law(raw)


def dump_model(law: StepLaw, path) -> None:
    with open(path, "w") as fh:
        json.dump(law.to_dict(), fh, indent=2)
        fh.write("\n")


# --- characteristic function ---------------------------------------------


@lru_cache(maxsize=32)
def _power_tail_series(alpha: float):
    """Coefficients of Re Li_{1+alpha}(e^{i lam}) around lam = 0.

    Re Li_s(e^{i lam}) = A |lam|^alpha + sum_j b_j lam^(2j) for |lam| < 2 pi,
    with s = 1 + alpha, A = Gamma(-alpha) cos(pi alpha / 2) and
    b_j = (-1)^j zeta(s - 2j) / (2j)!.  Terms decay like (lam / 2pi)^(2j);
    on |lam| <= pi they are summed until the remainder, bounded by a
    geometric series of ratio 1/4, is below 1e-17.
    """
    mpmath.mp.dps = 40
    s = mpmath.mpf(alpha) + 1
    if abs(alpha - 1.0) < 1e-15:
        lead = -mpmath.pi / 2
    else:
        lead = mpmath.gamma(-mpmath.mpf(alpha)) * mpmath.cos(mpmath.pi * mpmath.mpf(alpha) / 2)
    coeffs = []
    j = 0
    while True:
        b = (-1) ** j * mpmath.zeta(s - 2 * j) / mpmath.factorial(2 * j)
        coeffs.append(float(b))
        term = abs(b) * mpmath.pi ** (2 * j)
        if j > 4 and term * mpmath.mpf(4) / 3 < mpmath.mpf("1e-17"):
            break
        j += 1
    mpmath.mp.dps = 15
    return float(lead), np.array(coeffs)


def _power_tail_cf(alpha: float, lam: np.ndarray) -> np.ndarray:
    lam = np.abs(np.asarray(lam, dtype=float))
    wrap = lam > np.pi
    if np.any(wrap):
        lam = np.where(wrap, np.abs(np.remainder(lam + np.pi, 2 * np.pi) - np.pi), lam)
    lead, coeffs = _power_tail_series(alpha)
    c = 1.0 / (2.0 * float(mpmath.zeta(1.0 + alpha)))
    # 2 c b_0 = 1 exactly, so evaluate the deficit 1 - phi to keep relative accuracy near 0
    x2 = lam * lam
    poly = np.zeros_like(lam)
    for b in coeffs[:0:-1]:
        poly = poly * x2 + b
    return 1.0 + 2.0 * c * (lead * lam**alpha + poly * x2)


def char_fn(law: StepLaw, lam) -> np.ndarray | complex:
    """``E exp(i (lam, xi))`` for ``lam`` of shape ``(..., d)`` (or scalar if d = 1).

    Symmetric laws return real values.  The power-tail family is evaluated from
    the polylogarithm expansion around 0, accurate to about 1e-15 absolute.
    """
    lam = np.asarray(lam, dtype=float)
    scalar = lam.ndim == 0 or (law.dim > 1 and lam.ndim == 1)
    if law.dim == 1 and (lam.ndim == 0 or lam.shape[-1] != 1):
        lam = lam[..., None]
    if lam.shape[-1] != law.dim:
        raise ValueError(f"lambda must have trailing dimension {law.dim}")
    if law.family == POWER_TAIL:
        out = _power_tail_cf(law.alpha, lam[..., 0])
    else:
        phase = lam @ law.support.T.astype(float)
        if law.is_symmetric:
            out = np.cos(phase) @ law.weights
        else:
            out = np.exp(1j * phase) @ law.weights
    if scalar:
        return out.item() if np.ndim(out) == 0 else out[()]
    return out


def char_fn_grid_slab(law: StepLaw, shape: Sequence[int], rows: slice) -> np.ndarray:
    """Characteristic function on the torus grid ``lam_j = 2 pi j / M``.

    Only rows ``rows`` of the first axis are produced, which lets callers sweep
    large grids in slabs.  Integer phases are reduced modulo ``M_r`` before the
    trigonometric evaluation so that accuracy does not degrade with ``j``.
    """
    shape = tuple(shape)
    first = np.arange(shape[0])[rows]
    axes = [first] + [np.arange(m) for m in shape[1:]]
    if law.family == POWER_TAIL:
        lam = 2.0 * np.pi * np.minimum(first, shape[0] - first) / shape[0]
        return _power_tail_cf(law.alpha, lam)
    out_shape = (len(first),) + shape[1:]
    symmetric = law.is_symmetric
    out = np.zeros(out_shape, dtype=float if symmetric else complex)
    for x, p in zip(law.points, law.weights):
        angle = np.zeros(out_shape)
        for r, (coord, m) in enumerate(zip(x, shape)):
            if coord == 0:
                continue
            ax = (2.0 * np.pi / m) * np.remainder(coord * axes[r], m)
            angle = angle + ax.reshape((-1,) + (1,) * (len(shape) - r - 1))
        if symmetric:
            out += p * np.cos(angle)
        else:
            out += p * np.exp(1j * angle)
    return out


# --- aperiodicity ----------------------------------------------------------


def lattice_index(vectors: Iterable[Sequence[int]], dim: int) -> int:
    """Index in Z^dim of the lattice generated by integer ``vectors`` (0 if rank < dim).

    Row-style Hermite reduction with Euclidean elimination; the index is the
    product of the pivots.
    """
    rows = [list(map(int, v)) for v in vectors if any(v)]
    index = 1
    r = 0
    for col in range(dim):
        while True:
            nz = [i for i in range(r, len(rows)) if rows[i][col] != 0]
            if not nz:
                return 0
            piv = min(nz, key=lambda i: abs(rows[i][col]))
            rows[r], rows[piv] = rows[piv], rows[r]
            done = True
            for i in range(r + 1, len(rows)):
                q = rows[i][col] // rows[r][col]
                if q:
                    rows[i] = [a - q * b for a, b in zip(rows[i], rows[r])]
                if rows[i][col] != 0:
                    done = False
            if done:
                break
        index *= abs(rows[r][col])
        rows = rows[: r + 1] + [row for row in rows[r + 1 :] if any(row)]
        r += 1
    return index


def is_aperiodic(law: StepLaw) -> bool:
    """True iff differences of support points generate all of Z^d."""
    if law.family == POWER_TAIL:
        # support is Z \ {0}; the differences include 1
        return True
    base = law.points[0]
    diffs = [tuple(a - b for a, b in zip(x, base)) for x in law.points[1:]]
    return lattice_index(diffs, law.dim) == 1


# --- moments and classification -------------------------------------------


def moments(law: StepLaw) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Mean vector and covariance matrix, ``None`` where infinite."""
    if law.family == POWER_TAIL:
        mean = np.zeros(1) if law.alpha > 1 else None
        return mean, None
    if law.exact:
        d = law.dim
        mean = [sum(p * x[r] for x, p in zip(law.points, law.probs)) for r in range(d)]
        cov = [
            [
                sum(p * (x[r] - mean[r]) * (x[s] - mean[s]) for x, p in zip(law.points, law.probs))
                for s in range(d)
            ]
            for r in range(d)
        ]
        return np.array([float(m) for m in mean]), np.array(cov, dtype=float)
    x = law.support.astype(float)
    w = law.weights
    mean = w @ x
    centered = x - mean
    return mean, (centered * w[:, None]).T @ centered


def _has_drift(law: StepLaw) -> bool:
    if law.family == POWER_TAIL:
        return False
    if law.exact:
        return any(
            sum(p * x[r] for x, p in zip(law.points, law.probs)) != 0 for r in range(law.dim)
        )
    mean, _ = moments(law)
    return bool(np.max(np.abs(mean)) > 1e-14)


def classify(law: StepLaw, plan=None) -> WalkClass:
    """Aperiodicity, moments, stable indices and the recurrence verdict.

    ``plan`` is an optional :class:`firstreturn.asymptotics.NormingPlan`; when
    absent the indices follow from the family (2 per coordinate for finite
    variance, ``alpha`` for the power tail).  A walk with nonzero mean is
    reported as transient and not drift-free.  A zero-mean finite law whose
    covariance has rank below 3 is treated as living in that lower dimension.
    """
    mean, cov = moments(law)
    drift = _has_drift(law)
    if law.family == POWER_TAIL:
        default_alphas = (law.alpha,)
    else:
        default_alphas = (2.0,) * law.dim
    if plan is not None:
        alphas = tuple(float(a) for a in plan.alphas)
        if len(alphas) != law.dim:
            raise ModelError(f"plan has {len(alphas)} indices for a {law.dim}-dimensional law")
        if law.family == FINITE and any(a != 2.0 for a in alphas):
            raise ModelError("finite-atoms laws have finite variance; plan indices must be 2")
        if law.family == POWER_TAIL and not math.isclose(alphas[0], law.alpha):
            raise ModelError(f"plan index {alphas[0]} does not match the law's alpha {law.alpha}")
    else:
        alphas = default_alphas
    eta = sum(1.0 / a for a in alphas)

    if drift:
        transient = True
    elif law.family == FINITE:
        rank = int(np.linalg.matrix_rank(cov, tol=1e-12)) if cov is not None else 0
        transient = rank >= 3 or (rank == law.dim and eta > 1)
    else:
        transient = law.dim >= 3 or eta > 1
    return WalkClass(
        dim=law.dim,
        aperiodic=is_aperiodic(law),
        mean=None if mean is None else tuple(float(m) for m in mean),
        covariance=cov,
        alphas=alphas,
        eta=eta,
        transient=transient,
        drift_free=not drift,
    )


def lazify(law: StepLaw, hold) -> StepLaw:
    """Mix ``law`` with a hold at the origin of probability ``hold``."""
    if law.family != FINITE:
        raise ModelError("lazify needs a finite-atoms law")
    h, h_exact = _parse_prob(hold)
    if not 0 < h < 1:
        raise ModelError(f"hold must lie in (0, 1), got {hold!r}", "hold")
    exact = law.exact and h_exact
    if not exact:
        h = float(h)
    atoms = [[*x, p * (1 - h) if exact else float(p) * (1 - h)] for x, p in zip(law.points, law.probs)]
    atoms.append([0] * law.dim + [h])
    if exact:
        atoms = [[*a[:-1], f"{a[-1].numerator}/{a[-1].denominator}"] for a in atoms]
    return validate_law({"dim": law.dim, "family": FINITE, "atoms": atoms})


# --- standard laws used across tests and the CLI ---------------------------


def simple_walk(dim: int) -> StepLaw:
    atoms = []
    for j in range(dim):
        for s in (1, -1):
            e = [0] * dim
            e[j] = s
            atoms.append(e + [Fraction(1, 2 * dim)])
    return validate_law({"dim": dim, "atoms": atoms})


def lazy_simple_walk(dim: int, hold=Fraction(1, 2)) -> StepLaw:
    return lazify(simple_walk(dim), hold)


def power_tail(alpha: float) -> StepLaw:
    return validate_law({"dim": 1, "family": POWER_TAIL, "alpha": alpha})
