"""Norming sequences, limiting constants and convergence diagnostics.

The main quantities are ``C_n u_n -> g(0)`` (local limit at the origin) and
``p_n / u_n -> (1 - p)^2`` for aperiodic transient walks, giving
``p_n ~ (1 - p)^2 g(0) / C_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice_model import FINITE, POWER_TAIL, StepLaw, WalkClass, classify, is_aperiodic
from .occupation import USeq
from .renewal import TauDist


class NormingError(ValueError):
    pass


class HypothesisError(ValueError):
    """The walk does not satisfy the hypotheses needed for the asymptotic check."""

    def __init__(self, reasons: list[str]):
        super().__init__("; ".join(reasons))
        self.reasons = reasons


@dataclass(frozen=True)
class NormingPlan:
    """Pure-power norming ``c_{nr} = scale_r n^(1 / alpha_r)``."""

    alphas: tuple[float, ...]
    scales: tuple[float, ...] | None = None

    def __post_init__(self):
        if any(not 0 < a <= 2 for a in self.alphas):
            raise NormingError(f"stable indices must lie in (0, 2], got {self.alphas}")
        if self.scales is None:
            object.__setattr__(self, "scales", (1.0,) * len(self.alphas))
        if len(self.scales) != len(self.alphas) or any(s <= 0 for s in self.scales):
            raise NormingError("need one positive scale per index")

    @property
    def dim(self) -> int:
        return len(self.alphas)

    @property
    def eta(self) -> float:
        return sum(1.0 / a for a in self.alphas)

    @property
    def scale_product(self) -> float:
        return math.prod(self.scales)

    @property
    def transient(self) -> bool:
        # sum 1/C_n < infinity; for d >= 3 this always holds since eta >= d/2
        return self.eta > 1

    def c(self, n) -> np.ndarray:
        """Per-component norming values, shape ``(len(n), d)``."""
        n = np.atleast_1d(np.asarray(n, dtype=float))
        return np.stack([s * n ** (1.0 / a) for a, s in zip(self.alphas, self.scales)], axis=-1)

    def C(self, n):
        out = self.scale_product * np.asarray(n, dtype=float) ** self.eta
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {"alphas": list(self.alphas), "scales": list(self.scales), "eta": self.eta}


def make_norming(law: StepLaw, cls: WalkClass | None = None) -> NormingPlan:
    cls = classify(law) if cls is None else cls
    if not cls.drift_free:
        raise NormingError("nonzero drift: the walk is not asymptotically stable without centering")
    if law.family == FINITE:
        return NormingPlan((2.0,) * law.dim)
    if law.family == POWER_TAIL:
        return NormingPlan((law.alpha,))
    raise NormingError(f"unsupported family {law.family!r}")


def gaussian_g0(cov) -> float:
    """Normal density at the origin, ``(2 pi)^(-d/2) det(B)^(-1/2)``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, atol=1e-14):
        raise NormingError("covariance must be a symmetric square matrix")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NormingError("covariance is singular or not positive definite (det B = 0)") from None
    d = cov.shape[0]
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    if not np.isfinite(log_det):
        raise NormingError("covariance is singular (det B = 0)")
    return float(math.exp(-0.5 * d * math.log(2 * math.pi) - 0.5 * log_det))


def product_stable_g0(alpha: float, sigma: float) -> float:
    """Density at 0 of the symmetric stable law with characteristic function exp(-sigma^alpha |t|^alpha).

    Fourier inversion gives ``(1 / pi) int_0^inf exp(-(sigma t)^alpha) dt
    = Gamma(1 + 1/alpha) / (pi sigma)``.
    """
    if not 0 < alpha <= 2:
        raise NormingError(f"alpha must lie in (0, 2], got {alpha}")
    if sigma <= 0:
        raise NormingError("sigma must be positive")
    return math.gamma(1.0 + 1.0 / alpha) / (math.pi * sigma)


def stable_scale(law: StepLaw) -> float:
    """Scale ``sigma`` of the stable limit of ``S_n / n^(1/alpha)`` for the power tail.

    With ``P{xi = +-k} = c k^(-1-alpha)`` one has
    ``1 - phi(t) ~ 2 c Gamma(1 - alpha) cos(pi alpha / 2) / alpha |t|^alpha``
    as ``t -> 0`` (at ``alpha = 1`` the constant is ``pi c``), so
    ``sigma^alpha = 2 c Gamma(1 - alpha) cos(pi alpha / 2) / alpha``.
    """
    if law.family != POWER_TAIL:
        raise NormingError("stable scale is defined for the power-tail family")
    a = law.alpha
    c = law.tail_constant
    if abs(a - 1.0) < 1e-12:
        return math.pi * c
    return (2.0 * c * math.gamma(1.0 - a) * math.cos(math.pi * a / 2.0) / a) ** (1.0 / a)


def theoretical_g0(law: StepLaw, cls: WalkClass | None = None) -> tuple[float, str]:
    """Limit constant ``g(0)`` for ``C_n = n^eta`` and how it was obtained."""
    cls = classify(law) if cls is None else cls
    if law.family == FINITE:
        return gaussian_g0(cls.covariance), "gaussian: (2 pi)^(-d/2) det(B)^(-1/2)"
    sigma = stable_scale(law)
    return product_stable_g0(law.alpha, sigma), (
        f"stable: Gamma(1 + 1/alpha) / (pi sigma), sigma^alpha = 2 c Gamma(1 - alpha) "
        f"cos(pi alpha / 2) / alpha, sigma = {sigma:.12g}"
    )


# --- extrapolation ---------------------------------------------------------------


def aitken(x0: float, x1: float, x2: float) -> float:
    """Aitken delta-squared limit of three successive terms.

    Falls back to ``x2`` unless the differences shrink geometrically with the
    same sign (ratio in (0, 1)); the accelerated value then lies beyond
    ``x2`` in the direction of the trend.
    """
    d1 = x1 - x0
    d2 = x2 - x1
    if d1 == 0 or d2 == 0:
        return x2
    r = d2 / d1
    if not 0 < r < 1:
        return x2
    return x2 + d2 * r / (1.0 - r)


def geometric_ladder(values: np.ndarray, n_max: int | None = None, n_min: int = 8) -> list[int]:
    """Indices ``N, N/2, N/4, ... >= n_min`` (ascending) with positive values.

    A ladder point whose value is zero (parity zero of a periodic walk) is
    dropped, not interpolated.
    """
    n_max = len(values) - 1 if n_max is None else n_max
    out = []
    n = n_max
    while n >= n_min:
        if values[n] > 0:
            out.append(n)
        n //= 2
    return out[::-1]


def extrapolate(ladder: list[int], seq: np.ndarray) -> float:
    if len(ladder) < 3:
        raise ValueError("need at least three ladder points to extrapolate")
    a, b, c = (float(seq[n]) for n in ladder[-3:])
    return aitken(a, b, c)


def empirical_g0(u: USeq, plan: NormingPlan, n_min: int = 8) -> tuple[float, dict]:
    """Extrapolated limit of ``C_n u_n`` over a doubling ladder ending at the horizon.

    Returns ``(g0, trend)`` where ``trend`` holds the ladder, the raw values
    and a ``degenerate`` flag for sequences that vanish identically.
    """
    vals = u.as_float()
    if not np.any(vals[1:] > 0):
        return 0.0, {"ladder": [], "values": [], "degenerate": True}
    scaled = np.zeros_like(vals)
    idx = np.arange(len(vals))
    scaled[1:] = plan.C(idx[1:]) * vals[1:]
    ladder = geometric_ladder(vals, n_min=n_min)
    if len(ladder) < 3:
        raise ValueError("horizon too short: fewer than 3 ladder points")
    g0 = extrapolate(ladder, scaled)
    return g0, {
        "ladder": ladder,
        "values": [float(scaled[n]) for n in ladder],
        "raw_last": float(scaled[ladder[-1]]),
        "degenerate": False,
    }


def predict_pn(p: float, g0: float, plan: NormingPlan, n) -> float | np.ndarray:
    """``(1 - p)^2 g0 / C_n``."""
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    return (1.0 - p) ** 2 * g0 / plan.C(n)


@dataclass
class TheoremReport:
    ladder: list[int]
    ratios: list[float]
    ratio_limit: float
    target: float
    p: float
    p_interval: tuple[float, float]
    scaled_u: list[float]
    g0_empirical: float
    g0_predicted: float | None
    g0_method: str = ""
    ratio_gap: float = float("nan")
    g0_gap: float | None = None
    verdicts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    u: USeq | None = field(default=None, repr=False)
    tau: TauDist | None = field(default=None, repr=False)
    plan: NormingPlan | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "verdicts": self.verdicts,
            "p": self.p,
            "p_interval": list(self.p_interval),
            "target_ratio": self.target,
            "ratio_ladder": {"n": self.ladder, "p_n/u_n": self.ratios},
            "ratio_limit": self.ratio_limit,
            "ratio_gap": self.ratio_gap,
            "scaled_u_ladder": {"n": self.ladder, "C_n u_n": self.scaled_u},
            "g0_empirical": self.g0_empirical,
            "g0_predicted": self.g0_predicted,
            "g0_method": self.g0_method,
            "g0_gap": self.g0_gap,
            **self.extra,
        }


def ratio_diagnostics(p_seq: TauDist, u: USeq, p: float, n_min: int = 8) -> TheoremReport:
    """Tabulate ``p_n / u_n`` on a doubling ladder and compare its limit with ``(1 - p)^2``."""
    uv = u.as_float()
    pv = p_seq.as_float()
    n_max = min(len(uv), len(pv)) - 1
    ladder = geometric_ladder(uv, n_max, n_min)
    if not ladder:
        raise ValueError("u_n vanishes on every ladder index")
    ratio = np.zeros(n_max + 1)
    pos = uv[: n_max + 1] > 0
    ratio[pos] = pv[: n_max + 1][pos] / uv[: n_max + 1][pos]
    limit = extrapolate(ladder, ratio) if len(ladder) >= 3 else float(ratio[ladder[-1]])
    target = (1.0 - p) ** 2
    return TheoremReport(
        ladder=ladder,
        ratios=[float(ratio[n]) for n in ladder],
        ratio_limit=limit,
        target=target,
        p=p,
        p_interval=(p, p),
        scaled_u=[],
        g0_empirical=float("nan"),
        g0_predicted=None,
        ratio_gap=abs(limit - target) / target if target > 0 else float("inf"),
    )


def smoothness_check(p_seq: TauDist, window: tuple[int, int] | None = None) -> tuple[float, dict]:
    """``max |p_{n+1} / p_n - 1|`` over a tail window (default ``[N/2, N]``)."""
    pv = p_seq.as_float()
    n_max = len(pv) - 1
    lo, hi = window if window else (n_max // 2, n_max)
    hi = min(hi, n_max)
    idx = np.arange(lo, hi)
    good = (pv[idx] > 0) & (pv[idx + 1] > 0)
    skipped = [int(n) for n in idx[~good]]
    if not np.any(good):
        return float("nan"), {"window": (lo, hi), "skipped": skipped}
    dev = np.abs(pv[idx + 1][good] / pv[idx][good] - 1.0)
    return float(dev.max()), {"window": (lo, hi), "skipped": skipped}


# --- full pipeline -----------------------------------------------------------------


def theorem_hypotheses(law: StepLaw, cls: WalkClass | None = None) -> list[str]:
    """Reasons why the first-return asymptotics cannot be checked (empty if none)."""
    cls = classify(law) if cls is None else cls
    reasons = []
    if not cls.drift_free:
        reasons.append("nonzero drift")
    if not is_aperiodic(law):
        reasons.append("periodic walk (support differences do not generate Z^d); try lazify")
    if not cls.transient:
        reasons.append(f"recurrent (η = {cls.eta:g})")
    return reasons


def verify_theorem(law: StepLaw, n_max: int, grid=None, target: float = 1e-12,
                   richardson: bool | None = None, workers: int = 1) -> TheoremReport:
    """Run the occupation -> inversion -> diagnostics pipeline for one law.

    Raises :class:`HypothesisError` listing every failed hypothesis.
    """
    from .occupation import alias_richardson, auto_occupation, u_sum
    from .renewal import estimate_p, invert_renewal

    cls = classify(law)
    reasons = theorem_hypotheses(law, cls)
    if reasons:
        raise HypothesisError(reasons)
    plan = make_norming(law, cls)
    if richardson is None:
        richardson = law.family == POWER_TAIL
    if richardson:
        from .occupation import GridSpec

        grid = grid or GridSpec.uniform(1 << 20, law.dim)
        u = alias_richardson(law, n_max, grid, workers)
        method_note = f"aliased-dft with grid-size extrapolation, M = {grid.sizes}"
    else:
        u, method_note = auto_occupation(law, n_max, target, grid, workers)
    taus = invert_renewal(u)
    g0_emp, trend = empirical_g0(u, plan)
    U, tail, bound = u_sum(u, plan, g0_emp)
    p, interval = estimate_p(U, bound)
    report = ratio_diagnostics(taus, u, p)
    g0_pred, g0_method = theoretical_g0(law, cls)
    report.p_interval = interval
    report.scaled_u = trend["values"]
    report.g0_empirical = g0_emp
    report.g0_predicted = g0_pred
    report.g0_method = g0_method
    report.g0_gap = abs(g0_emp - g0_pred) / g0_pred
    smooth, smooth_info = smoothness_check(taus)
    report.verdicts = {"aperiodic": True, "transient": True, "drift_free": True}
    report.extra = {
        "method": method_note,
        "horizon": n_max,
        "norming": plan.to_dict(),
        "U": U,
        "U_tail": tail,
        "U_bound": bound,
        "max_u_error": float(np.max(u.errors)),
        "sup_C_n_u_n": float(np.max(plan.C(np.arange(1, n_max + 1)) * u.as_float()[1:])),
        "smoothness_max_deviation": smooth,
        "smoothness_window": list(smooth_info["window"]),
        "predicted_p_n_at_horizon": float(predict_pn(p, g0_pred, plan, n_max)),
        "p_n_at_horizon": float(taus.as_float()[n_max]),
    }
    report.u, report.tau, report.plan = u, taus, plan
    return report
