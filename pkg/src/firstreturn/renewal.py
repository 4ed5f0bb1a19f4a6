"""Renewal relation between return and first-return sequences.

``u_n = sum_{k=1}^n p_k u_{n-k}`` with ``u_0 = 1``; equivalently
``1 + u(s) = 1 / (1 - p(s))`` for the generating functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .occupation import USeq


class RenewalError(ValueError):
    pass


@dataclass(frozen=True)
class TauDist:
    """First-return distribution ``p_1..p_N`` (``values[0]`` is 0)."""

    values: np.ndarray
    errors: np.ndarray
    total: float | None = None
    interval: tuple[float, float] | None = None

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    @property
    def exact(self) -> bool:
        return self.values.dtype == object

    @property
    def partial_mass(self):
        return sum(self.values[1:]) if self.exact else math.fsum(self.values[1:])

    @property
    def defect(self) -> float | None:
        return None if self.total is None else 1.0 - self.total

    def cumulative(self) -> np.ndarray:
        if self.exact:
            out = np.empty(len(self.values), dtype=object)
            acc = Fraction(0)
            for i, v in enumerate(self.values):
                acc += v
                out[i] = acc
            return out
        return np.cumsum(self.values)

    def as_float(self) -> np.ndarray:
        return np.array([float(v) for v in self.values]) if self.exact else self.values

    @classmethod
    def from_values(cls, values) -> TauDist:
        values = list(values)
        exact = all(isinstance(v, (Fraction, int)) for v in values)
        arr = np.array([Fraction(0)] + [Fraction(v) for v in values], dtype=object) if exact \
            else np.concatenate([[0.0], np.asarray(values, dtype=float)])
        return cls(arr, np.zeros(len(arr)))


def forward_renewal(p: TauDist, n_max: int | None = None) -> USeq:
    """Occupation sequence generated by the first-return distribution ``p``."""
    n_max = p.horizon if n_max is None else n_max
    if n_max > p.horizon:
        raise RenewalError(f"horizon {n_max} exceeds the distribution's horizon {p.horizon}")
    vals = p.values[: n_max + 1]
    if any(v < 0 for v in vals):
        raise RenewalError("negative first-return mass")
    if p.exact:
        u = [Fraction(1)]
        for n in range(1, n_max + 1):
            u.append(sum(vals[k] * u[n - k] for k in range(1, n + 1)))
        out = np.array(u, dtype=object)
    else:
        out = np.zeros(n_max + 1)
        out[0] = 1.0
        for n in range(1, n_max + 1):
            out[n] = np.dot(vals[1 : n + 1], out[n - 1 :: -1][:n])
    return USeq(out, np.zeros(n_max + 1), "rational-dp" if p.exact else "convolution", "renewal")


def invert_renewal(u: USeq, tol: float = 1e-12) -> TauDist:
    """First-return distribution from the occupation sequence.

    ``p_n = u_n - sum_{k=1}^{n-1} p_k u_{n-k}``.  Input errors ``e_n`` are
    pushed through the linearisation ``dp(s) = (1 - p(s))^2 du(s)``, whose
    coefficients are dominated in absolute value by those of ``(1 + p(s))^2``.
    A value below ``-(tol + 10 * error)`` means the input was not generated
    by a random walk.
    """
    vals = u.values
    if vals[0] != 1:
        raise RenewalError(f"u_0 must be 1, got {vals[0]}")
    n_max = u.horizon
    if u.exact:
        p = [Fraction(0)]
        for n in range(1, n_max + 1):
            p.append(vals[n] - sum(p[k] * vals[n - k] for k in range(1, n)))
        out = np.array(p, dtype=object)
        errors = np.zeros(n_max + 1)
        bad = [n for n in range(1, n_max + 1) if out[n] < 0]
        if bad:
            raise RenewalError(f"negative first-return probability at n = {bad[0]}")
        return TauDist(out, errors)

    vals = np.asarray(vals, dtype=float)
    out = np.zeros(n_max + 1)
    rev = vals[::-1]
    for n in range(1, n_max + 1):
        # sum_{k=1}^{n-1} p_k u_{n-k}
        out[n] = vals[n] - np.dot(out[1:n], rev[n_max - n + 1 : n_max])
    kernel = np.convolve(np.abs(out), np.abs(out))[: n_max + 1]
    kernel[: n_max + 1] += 2 * np.abs(out)
    kernel[0] += 1.0
    errors = np.convolve(kernel, u.errors)[: n_max + 1]
    bad = np.nonzero(out < -(tol + 10 * errors))[0]
    if len(bad):
        n = int(bad[0])
        raise RenewalError(f"negative first-return probability {out[n]:.3g} at n = {n}")
    return TauDist(out, errors)


def estimate_p(U: float, bound: float = 0.0) -> tuple[float, tuple[float, float]]:
    """Return probability ``p = U / (1 + U)`` with the ``U +- bound`` bracket mapped through."""
    if U < 0:
        raise RenewalError("total occupation must be nonnegative")

    def f(x):
        return x / (1.0 + x)

    return f(U), (f(max(0.0, U - bound)), f(U + bound))


def with_total(p: TauDist, total: float, interval: tuple[float, float]) -> TauDist:
    return replace(p, total=total, interval=interval)


def selfconv_power(u: USeq | np.ndarray, k: int) -> np.ndarray:
    """``k``-fold convolution of ``(u_1, u_2, ...)`` restricted to indices ``<= N``.

    Index 0 of the result is 0 (the sequence starts at ``n = 1``).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    vals = u.values if isinstance(u, USeq) else np.asarray(u)
    base = vals.copy()
    base[0] = 0
    n_max = len(vals) - 1
    out = base.copy()
    for _ in range(k - 1):
        out = _truncated_conv(out, base, n_max)
    return out


def _truncated_conv(a: np.ndarray, b: np.ndarray, n_max: int) -> np.ndarray:
    if a.dtype == object or b.dtype == object:
        out = np.array([Fraction(0)] * (n_max + 1), dtype=object)
        for n in range(n_max + 1):
            out[n] = sum((a[i] * b[n - i] for i in range(n + 1)), Fraction(0))
        return out
    return np.convolve(a, b)[: n_max + 1]


def alternating_series_pn(u: USeq, n: int, max_terms: int | None = None,
                          total: float | None = None):
    """``sum_{k=1}^{min(n, K)} (-1)^(k+1) u_n^{*(k)}`` and whether the expansion applies.

    The expansion of ``u(s) / (1 + u(s))`` in powers of ``u(s)`` converges only
    when ``u(1) = sum_{m >= 1} u_m < 1``.  ``total`` is that sum (with tail);
    if omitted the partial sum up to the horizon is used.

    Returns ``(value, applicable, partial_sums)``.
    """
    if n > u.horizon:
        raise ValueError(f"n = {n} beyond the horizon {u.horizon}")
    terms = min(n, max_terms) if max_terms else n
    if total is None:
        total = float(sum(u.values[1:])) if u.exact else math.fsum(u.values[1:])
    applicable = total < 1.0
    truncated = u.values[: n + 1]
    base = truncated.copy()
    base[0] = 0
    power = base.copy()
    value = power[n]
    partial = [value]
    for k in range(2, terms + 1):
        power = _truncated_conv(power, base, n)
        value = value + (-1) ** (k + 1) * power[n]
        partial.append(value)
    return value, applicable, partial
