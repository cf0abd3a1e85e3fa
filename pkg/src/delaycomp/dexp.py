"""Delay exponential function and the delay exponential distribution.

The delay exponential ``dexp(-mu t; -mu tau)`` is the finite power series

    sum_{n=0}^{floor(t/tau)} (-mu)^n (t - n tau)^n / n!

It equals 1 on ``[0, tau]``, is the fundamental solution of
``y'(t) = -mu y(t - tau)`` and, when ``0 <= mu tau <= 1/e``, is a survival
function. Its density is ``mu dexp(-mu (t - tau); -mu tau)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "INV_E",
    "PRECISION_HORIZON",
    "DexpAccuracyWarning",
    "DexpParams",
    "CharacteristicRoots",
    "dexp_eval",
    "dexp_density",
    "is_distribution_valid",
    "moments",
    "mgf",
    "laplace_survival",
    "lambert_w",
    "characteristic_roots",
]

INV_E = math.exp(-1.0)

# Largest t/tau for which the direct series is trusted to ~1e-10 absolute.
PRECISION_HORIZON = 60.0

# Slack for the closed validity boundary mu*tau == 1/e under rounding.
_BOUNDARY_RTOL = 8 * 2.0**-52


class DexpAccuracyWarning(RuntimeWarning):
    """The series was evaluated past the precision horizon."""


@dataclass(frozen=True)
class DexpParams:
    """Rate ``mu`` (1/time, > 0) and delay ``tau`` (time, >= 0)."""

    mu: float
    tau: float

    def __post_init__(self):
        mu, tau = float(self.mu), float(self.tau)
        if not (math.isfinite(mu) and mu > 0.0):
            raise ValueError(f"mu must be a positive finite rate, got {self.mu!r}")
        if not (math.isfinite(tau) and tau >= 0.0):
            raise ValueError(f"tau must be a non-negative finite delay, got {self.tau!r}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "tau", tau)

    @property
    def mu_tau(self) -> float:
        return self.mu * self.tau

    @property
    def distribution_valid(self) -> bool:
        return is_distribution_valid(self)


@dataclass(frozen=True)
class CharacteristicRoots:
    """Real roots of ``lam + mu exp(-lam tau) = 0``; ``lambda0 > lambda_neg1``."""

    lambda0: float
    lambda_neg1: float


def is_distribution_valid(p: DexpParams) -> bool:
    """True iff ``0 <= mu tau <= 1/e`` (closed at the boundary)."""
    return 0.0 <= p.mu_tau <= INV_E * (1.0 + _BOUNDARY_RTOL)


def _require_valid(p: DexpParams, what: str) -> None:
    if not is_distribution_valid(p):
        raise ValueError(
            f"{what} requires mu*tau <= 1/e; got mu*tau = {p.mu_tau:.6g}"
        )


# Above this many breakpoints the evaluation switches to the truncated series.
_BREAKPOINT_LIMIT = 100_000


def _series_scalar(t: float, mu: float, tau: float) -> float:
    if t < 0.0:
        return 0.0
    if tau == 0.0:
        return math.exp(-mu * t)
    n_max = math.floor(t / tau)
    terms = [1.0]
    biggest = 1.0
    for n in range(1, n_max + 1):
        x = mu * max(t - n * tau, 0.0)
        if n <= 30:
            term = 1.0
            for j in range(1, n + 1):
                term *= x / j
        else:
            term = math.exp(n * math.log(x) - math.lgamma(n + 1)) if x > 0.0 else 0.0
        terms.append(-term if n % 2 else term)
        biggest = max(biggest, term)
        # Past n > mu*t the magnitudes fall faster than geometrically.
        if n > mu * t and term < 1e-20:
            break
    if t / tau > PRECISION_HORIZON:
        bound = len(terms) * np.finfo(float).eps * biggest
        if bound > 1e-10:
            warnings.warn(
                f"dexp at t/tau = {t / tau:.1f} beyond the precision horizon "
                f"{PRECISION_HORIZON:g}; rounding error may reach {bound:.1e}",
                DexpAccuracyWarning,
                stacklevel=3,
            )
    return math.fsum(terms)


def _breakpoint_array(ts: np.ndarray, mu: float, tau: float) -> np.ndarray:
    from ._kernels import breakpoint_values, piece_value

    out = np.zeros_like(ts)
    pos = ts >= 0.0
    if not pos.any():
        return out
    n = np.floor(ts[pos] / tau).astype(np.int64)
    bp = breakpoint_values(mu, tau, int(n.max()) + 1, mu * tau > INV_E)
    vals = [piece_value(mu, bp, int(k), float(t - k * tau)) for k, t in zip(n, ts[pos])]
    out[pos] = vals
    return out


def dexp_eval(t, p: DexpParams, method: str = "auto"):
    """Evaluate ``dexp(-mu t; -mu tau)``.

    Parameters
    ----------
    t : float or array_like
        Time(s). Negative times give 0.
    p : DexpParams
        Any rate/delay; validity as a distribution is not required.
    method : {"auto", "breakpoint", "series"}
        ``"series"`` sums the defining power series exactly rounded with
        :func:`math.fsum`. Its terms grow like ``(mu t)^n / n!`` before
        cancelling, so rounding inside the terms limits accuracy; past
        ``t/tau = PRECISION_HORIZON`` a :class:`DexpAccuracyWarning` is raised
        when the a-posteriori bound exceeds 1e-10. ``"breakpoint"`` re-expands
        the same polynomial around ``floor(t/tau) tau`` using the values at
        earlier multiples of ``tau``; all terms are then factorially damped.
        ``"auto"`` uses breakpoints unless more than 100000 would be needed.

    Returns
    -------
    float or ndarray
    """
    if method not in ("auto", "breakpoint", "series"):
        raise ValueError(f"unknown method {method!r}")
    scalar = np.ndim(t) == 0
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    if p.tau == 0.0:
        out = np.where(arr >= 0.0, np.exp(-p.mu * np.maximum(arr, 0.0)), 0.0)
    elif method == "breakpoint" or (
        method == "auto" and np.max(arr, initial=0.0) / p.tau <= _BREAKPOINT_LIMIT
    ):
        out = _breakpoint_array(arr, p.mu, p.tau)
    else:
        out = np.array([_series_scalar(float(ti), p.mu, p.tau) for ti in arr.ravel()]).reshape(arr.shape)
    return float(out[0]) if scalar else out


def dexp_density(t, p: DexpParams):
    """Waiting-time density ``mu dexp(-mu (t - tau); -mu tau)``."""
    _require_valid(p, "dexp_density")
    shifted = np.asarray(t, dtype=float) - p.tau
    return p.mu * dexp_eval(shifted if np.ndim(t) else float(shifted), p)


def moments(p: DexpParams) -> tuple[float, float]:
    """Mean ``1/mu`` and variance ``(1 - 2 mu tau)/mu**2``."""
    _require_valid(p, "moments")
    return 1.0 / p.mu, (1.0 - 2.0 * p.mu_tau) / p.mu**2


def mgf(s: float, p: DexpParams) -> float:
    """Moment generating function ``1 / (1 - s exp(-s tau)/mu)``.

    Defined for ``s`` below the decay rate of the survival function, i.e.
    ``s < -lambda0`` (``s < mu`` when ``tau == 0``).
    """
    _require_valid(p, "mgf")
    s = float(s)
    if p.tau == 0.0:
        s_max = p.mu
    else:
        s_max = -lambert_w(0, -min(p.mu_tau, INV_E)) / p.tau
    if not s < s_max:
        raise ValueError(f"mgf diverges for s >= {s_max:.6g}; got s = {s!r}")
    denom = 1.0 - s * math.exp(-s * p.tau) / p.mu
    if denom <= 0.0:
        raise ValueError(f"mgf outside its convergence region at s = {s!r}")
    return 1.0 / denom


def laplace_survival(s: float, p: DexpParams) -> float:
    """Laplace transform of the survival function, ``1/(s + mu exp(-s tau))``."""
    if not s > 0.0:
        raise ValueError(f"laplace_survival requires s > 0, got {s!r}")
    return 1.0 / (s + p.mu * math.exp(-s * p.tau))


def _halley_w(x: float, w: float) -> float:
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        if f == 0.0:
            break
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 4e-16 * max(1.0, abs(w)):
            break
    return w


def lambert_w(branch: int, x: float) -> float:
    """Real branches 0 and -1 of the Lambert W function.

    Solves ``w exp(w) = x`` by Halley iteration. Branch 0 is defined for
    ``x >= -1/e`` with ``w >= -1``; branch -1 for ``-1/e <= x < 0`` with
    ``w <= -1``.
    """
    x = float(x)
    if branch not in (0, -1):
        raise ValueError(f"only branches 0 and -1 are supported, got {branch!r}")
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x!r}")
    if x < -INV_E:
        if x < -INV_E * (1.0 + _BOUNDARY_RTOL):
            raise ValueError(f"W_{branch}({x!r}) is not real (x < -1/e)")
        x = -INV_E
    if branch == -1 and x >= 0.0:
        raise ValueError(f"W_-1 requires -1/e <= x < 0, got {x!r}")
    if x == -INV_E:
        return -1.0
    if branch == 0 and x == 0.0:
        return 0.0

    # p -> 0 at the branch point; leading terms of the branch-point series.
    p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
    if branch == 0:
        if x < -0.25:
            w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
        elif x < 3.0:
            w = math.log1p(x) * (1.0 - math.log1p(math.log1p(x)) / (2.0 + math.log1p(x)))
        else:
            lx = math.log(x)
            w = lx - math.log(lx)
    else:
        if x < -0.25:
            w = -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p**3
        else:
            lx = math.log(-x)
            w = lx - math.log(-lx)
    w = _halley_w(x, w)
    # Keep the iterate on the requested side of the branch point.
    if branch == 0 and w < -1.0:
        w = -1.0
    elif branch == -1 and w > -1.0:
        w = -1.0
    return w


def _polish_root(lam: float, mu: float, tau: float) -> float:
    best, best_res = lam, abs(lam + mu * math.exp(-lam * tau))
    for _ in range(4):
        g = lam + mu * math.exp(-lam * tau)
        dg = 1.0 - mu * tau * math.exp(-lam * tau)
        if dg == 0.0:
            break
        lam -= g / dg
        res = abs(lam + mu * math.exp(-lam * tau))
        if res < best_res:
            best, best_res = lam, res
        else:
            break
    return best


def characteristic_roots(p: DexpParams) -> CharacteristicRoots:
    """The two negative real roots ``W_0(-mu tau)/tau`` and ``W_-1(-mu tau)/tau``.

    Raises ``ValueError`` when ``tau == 0`` or ``mu tau >= 1/e`` (the roots
    coalesce at the boundary and turn complex beyond it).
    """
    if p.tau == 0.0:
        raise ValueError("characteristic roots need tau > 0")
    x = p.mu_tau
    if not x < INV_E:
        raise ValueError(f"characteristic roots need mu*tau < 1/e; got {x:.6g}")
    lam0 = _polish_root(lambert_w(0, -x) / p.tau, p.mu, p.tau)
    lam1 = _polish_root(lambert_w(-1, -x) / p.tau, p.mu, p.tau)
    return CharacteristicRoots(lambda0=lam0, lambda_neg1=lam1)
