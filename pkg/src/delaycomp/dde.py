"""Deterministic delay master equations for a :class:`~delaycomp.model.ModelSpec`.

For a compartment ``i`` with constant Markovian per-capita removal ``w_i``
and a delay-exponential removal ``(mu_i, tau_i)`` the mean-field equation is

    rho_i' = q_i^+(t) - w_i rho_i(t) - mu_i exp(-w_i tau_i) rho_i(t - tau_i)

with ``rho_i = 0`` for ``t < 0``. The delayed outflux reappears as influx in
the delay process's target compartment. Integration is by the method of
steps with classical RK4 and cubic Hermite dense output.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import ModelError, ModelSpec, validate

__all__ = [
    "DdeSystem",
    "DelayTerm",
    "DdeSolution",
    "Equilibrium",
    "build_dde",
    "solve",
    "steady_states",
]


@dataclass(frozen=True)
class DelayTerm:
    """Outflux ``coefficient * rho[source](t - tau)`` routed to ``target`` (-1 = sink)."""

    source: int
    target: int
    tau: float
    coefficient: float
    mu: float
    omega: float


@dataclass(frozen=True)
class DdeSystem:
    names: tuple[str, ...]
    initial: np.ndarray
    m_src: np.ndarray
    m_tgt: np.ndarray
    m_kind: tuple[str, ...]
    m_coef: np.ndarray
    m_ops: tuple[tuple[int, ...], ...]
    delay_terms: tuple[DelayTerm, ...]

    @property
    def dimension(self) -> int:
        return len(self.names)

    @property
    def delays(self) -> tuple[float, ...]:
        return tuple(d.tau for d in self.delay_terms)

    def markov_fluxes(self, y: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.m_kind))
        for h, kind in enumerate(self.m_kind):
            ops = self.m_ops[h]
            c = self.m_coef[h]
            if kind == "constant_influx":
                out[h] = c
            elif kind == "per_capita":
                out[h] = c * y[ops[0]]
            elif kind == "mass_action":
                out[h] = c * y[ops[0]] * y[ops[1]]
            else:
                out[h] = c * sum(y[o] for o in ops)
        return out

    def rhs(self, y: np.ndarray, lagged: np.ndarray) -> np.ndarray:
        """Right-hand side given current state and one lagged value per delay term."""
        dy = np.zeros(self.dimension)
        flux = self.markov_fluxes(y)
        for h in range(len(flux)):
            s, t = self.m_src[h], self.m_tgt[h]
            if s >= 0:
                dy[s] -= flux[h]
            if t >= 0:
                dy[t] += flux[h]
        for k, term in enumerate(self.delay_terms):
            out = term.coefficient * lagged[k]
            dy[term.source] -= out
            if term.target >= 0:
                dy[term.target] += out
        return dy

    def jacobian(self, y: np.ndarray) -> np.ndarray:
        """Jacobian of :meth:`rhs` with every lagged argument set to ``y``."""
        n = self.dimension
        jac = np.zeros((n, n))
        for h, kind in enumerate(self.m_kind):
            grad = np.zeros(n)
            ops = self.m_ops[h]
            c = self.m_coef[h]
            if kind == "per_capita":
                grad[ops[0]] += c
            elif kind == "mass_action":
                grad[ops[0]] += c * y[ops[1]]
                grad[ops[1]] += c * y[ops[0]]
            elif kind == "population_birth":
                for o in ops:
                    grad[o] += c
            s, t = self.m_src[h], self.m_tgt[h]
            if s >= 0:
                jac[s] -= grad
            if t >= 0:
                jac[t] += grad
        for term in self.delay_terms:
            jac[term.source, term.source] -= term.coefficient
            if term.target >= 0:
                jac[term.target, term.source] += term.coefficient
        return jac


def build_dde(spec: ModelSpec) -> DdeSystem:
    """Assemble the mean-field delay system.

    Every compartment owning a delay process must lose particles only through
    ``per_capita`` laws of itself, so its Markovian removal rate ``w`` is a
    constant and the delayed coefficient is ``mu exp(-w tau)``.
    """
    diags = validate(spec)
    if diags:
        raise ModelError(diags)
    idx = {n: i for i, n in enumerate(spec.compartments)}
    terms = []
    for dp in spec.delays:
        omega = 0.0
        for p in spec.markov:
            if p.source != dp.source:
                continue
            if p.law.kind != "per_capita" or p.law.operands != (dp.source,):
                raise ModelError([
                    f"delay compartment {dp.source!r} has state-dependent Markovian removal "
                    f"({p.label}); only constant per-capita removal is supported"
                ])
            omega += p.law.coefficient
        mu, tau = dp.params.mu, dp.params.tau
        terms.append(
            DelayTerm(
                source=idx[dp.source],
                target=-1 if dp.target is None else idx[dp.target],
                tau=tau,
                coefficient=mu * math.exp(-omega * tau),
                mu=mu,
                omega=omega,
            )
        )

    def ref(name):
        return -1 if name is None else idx[name]

    return DdeSystem(
        names=spec.compartments,
        initial=np.array(spec.initial_counts, dtype=float),
        m_src=np.array([ref(p.source) for p in spec.markov], dtype=np.int64),
        m_tgt=np.array([ref(p.target) for p in spec.markov], dtype=np.int64),
        m_kind=tuple(p.law.kind for p in spec.markov),
        m_coef=np.array([p.law.coefficient for p in spec.markov], dtype=float),
        m_ops=tuple(tuple(idx[o] for o in p.law.operands) for p in spec.markov),
        delay_terms=tuple(terms),
    )


def _hermite(y0, y1, f0, f1, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    return (
        (2 * t3 - 3 * t2 + 1) * y0
        + (t3 - 2 * t2 + theta) * h * f0
        + (-2 * t3 + 3 * t2) * y1
        + (t3 - t2) * h * f1
    )


@dataclass(frozen=True)
class DdeSolution:
    """Mesh values plus per-step Hermite data for evaluation anywhere in ``[0, end]``.

    ``slope_start[n]`` is the right derivative at ``mesh[n]`` and
    ``slope_end[n]`` the left derivative at ``mesh[n + 1]``; they differ only
    where the delayed history jumps.
    """

    names: tuple[str, ...]
    step: float
    mesh: np.ndarray
    values: np.ndarray
    slope_start: np.ndarray = field(repr=False)
    slope_end: np.ndarray = field(repr=False)

    def _piece(self, n: int, theta: float) -> np.ndarray:
        return _hermite(
            self.values[n], self.values[n + 1],
            self.slope_start[n], self.slope_end[n], self.step, theta,
        )

    def __call__(self, t: float) -> np.ndarray:
        """State at time ``t`` (zero before 0, the initial state at 0)."""
        if t < 0.0:
            return np.zeros(self.values.shape[1])
        n_pieces = len(self.mesh) - 1
        if t > self.mesh[-1] * (1 + 1e-12):
            raise ValueError(f"t = {t} lies beyond the solved range {self.mesh[-1]}")
        near = min(int(round(t / self.step)), n_pieces)
        if abs(t - self.mesh[near]) <= 1e-12 * max(1.0, t):
            return self.values[near].copy()
        n = min(int(math.floor(t / self.step)), n_pieces - 1)
        theta = (t - self.mesh[n]) / self.step
        return self._piece(n, min(theta, 1.0))

    def sample(self, times) -> np.ndarray:
        """States at each of ``times``, shape ``(len(times), dimension)``."""
        return np.array([self(float(t)) for t in times])

    def series(self, name: str, times) -> np.ndarray:
        return self.sample(times)[:, self.names.index(name)]


# The aligned step may be at most this many times finer than requested.
_MAX_REFINE = 64


def _is_multiple(d: float, h: float) -> bool:
    m = d / h
    return abs(m - round(m)) <= 1e-9 * max(1.0, m)


def _aligned_step(delays: list[float], step: float) -> tuple[float, list[int | None]]:
    """Largest step ``<= step`` dividing every positive delay, if one exists.

    Then every ``t = tau_i``, and every sum of delays where the derivative
    jumps propagate, is a mesh point. Otherwise ``step`` is aligned to the
    shortest delay only and the other lags are interpolated.
    """
    positive = sorted({d for d in delays if d > 0.0})
    if positive:
        tau = positive[0]
        m0 = math.ceil(tau / step - 1e-9)
        step = tau / m0
        for m in range(m0, _MAX_REFINE * m0 + 1):
            h = tau / m
            if all(_is_multiple(d, h) for d in positive[1:]):
                step = h
                break
    lags = [int(round(d / step)) if _is_multiple(d, step) else None for d in delays]
    if any(m is None for m, d in zip(lags, delays) if d > 0.0):
        warnings.warn(
            f"delays {positive} have no common step within {_MAX_REFINE}x of the "
            "requested one; jumps at off-mesh delays reduce accuracy to first order there",
            RuntimeWarning,
            stacklevel=3,
        )
    return step, lags


def solve(sys: DdeSystem, horizon: float, step: float) -> DdeSolution:
    """Integrate on ``[0, horizon]`` by the method of steps.

    ``step`` must not exceed a quarter of the smallest positive delay so that
    every lagged stage value falls in an already completed step. The step is
    shrunk so that it divides the delays (all of them when a common divisor
    is within reach), putting the derivative jumps on mesh points.
    """
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon!r}")
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step!r}")
    positive = [d for d in sys.delays if d > 0.0]
    if positive and step > min(positive) / 4.0 * (1 + 1e-12):
        raise ValueError(
            f"step {step} exceeds a quarter of the smallest delay {min(positive)}"
        )
    h, lags = _aligned_step(list(sys.delays), step)
    n_steps = int(math.ceil(horizon / h - 1e-9))
    dim = sys.dimension
    terms = sys.delay_terms

    Y = np.zeros((n_steps + 1, dim))
    F0 = np.zeros((n_steps, dim))
    F1 = np.zeros((n_steps, dim))
    Y[0] = sys.initial

    def lagged(n: int, c: float, y_now: np.ndarray) -> np.ndarray:
        """Lagged values for stage time ``(n + c) h`` while in step ``n``."""
        out = np.empty(len(terms))
        for k, term in enumerate(terms):
            if term.tau == 0.0:
                out[k] = y_now[term.source]
                continue
            m = lags[k]
            if m is not None:
                j, theta = n - m, c
            else:
                tl = (n + c) * h - term.tau
                if tl < 0.0:
                    out[k] = 0.0
                    continue
                j = min(int(math.floor(tl / h)), n - 1)
                theta = tl / h - j
            if j < 0:
                out[k] = 0.0
            elif theta == 0.0:
                out[k] = Y[j, term.source]
            else:
                out[k] = _hermite(
                    Y[j, term.source], Y[j + 1, term.source],
                    F0[j, term.source], F1[j, term.source], h, theta,
                )
        return out

    for n in range(n_steps):
        y = Y[n]
        k1 = sys.rhs(y, lagged(n, 0.0, y))
        y2 = y + 0.5 * h * k1
        k2 = sys.rhs(y2, lagged(n, 0.5, y2))
        y3 = y + 0.5 * h * k2
        k3 = sys.rhs(y3, lagged(n, 0.5, y3))
        y4 = y + h * k3
        k4 = sys.rhs(y4, lagged(n, 1.0, y4))
        y_next = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        Y[n + 1] = y_next
        F0[n] = k1
        F1[n] = sys.rhs(y_next, lagged(n, 1.0, y_next))

    mesh = np.arange(n_steps + 1) * h
    return DdeSolution(sys.names, h, mesh, Y, F0, F1)


@dataclass(frozen=True)
class Equilibrium:
    start: np.ndarray
    state: np.ndarray
    residual: float
    converged: bool
    iterations: int
    message: str = ""


def steady_states(
    sys: DdeSystem,
    starts,
    constraints=(),
    tol: float = 1e-10,
    max_iter: int = 100,
) -> list[Equilibrium]:
    """Equilibria by damped Newton from each starting point.

    Lagged arguments are set equal to current ones. ``constraints`` is a
    sequence of ``(weights, value)`` pairs appended as linear equations
    ``weights . x = value``; use them to pin conserved totals when the
    equilibria form a continuum (e.g. SIS with equal birth and death rates).
    The step is the least-squares Newton step, halved until the residual norm
    decreases.
    """
    cons = [(np.asarray(w, dtype=float), float(v)) for w, v in constraints]

    def residual_vec(x):
        f = sys.rhs(x, np.array([x[t.source] for t in sys.delay_terms]))
        extra = [w @ x - v for w, v in cons]
        return np.concatenate([f, extra]) if extra else f

    def jac(x):
        j = sys.jacobian(x)
        return np.vstack([j] + [w[None, :] for w, _ in cons]) if cons else j

    results = []
    for x0 in np.atleast_2d(np.asarray(starts, dtype=float)):
        x = x0.copy()
        r = residual_vec(x)
        norm = float(np.max(np.abs(r)))
        it = 0
        msg = ""
        while norm > tol and it < max_iter:
            it += 1
            dx = np.linalg.lstsq(jac(x), -r, rcond=None)[0]
            lam = 1.0
            while lam > 1e-10:
                x_try = x + lam * dx
                r_try = residual_vec(x_try)
                n_try = float(np.max(np.abs(r_try)))
                if n_try < norm:
                    break
                lam *= 0.5
            else:
                msg = "line search failed to reduce the residual"
                break
            x, r, norm = x_try, r_try, n_try
        converged = norm <= tol
        if not converged and not msg:
            msg = f"no convergence after {it} iterations (residual {norm:.3g})"
        results.append(Equilibrium(x0, x, norm, converged, it, msg))
    return results
