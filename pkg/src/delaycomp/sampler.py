"""Random waiting times: delay exponential by numerical inversion, exponential by inversion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dexp import DexpParams, is_distribution_valid, lambert_w

__all__ = [
    "U_MIN",
    "U_MAX",
    "MAX_TABLE_SIZE",
    "RngStream",
    "DexpQuantileTable",
    "sample_dexp",
    "sample_dexp_many",
    "sample_markov_holding",
    "sample_markov_holding_many",
    "markov_holding_from_uniform",
]

U_MIN = _kernels.U_MIN
U_MAX = _kernels.U_MAX

# Breakpoint tables beyond this length are refused (mu*tau below ~5e-6).
MAX_TABLE_SIZE = 5_000_000


@dataclass
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator keyed through
    :class:`numpy.random.SeedSequence` with ``spawn_key=(stream_id,)``, so
    distinct stream ids give independent streams. Instances are single-owner.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {v!r}")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def uniform(self) -> float:
        """A uniform on the open unit interval, clamped to ``[U_MIN, U_MAX]``."""
        return _kernels.open_uniform(self.generator)


@dataclass(frozen=True)
class DexpQuantileTable:
    """Survival values at integer multiples of ``tau`` down to ``u_min``.

    ``breakpoint_values[n]`` is ``dexp(-mu n tau; -mu tau)``. The last entry
    is the first one below ``u_min``, so every clamped uniform falls inside
    the table. Immutable and safe to share.
    """

    params: DexpParams
    breakpoint_values: np.ndarray
    u_min: float = U_MIN

    @classmethod
    def build(cls, params: DexpParams, u_min: float = U_MIN) -> "DexpQuantileTable":
        if not is_distribution_valid(params):
            raise ValueError(
                f"cannot sample: mu*tau = {params.mu_tau:.6g} exceeds 1/e"
            )
        if params.tau == 0.0:
            bp = np.ones(1)
        else:
            decay = -lambert_w(0, -min(params.mu_tau, math.exp(-1.0)))
            n = int(math.ceil((math.log(1.0 / u_min) + 5.0) / decay)) + 2
            while True:
                if n > MAX_TABLE_SIZE:
                    raise ValueError(
                        f"mu*tau = {params.mu_tau:.3g} needs more than {MAX_TABLE_SIZE} "
                        "breakpoints; use tau = 0 for an exponential waiting time"
                    )
                bp = _kernels.breakpoint_values(params.mu, params.tau, n)
                below = np.flatnonzero(bp < u_min)
                if below.size:
                    bp = bp[: below[0] + 1]
                    break
                n *= 2
        bp.flags.writeable = False
        return cls(params, bp, u_min)

    @property
    def n_max(self) -> int:
        return len(self.breakpoint_values) - 1

    def survival(self, t: float) -> float:
        """Survival function evaluated from the breakpoints.

        Stable for any ``t``: every term is a damped multiple of an earlier,
        positive breakpoint value.
        """
        mu, tau = self.params.mu, self.params.tau
        if t < 0.0:
            return 0.0
        if tau == 0.0:
            return math.exp(-mu * t)
        n = int(math.floor(t / tau))
        s = t - n * tau
        bp = self.breakpoint_values
        if n + 1 >= len(bp):
            bp = _kernels.breakpoint_values(mu, tau, n + 1)
        return float(_kernels.piece_value(mu, bp, n, s))

    def quantile(self, u: float) -> float:
        """Generalized inverse ``inf{t : survival(t) <= u}`` for ``u`` in (0, 1)."""
        if not 0.0 < u < 1.0:
            raise ValueError(f"u must lie in (0, 1), got {u!r}")
        u = min(max(u, self.u_min), U_MAX)
        p = self.params
        bp = self.breakpoint_values
        return float(_kernels.dexp_quantile(u, p.mu, p.tau, bp, len(bp)))


def sample_dexp(rng: RngStream, table: DexpQuantileTable) -> float:
    """One delay-exponential waiting time (always ``>= tau``)."""
    p = table.params
    bp = table.breakpoint_values
    return float(_kernels.draw_dexp(rng.generator, p.mu, p.tau, bp, len(bp)))


def sample_dexp_many(rng: RngStream, table: DexpQuantileTable, n: int) -> np.ndarray:
    """``n`` independent delay-exponential waiting times."""
    p = table.params
    return _kernels.draw_dexp_many(rng.generator, p.mu, p.tau, table.breakpoint_values, int(n))


def markov_holding_from_uniform(u: float, total_rate: float) -> float:
    """Exponential inversion ``-log(u)/rate``; ``inf`` when the rate is zero."""
    if total_rate < 0.0:
        raise ValueError(f"total_rate must be non-negative, got {total_rate!r}")
    if total_rate == 0.0:
        return math.inf
    return -math.log(u) / total_rate


def sample_markov_holding(rng: RngStream, total_rate: float) -> float:
    """Holding time of a Markovian channel with constant aggregate rate."""
    if total_rate < 0.0:
        raise ValueError(f"total_rate must be non-negative, got {total_rate!r}")
    if total_rate == 0.0:
        return math.inf
    return markov_holding_from_uniform(rng.uniform(), total_rate)


def sample_markov_holding_many(rng: RngStream, total_rate: float, n: int) -> np.ndarray:
    """``n`` independent holding times at a fixed aggregate rate."""
    if total_rate < 0.0:
        raise ValueError(f"total_rate must be non-negative, got {total_rate!r}")
    return _kernels.draw_exponential_many(rng.generator, float(total_rate), int(n))
