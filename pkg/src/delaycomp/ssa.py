"""Exact stochastic simulation of delay compartment models.

Each particle resident in a delay compartment carries its own residual
waiting time drawn from the delay exponential distribution; Markovian
processes are handled Gillespie-style with one aggregate holding time per
source compartment. See :func:`delaycomp._kernels.run_path_kernel` for the
event loop itself.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .model import RATE_KINDS, ModelError, ModelSpec, validate
from .sampler import DexpQuantileTable, RngStream

__all__ = [
    "SimulationError",
    "CompiledModel",
    "Event",
    "Trajectory",
    "EnsembleSummary",
    "compile_model",
    "run_path",
    "run_ensemble",
]

_STATUS_MESSAGES = {
    _kernels.STATUS_NEGATIVE_COUNT: "a compartment count went negative",
    _kernels.STATUS_CLOCK_MISMATCH: "delay clock count differs from compartment count",
}


class SimulationError(RuntimeError):
    """A sample path broke an internal invariant and was aborted."""

    def __init__(self, message: str, replica: int | None = None, time: float | None = None):
        self.replica = replica
        self.time = time
        where = f"replica {replica}: " if replica is not None else ""
        when = f" at t = {time:.6g}" if time is not None else ""
        super().__init__(f"{where}{message}{when}")


@dataclass(frozen=True)
class CompiledModel:
    """Array form of a validated :class:`ModelSpec` consumed by the kernel."""

    spec: ModelSpec
    counts0: np.ndarray
    m_src: np.ndarray
    m_tgt: np.ndarray
    m_kind: np.ndarray
    m_coef: np.ndarray
    m_op1: np.ndarray
    m_op2: np.ndarray
    m_mask: np.ndarray
    delay_of: np.ndarray
    d_tgt: np.ndarray
    d_mu: np.ndarray
    d_tau: np.ndarray
    d_bp: np.ndarray
    d_nbp: np.ndarray
    grid: np.ndarray

    def kernel_args(self) -> tuple:
        return (
            self.counts0, self.m_src, self.m_tgt, self.m_kind, self.m_coef,
            self.m_op1, self.m_op2, self.m_mask, self.delay_of, self.d_tgt,
            self.d_mu, self.d_tau, self.d_bp, self.d_nbp, self.grid,
            self.spec.horizon,
        )


def compile_model(spec: ModelSpec) -> CompiledModel:
    diags = validate(spec)
    if diags:
        raise ModelError(diags)
    idx = {n: i for i, n in enumerate(spec.compartments)}
    n_comp = len(idx)
    n_proc = len(spec.markov)

    def ref(name):
        return -1 if name is None else idx[name]

    m_src = np.array([ref(p.source) for p in spec.markov], dtype=np.int64)
    m_tgt = np.array([ref(p.target) for p in spec.markov], dtype=np.int64)
    m_kind = np.array([RATE_KINDS.index(p.law.kind) for p in spec.markov], dtype=np.int64)
    m_coef = np.array([p.law.coefficient for p in spec.markov], dtype=float)
    m_op1 = np.zeros(n_proc, dtype=np.int64)
    m_op2 = np.zeros(n_proc, dtype=np.int64)
    m_mask = np.zeros((n_proc, n_comp), dtype=np.bool_)
    for h, p in enumerate(spec.markov):
        ops = [idx[o] for o in p.law.operands]
        if ops:
            m_op1[h] = ops[0]
            m_op2[h] = ops[-1]
        m_mask[h, ops] = True

    delay_of = np.full(n_comp, -1, dtype=np.int64)
    tables = []
    for d, dp in enumerate(spec.delays):
        delay_of[idx[dp.source]] = d
        tables.append(DexpQuantileTable.build(dp.params))
    n_delay = len(spec.delays)
    width = max([len(t.breakpoint_values) for t in tables] + [1])
    d_bp = np.zeros((max(n_delay, 1), width))
    d_nbp = np.ones(max(n_delay, 1), dtype=np.int64)
    for d, t in enumerate(tables):
        d_bp[d, : len(t.breakpoint_values)] = t.breakpoint_values
        d_nbp[d] = len(t.breakpoint_values)

    return CompiledModel(
        spec=spec,
        counts0=np.array(spec.initial_counts, dtype=np.int64),
        m_src=m_src,
        m_tgt=m_tgt,
        m_kind=m_kind,
        m_coef=m_coef,
        m_op1=m_op1,
        m_op2=m_op2,
        m_mask=m_mask,
        delay_of=delay_of,
        d_tgt=np.array([ref(dp.target) for dp in spec.delays], dtype=np.int64),
        d_mu=np.array([dp.params.mu for dp in spec.delays], dtype=float),
        d_tau=np.array([dp.params.tau for dp in spec.delays], dtype=float),
        d_bp=d_bp,
        d_nbp=d_nbp,
        grid=np.array(spec.record_grid, dtype=float),
    )


@dataclass(frozen=True)
class Event:
    time: float
    process: str
    source: str | None
    target: str | None


@dataclass(frozen=True)
class Trajectory:
    """Sample-and-hold counts of one path on the recording grid.

    ``counts_at_grid[j]`` is the state immediately after the last event at or
    before ``grid[j]``. ``first_zero[i]`` is the first time compartment ``i``
    was empty (``inf`` if never, ``0`` if it started empty).
    """

    names: tuple[str, ...]
    grid: np.ndarray
    counts_at_grid: np.ndarray
    first_zero: np.ndarray
    n_events: int
    events: tuple[Event, ...] | None = None

    def series(self, name: str) -> np.ndarray:
        return self.counts_at_grid[:, self.names.index(name)]


def _process_labels(spec: ModelSpec) -> list[str]:
    return [p.label for p in spec.markov] + [d.label for d in spec.delays]


def _run(model: CompiledModel, rng: RngStream, record_events: bool, replica: int | None) -> Trajectory:
    (status, t_fail, rec, first_zero, ev_t, ev_proc, ev_src, ev_tgt, n_events) = (
        _kernels.run_path_kernel(*model.kernel_args(), rng.generator, record_events)
    )
    if status != _kernels.STATUS_OK:
        raise SimulationError(_STATUS_MESSAGES.get(status, f"status {status}"), replica, t_fail)
    names = model.spec.compartments
    events = None
    if record_events:
        labels = _process_labels(model.spec)

        def name(i):
            return None if i < 0 else names[i]

        events = tuple(
            Event(float(ev_t[k]), labels[ev_proc[k]], name(ev_src[k]), name(ev_tgt[k]))
            for k in range(n_events)
        )
    return Trajectory(names, model.grid, rec, first_zero, int(n_events), events)


def run_path(
    spec: ModelSpec | CompiledModel,
    rng: RngStream,
    record_events: bool = False,
) -> Trajectory:
    """Simulate one exact sample path up to ``spec.horizon``."""
    model = spec if isinstance(spec, CompiledModel) else compile_model(spec)
    return _run(model, rng, record_events, None)


@dataclass(frozen=True)
class EnsembleSummary:
    """Per-grid-point statistics over replica paths (shape ``(grid, compartments)``)."""

    names: tuple[str, ...]
    grid: np.ndarray
    n_paths: int
    mean: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    extinct: np.ndarray
    paths: np.ndarray | None = None

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def extinction_fraction(self, name: str) -> float:
        """Fraction of paths in which compartment ``name`` emptied before the horizon."""
        return float(self.extinct[self.names.index(name)])

    def column(self, name: str, stat: str = "mean") -> np.ndarray:
        return getattr(self, stat)[:, self.names.index(name)]


def default_parallelism() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_ensemble(
    spec: ModelSpec | CompiledModel,
    n_paths: int,
    seed: int,
    parallel: int | None = None,
    keep_paths: bool = False,
) -> EnsembleSummary:
    """Run ``n_paths`` replicas; replica ``r`` uses stream ``(seed, r)``.

    Paths run on a thread pool (the kernel releases the GIL). Results are
    stacked in replica order before reduction, so the summary does not
    depend on ``parallel``.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    model = spec if isinstance(spec, CompiledModel) else compile_model(spec)
    workers = default_parallelism() if parallel is None else max(1, int(parallel))

    def one(r: int) -> Trajectory:
        return _run(model, RngStream(seed, r), False, r)

    if workers == 1:
        trajs: Sequence[Trajectory] = [one(r) for r in range(n_paths)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(one, range(n_paths)))

    stack = np.stack([t.counts_at_grid for t in trajs]).astype(float)
    mean = stack.mean(axis=0)
    variance = stack.var(axis=0, ddof=1) if n_paths > 1 else np.zeros_like(mean)
    stderr = np.sqrt(variance / n_paths)
    horizon = model.spec.horizon
    extinct = np.mean([t.first_zero <= horizon for t in trajs], axis=0)
    return EnsembleSummary(
        names=model.spec.compartments,
        grid=model.grid,
        n_paths=n_paths,
        mean=mean,
        variance=variance,
        stderr=stderr,
        extinct=extinct,
        paths=stack.astype(np.int64) if keep_paths else None,
    )
