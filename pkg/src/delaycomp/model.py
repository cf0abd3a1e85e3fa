"""Declarative compartment models with Markovian and delayed removal.

A :class:`ModelSpec` lists named compartments, Markovian processes (each with
a rate law drawn from a closed vocabulary), at most one delay-exponential
removal per compartment, initial counts, a horizon and a recording grid.
Compartments are referenced by name; ``None`` as a source means the process
is fed from outside the system and ``None`` as a target means a sink.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .dexp import DexpParams, is_distribution_valid

__all__ = [
    "RATE_KINDS",
    "DEFAULT_GRID_POINTS",
    "ModelError",
    "CompartmentId",
    "RateLaw",
    "MarkovianProcess",
    "DelayProcess",
    "ModelSpec",
    "validate",
    "preset_pk",
    "preset_sis",
    "PRESETS",
    "spec_to_dict",
    "spec_from_dict",
    "dumps",
    "loads",
]

RATE_KINDS = ("constant_influx", "per_capita", "mass_action", "population_birth")
DEFAULT_GRID_POINTS = 200


class ModelError(ValueError):
    """Raised for model specifications that fail validation."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class CompartmentId:
    index: int
    name: str


@dataclass(frozen=True)
class RateLaw:
    """Rate of a Markovian process as a function of current counts.

    ``constant_influx``: ``c``; ``per_capita``: ``c X_a``;
    ``mass_action``: ``c X_a X_b``; ``population_birth``: ``c sum(X_j)``
    over the operand compartments.
    """

    kind: str
    coefficient: float
    operands: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coefficient", float(self.coefficient))
        object.__setattr__(self, "operands", tuple(self.operands))


@dataclass(frozen=True)
class MarkovianProcess:
    source: str | None
    target: str | None
    law: RateLaw

    @property
    def label(self) -> str:
        return f"{self.source or 'external'}->{self.target or 'sink'} ({self.law.kind})"


@dataclass(frozen=True)
class DelayProcess:
    source: str
    target: str | None
    params: DexpParams

    @property
    def label(self) -> str:
        return f"{self.source}->{self.target or 'sink'} (delay)"


@dataclass(frozen=True)
class ModelSpec:
    compartments: tuple[str, ...]
    markov: tuple[MarkovianProcess, ...]
    delays: tuple[DelayProcess, ...]
    initial_counts: tuple[int, ...]
    horizon: float
    record_grid: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "compartments", tuple(self.compartments))
        object.__setattr__(self, "markov", tuple(self.markov))
        object.__setattr__(self, "delays", tuple(self.delays))
        object.__setattr__(self, "initial_counts", tuple(self.initial_counts))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "record_grid", tuple(float(t) for t in self.record_grid))

    @property
    def ids(self) -> tuple[CompartmentId, ...]:
        return tuple(CompartmentId(i, n) for i, n in enumerate(self.compartments))

    def index(self, name: str) -> int:
        try:
            return self.compartments.index(name)
        except ValueError:
            raise KeyError(f"unknown compartment {name!r}") from None

    def delay_for(self, name: str) -> DelayProcess | None:
        for dp in self.delays:
            if dp.source == name:
                return dp
        return None


def even_grid(horizon: float, points: int = DEFAULT_GRID_POINTS) -> tuple[float, ...]:
    """``points`` evenly spaced times on ``[0, horizon]``."""
    return tuple(float(t) for t in np.linspace(0.0, horizon, int(points)))


_OPERAND_COUNT = {"constant_influx": (0, 0), "per_capita": (1, 1), "mass_action": (2, 2)}


def validate(spec: ModelSpec) -> list[str]:
    """Check every structural rule; returns one diagnostic per violation."""
    diags: list[str] = []
    names = spec.compartments
    known = set(names)
    if not names:
        diags.append("model declares no compartments")
    if len(known) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        diags.append(f"duplicate compartment names: {', '.join(dupes)}")
    for n in names:
        if not isinstance(n, str) or not n:
            diags.append(f"compartment names must be non-empty strings, got {n!r}")

    for proc in spec.markov:
        where = f"markov {proc.label}"
        law = proc.law
        if proc.source is not None and proc.source not in known:
            diags.append(f"{where}: unknown source {proc.source!r}")
        if proc.target is not None and proc.target not in known:
            diags.append(f"{where}: unknown target {proc.target!r}")
        if law.kind not in RATE_KINDS:
            diags.append(f"{where}: unknown rate kind {law.kind!r}")
            continue
        if not (math.isfinite(law.coefficient) and law.coefficient >= 0.0):
            diags.append(f"{where}: coefficient must be finite and >= 0, got {law.coefficient!r}")
        lo, hi = _OPERAND_COUNT.get(law.kind, (1, len(names) or 1))
        if not lo <= len(law.operands) <= hi:
            diags.append(f"{where}: {law.kind} takes {lo}..{hi} operands, got {len(law.operands)}")
        for op in law.operands:
            if op not in known:
                diags.append(f"{where}: unknown operand {op!r}")
        if law.kind == "population_birth" and len(set(law.operands)) != len(law.operands):
            diags.append(f"{where}: repeated operand in population_birth")
        external_kind = law.kind in ("constant_influx", "population_birth")
        if proc.source is None and not external_kind:
            diags.append(f"{where}: external source requires constant_influx or population_birth")
        if proc.source is not None and external_kind:
            diags.append(f"{where}: {law.kind} must draw from an external source")
        if (
            proc.source is not None
            and not external_kind
            and proc.source not in law.operands
        ):
            diags.append(f"{where}: rate must be proportional to its source compartment")

    seen: set[str] = set()
    for dp in spec.delays:
        where = f"delay {dp.label}"
        if dp.source not in known:
            diags.append(f"{where}: unknown source {dp.source!r}")
        if dp.target is not None and dp.target not in known:
            diags.append(f"{where}: unknown target {dp.target!r}")
        if dp.source in seen:
            diags.append(f"{where}: compartment {dp.source!r} has more than one delay process")
        seen.add(dp.source)
        if not is_distribution_valid(dp.params):
            diags.append(
                f"{where}: mu*tau = {dp.params.mu_tau:.6g} exceeds 1/e, "
                "not a valid waiting-time distribution"
            )

    if len(spec.initial_counts) != len(names):
        diags.append(
            f"initial counts: expected {len(names)} entries, got {len(spec.initial_counts)}"
        )
    for name, c in zip(names, spec.initial_counts):
        if isinstance(c, bool) or not isinstance(c, (int, np.integer)) or c < 0:
            diags.append(f"initial count for {name!r} must be a non-negative integer, got {c!r}")

    if not (math.isfinite(spec.horizon) and spec.horizon > 0.0):
        diags.append(f"horizon must be positive and finite, got {spec.horizon!r}")
    grid = spec.record_grid
    if not grid:
        diags.append("record grid is empty")
    elif any(b <= a for a, b in zip(grid, grid[1:])):
        diags.append("record grid must be strictly increasing")
    elif grid[0] < 0.0 or grid[-1] > spec.horizon:
        diags.append("record grid must lie within [0, horizon]")
    return diags


def _check(spec: ModelSpec) -> ModelSpec:
    diags = validate(spec)
    if diags:
        raise ModelError(diags)
    return spec


def preset_pk(
    k: float = 1.0,
    mu: float = 1.0,
    tau: float = 0.2,
    x0: int = 100,
    horizon: float = 10.0,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> ModelSpec:
    """Drug transport ``x -> A`` at rate ``k`` with delayed clearance from ``A``.

    Deterministically ``x' = -k x`` and ``A' = k x - mu A(t - tau)`` where
    ``mu = C/V``. The dose ``x0`` is injected into ``x`` at ``t = 0``.
    """
    if k <= 0 or mu <= 0 or tau < 0 or x0 < 0:
        raise ModelError([f"pk preset needs k, mu > 0, tau >= 0, x0 >= 0 (got k={k}, mu={mu}, tau={tau}, x0={x0})"])
    spec = ModelSpec(
        compartments=("x", "A"),
        markov=(MarkovianProcess("x", "A", RateLaw("per_capita", k, ("x",))),),
        delays=(DelayProcess("A", None, DexpParams(mu, tau)),),
        initial_counts=(int(x0), 0),
        horizon=horizon,
        record_grid=even_grid(horizon, grid_points),
    )
    return _check(spec)


def preset_sis(
    b: float = 0.1,
    d: float = 0.1,
    lambda_: float | None = None,
    gamma: float = 1.0,
    tau: float = 0.2,
    s0: int = 95,
    i0: int = 5,
    horizon: float = 30.0,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> ModelSpec:
    """SIS with births, deaths and delayed return from ``I`` to ``S``.

    ``lambda_`` defaults to ``2 / (s0 + i0)``. Recovery is a delay process
    ``I -> S`` with rate ``gamma`` and delay ``tau``.
    """
    if lambda_ is None:
        lambda_ = 2.0 / (s0 + i0) if s0 + i0 > 0 else 0.0
    bad = {k: v for k, v in dict(b=b, d=d, lambda_=lambda_, gamma=gamma, tau=tau, s0=s0, i0=i0).items() if v < 0}
    if bad or gamma == 0:
        raise ModelError([f"sis preset needs non-negative parameters and gamma > 0 (got {bad or {'gamma': gamma}})"])
    spec = ModelSpec(
        compartments=("S", "I"),
        markov=(
            MarkovianProcess("S", "I", RateLaw("mass_action", lambda_, ("S", "I"))),
            MarkovianProcess(None, "S", RateLaw("population_birth", b, ("S", "I"))),
            MarkovianProcess("S", None, RateLaw("per_capita", d, ("S",))),
            MarkovianProcess("I", None, RateLaw("per_capita", d, ("I",))),
        ),
        delays=(DelayProcess("I", "S", DexpParams(gamma, tau)),),
        initial_counts=(int(s0), int(i0)),
        horizon=horizon,
        record_grid=even_grid(horizon, grid_points),
    )
    return _check(spec)


PRESETS = {"pk": preset_pk, "sis": preset_sis}


# -- config format (JSON) ----------------------------------------------------


def spec_to_dict(spec: ModelSpec) -> dict[str, Any]:
    return {
        "compartments": list(spec.compartments),
        "markov": [
            {
                "source": p.source,
                "target": p.target,
                "kind": p.law.kind,
                "coefficient": p.law.coefficient,
                "operands": list(p.law.operands),
            }
            for p in spec.markov
        ],
        "delays": [
            {"source": d.source, "target": d.target, "mu": d.params.mu, "tau": d.params.tau}
            for d in spec.delays
        ],
        "initial": {n: int(c) for n, c in zip(spec.compartments, spec.initial_counts)},
        "horizon": spec.horizon,
        "grid": list(spec.record_grid),
    }


def _require(obj: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise ModelError([f"{where}: missing field {key!r}"])
    return obj[key]


def spec_from_dict(data: Mapping[str, Any]) -> ModelSpec:
    """Parse the config mapping; ``grid`` may be a list of times or a point count."""
    if not isinstance(data, Mapping):
        raise ModelError(["config must be a mapping"])
    compartments = tuple(_require(data, "compartments", "config"))
    markov = []
    for i, m in enumerate(data.get("markov", [])):
        where = f"markov[{i}]"
        operands = m.get("operands")
        if operands is None:
            operands = [m["source"]] if m.get("kind") == "per_capita" and m.get("source") else []
        markov.append(
            MarkovianProcess(
                m.get("source"),
                m.get("target"),
                RateLaw(_require(m, "kind", where), _require(m, "coefficient", where), tuple(operands)),
            )
        )
    delays = []
    for i, d in enumerate(data.get("delays", [])):
        where = f"delays[{i}]"
        try:
            params = DexpParams(_require(d, "mu", where), _require(d, "tau", where))
        except (TypeError, ValueError) as exc:
            raise ModelError([f"{where}: {exc}"]) from None
        delays.append(DelayProcess(_require(d, "source", where), d.get("target"), params))
    initial = data.get("initial", {})
    if isinstance(initial, Mapping):
        unknown = set(initial) - set(compartments)
        if unknown:
            raise ModelError([f"initial: unknown compartments {sorted(unknown)}"])
        counts = tuple(initial.get(n, 0) for n in compartments)
    else:
        counts = tuple(initial)
    horizon = float(_require(data, "horizon", "config"))
    grid = data.get("grid", DEFAULT_GRID_POINTS)
    if isinstance(grid, (int, np.integer)) and not isinstance(grid, bool):
        grid = even_grid(horizon, int(grid))
    return ModelSpec(compartments, tuple(markov), tuple(delays), counts, horizon, tuple(grid))


def dumps(spec: ModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2)


def loads(text: str) -> ModelSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError([f"config is not valid JSON: {exc}"]) from None
    return spec_from_dict(data)

