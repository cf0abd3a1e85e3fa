import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate

from delaycomp.dexp import DexpParams, dexp_density, dexp_eval
from delaycomp.model import (
    DelayProcess,
    MarkovianProcess,
    ModelError,
    ModelSpec,
    RateLaw,
    even_grid,
    preset_pk,
    preset_sis,
)
from delaycomp.sampler import RngStream
from delaycomp.ssa import (
    SimulationError,
    compile_model,
    run_ensemble,
    run_path,
)


def one_compartment(x0, delay=None, death=0.0, horizon=3.0, points=31):
    markov = ()
    if death > 0:
        markov = (MarkovianProcess("X", None, RateLaw("per_capita", death, ("X",))),)
    delays = () if delay is None else (DelayProcess("X", None, delay),)
    return ModelSpec(("X",), markov, delays, (x0,), horizon, even_grid(horizon, points))


# Pointwise 3-SE bands over a 30-point grid fail together a few percent of the
# time (neighbouring grid means are strongly correlated); these unit checks use
# a family-wise 4-SE band instead.
Z_FAMILY = 4.0


def replay(spec, events, grid):
    """Rebuild grid counts from an event log."""
    idx = {n: i for i, n in enumerate(spec.compartments)}
    counts = np.array(spec.initial_counts, dtype=np.int64)
    out = np.empty((len(grid), len(counts)), dtype=np.int64)
    k = 0
    for j, t in enumerate(grid):
        while k < len(events) and events[k].time <= t:
            ev = events[k]
            if ev.source is not None:
                counts[idx[ev.source]] -= 1
            if ev.target is not None:
                counts[idx[ev.target]] += 1
            assert counts.min() >= 0
            k += 1
        out[j] = counts
    return out


class TestSanity:
    def test_pure_death(self):
        mu = 0.7
        spec = one_compartment(1000, death=mu)
        summary = run_ensemble(spec, 2000, seed=1)
        expected = 1000 * np.exp(-mu * summary.grid)
        dev = np.abs(summary.column("X") - expected)
        assert np.all(dev <= Z_FAMILY * summary.column("X", "stderr") + 1e-12)

    def test_pure_delay(self):
        p = DexpParams(1.0, 0.3)
        spec = one_compartment(1000, delay=p)
        summary = run_ensemble(spec, 2000, seed=2)
        expected = 1000 * dexp_eval(summary.grid, p)
        dev = np.abs(summary.column("X") - expected)
        assert np.all(dev <= Z_FAMILY * summary.column("X", "stderr") + 1e-12)

    def test_nothing_leaves_before_tau(self):
        spec = one_compartment(500, delay=DexpParams(0.9, 0.4), horizon=1.0, points=11)
        traj = run_path(spec, RngStream(3))
        before = traj.grid < 0.4
        assert np.all(traj.series("X")[before] == 500)

    def test_exchangeable_competition(self):
        # A particle leaves through the delay channel with probability
        # integral of exp(-d t) psi(t), i.e. it must outlive the death clock.
        p, d = DexpParams(1.0, 0.3), 0.5
        n = 100_000
        spec = one_compartment(n, delay=p, death=d, horizon=200.0, points=2)
        traj = run_path(spec, RngStream(4), record_events=True)
        assert traj.series("X")[-1] == 0
        via_delay = sum(ev.process.endswith("(delay)") for ev in traj.events)
        frac = via_delay / n
        oracle, _ = integrate.quad(
            lambda t: math.exp(-d * t) * dexp_density(t, p), p.tau, 60.0, limit=400,
            points=[p.tau * k for k in range(2, 60)],
        )
        se = math.sqrt(oracle * (1 - oracle) / n)
        assert abs(frac - oracle) <= 3 * se
        # Also the closed form mgf(-d) = 1/(1 + d exp(d tau)/mu).
        assert oracle == pytest.approx(1 / (1 + d * math.exp(d * p.tau) / p.mu), rel=1e-9)


class TestEvents:
    def test_replay_matches_grid(self):
        spec = preset_sis(s0=95, i0=5, horizon=10.0, grid_points=101)
        traj = run_path(spec, RngStream(5), record_events=True)
        assert traj.n_events == len(traj.events) > 0
        assert np.array_equal(replay(spec, traj.events, traj.grid), traj.counts_at_grid)

    def test_event_times_increase(self):
        traj = run_path(preset_sis(), RngStream(6), record_events=True)
        times = np.array([e.time for e in traj.events])
        assert np.all(np.diff(times) > 0.0)
        assert times[-1] <= 30.0

    def test_delay_exits_respect_delay(self):
        # A's k-th exit can come no earlier than its k-th entry plus tau.
        tau = 0.35
        spec = preset_pk(k=1.0, mu=1.0, tau=tau, x0=400, horizon=40.0)
        traj = run_path(spec, RngStream(7), record_events=True)
        entries = np.sort([e.time for e in traj.events if e.target == "A"])
        exits = np.sort([e.time for e in traj.events if e.source == "A"])
        assert len(exits) > 300
        assert np.all(exits >= entries[: len(exits)] + tau - 1e-12)

    def test_conserved_without_births(self):
        spec = preset_pk(x0=300, horizon=5.0)
        traj = run_path(spec, RngStream(8), record_events=True)
        removed = sum(e.target is None for e in traj.events)
        assert np.all(traj.counts_at_grid.sum(axis=1)[-1] == 300 - removed)


class TestEnsemble:
    def test_single_path_summary(self):
        spec = preset_pk(horizon=5.0)
        summary = run_ensemble(spec, 1, seed=9)
        traj = run_path(spec, RngStream(9, 0))
        assert np.array_equal(summary.mean, traj.counts_at_grid)
        assert np.all(summary.variance == 0.0) and np.all(summary.stderr == 0.0)

    def test_same_seed_same_summary(self):
        spec = preset_sis(horizon=10.0)
        a = run_ensemble(spec, 50, seed=10)
        b = run_ensemble(spec, 50, seed=10)
        for field in ("mean", "variance", "stderr", "extinct"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_parallelism_does_not_change_results(self):
        spec = preset_sis(horizon=10.0)
        a = run_ensemble(spec, 40, seed=11, parallel=1, keep_paths=True)
        b = run_ensemble(spec, 40, seed=11, parallel=4, keep_paths=True)
        assert np.array_equal(a.paths, b.paths)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.variance, b.variance)

    def test_statistics(self):
        spec = preset_pk(horizon=5.0, grid_points=11)
        s = run_ensemble(spec, 30, seed=12, keep_paths=True)
        np.testing.assert_array_equal(s.mean, s.paths.mean(axis=0))
        np.testing.assert_allclose(s.variance, s.paths.var(axis=0, ddof=1))
        np.testing.assert_allclose(s.stderr, np.sqrt(s.variance / 30))
        np.testing.assert_allclose(s.std, np.sqrt(s.variance))

    def test_small_sis_goes_extinct_sometimes(self):
        spec = preset_sis(s0=95, i0=5, tau=0.2)
        s = run_ensemble(spec, 300, seed=13, keep_paths=True)
        frac = s.extinction_fraction("I")
        assert 0.0 < frac < 1.0
        # Once I is empty it stays empty: there is no infection source.
        final_zero = np.mean(s.paths[:, -1, 1] == 0)
        assert final_zero == pytest.approx(frac)

    def test_extinct_path_frozen(self):
        spec = preset_pk(x0=5, horizon=30.0)
        traj = run_path(spec, RngStream(14))
        assert np.all(traj.counts_at_grid[-1] == 0)
        assert traj.first_zero[1] == 0.0
        assert 0.0 < traj.first_zero[0] < 30.0

    def test_rejects_zero_paths(self):
        with pytest.raises(ValueError):
            run_ensemble(preset_pk(), 0, seed=0)


class TestErrors:
    def test_invalid_spec(self):
        spec = dataclasses.replace(preset_pk(), initial_counts=(-3, 0))
        with pytest.raises(ModelError):
            compile_model(spec)

    def test_negative_count_aborts(self):
        model = compile_model(preset_pk())
        broken = dataclasses.replace(model, counts0=np.array([-1, 0]))
        with pytest.raises(SimulationError, match="negative"):
            run_path(broken, RngStream(0))

    def test_clock_mismatch_aborts_with_replica(self):
        model = compile_model(preset_pk())
        broken = dataclasses.replace(model, delay_of=np.array([0, 0]))
        with pytest.raises(SimulationError, match="clock") as info:
            run_ensemble(broken, 3, seed=0, parallel=1)
        assert info.value.replica == 0
        assert info.value.time == 0.0
