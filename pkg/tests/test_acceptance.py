"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a single PASS/FAIL line (collected by ``conftest.py`` and
printed in the terminal summary) and then asserts. Seeds are fixed in advance:
criterion ``k`` uses seed ``k``. Runtimes exclude one-off JIT compilation.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from delaycomp import cli
from delaycomp.dde import build_dde, solve, steady_states
from delaycomp.dexp import INV_E, DexpParams, characteristic_roots, dexp_eval, lambert_w
from delaycomp.model import DelayProcess, ModelSpec, even_grid, preset_pk, preset_sis
from delaycomp.sampler import DexpQuantileTable, RngStream, sample_dexp_many
from delaycomp.ssa import run_ensemble

pytestmark = pytest.mark.usefixtures("jit_warm")

TAUS = (0.0, 0.2, 0.35)
N_PATHS = 2000


def record(k, title, checks, elapsed, limit):
    """Store the report line for criterion ``k`` and return overall success.

    ``checks`` is a list of ``(label, ok)`` pairs.
    """
    in_time = elapsed < limit
    ok = all(c for _, c in checks) and in_time
    detail = "; ".join(f"{label} [{'ok' if c else 'FAIL'}]" for label, c in checks)
    ACCEPTANCE_LINES[k] = (
        f"{'PASS' if ok else 'FAIL'}  {k:>2}. {title}: {detail}; "
        f"runtime {elapsed:.2f} s (limit {limit:g} s)"
    )
    print(ACCEPTANCE_LINES[k])
    return ok


def test_criterion_01_dexp_shape():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    flat_ok = True
    for _ in range(20):
        mu = float(rng.uniform(0.1, 10.0))
        tau = float(rng.uniform(0.0, 1.0)) * INV_E / mu
        p = DexpParams(mu, tau)
        ts = np.concatenate([np.linspace(0.0, tau, 101), rng.uniform(0.0, tau, 100)])
        flat_ok &= bool(np.all(dexp_eval(ts, p) == 1.0))

    p = DexpParams(1.0, 0.3)
    ts = np.linspace(0.0, 20.0 / p.mu, 4001)
    vals = dexp_eval(ts, p)
    nonneg = bool(vals.min() >= 0.0)
    nonincr = bool(np.all(np.diff(vals) <= 0.0))

    q = DexpParams(1.0, 0.7)
    ts = np.linspace(0.0, 10 * q.tau, 2001)
    low = float(dexp_eval(ts, q).min())
    elapsed = time.perf_counter() - t0

    ok = record(
        1, "dexp shape",
        [
            ("dexp == 1 exactly on [0, tau] for 20 random valid (mu, tau)", flat_ok),
            ("mu tau = 0.3 non-negative on [0, 20/mu]", nonneg),
            ("mu tau = 0.3 non-increasing", nonincr),
            (f"mu tau = 0.7 minimum {low:.4g} < 0 on [0, 10 tau]", low < 0.0),
        ],
        elapsed, 1.0,
    )
    assert ok, ACCEPTANCE_LINES[1]


def test_criterion_02_moments():
    t0 = time.perf_counter()
    p = DexpParams(1.0, 0.3)
    n = 10**6
    draws = sample_dexp_many(RngStream(2), DexpQuantileTable.build(p), n)
    mean = float(draws.mean())
    var = float(draws.var(ddof=1))
    elapsed = time.perf_counter() - t0
    mean_tol = 3 * math.sqrt(0.4 / n)
    ok = record(
        2, "moments",
        [
            (f"mean {mean:.6f}, |mean - 1| = {abs(mean - 1):.2e} <= {mean_tol:.2e}", abs(mean - 1.0) <= mean_tol),
            (f"variance {var:.6f}, relative error {abs(var / 0.4 - 1):.2e} <= 1e-2", abs(var / 0.4 - 1.0) <= 0.01),
        ],
        elapsed, 10.0,
    )
    assert ok, ACCEPTANCE_LINES[2]


def test_criterion_03_empirical_survival():
    t0 = time.perf_counter()
    p = DexpParams(1.0, 0.3)
    n = 10**5
    draws = np.sort(sample_dexp_many(RngStream(3), DexpQuantileTable.build(p), n))
    grid = np.linspace(0.0, 8.0, 50)
    emp = 1.0 - np.searchsorted(draws, grid, side="right") / n
    dev = float(np.max(np.abs(emp - dexp_eval(grid, p))))
    band = math.sqrt(math.log(2.0 / 0.01) / (2.0 * n))
    elapsed = time.perf_counter() - t0
    ok = record(
        3, "empirical survival",
        [(f"max |empirical - dexp| = {dev:.2e} <= 99% DKW band {band:.2e}", dev <= band)],
        elapsed, 5.0,
    )
    assert ok, ACCEPTANCE_LINES[3]


def test_criterion_04_lambert_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    w_res = 0.0
    char_res = 0.0
    for _ in range(100):
        x = float(rng.uniform(0.0, INV_E))
        while x == 0.0:
            x = float(rng.uniform(0.0, INV_E))
        for branch in (0, -1):
            w = lambert_w(branch, -x)
            w_res = max(w_res, abs(w * math.exp(w) + x))
        mu = float(rng.uniform(0.1, 10.0))
        tau = x / mu
        roots = characteristic_roots(DexpParams(mu, tau))
        for lam in (roots.lambda0, roots.lambda_neg1):
            char_res = max(char_res, abs(lam + mu * math.exp(-lam * tau)))

    fd_err = 0.0
    h = 1e-6
    for mu, tau in ((1.0, 0.3), (2.0, 0.1), (0.5, 0.7), (1.0, INV_E)):
        p = DexpParams(mu, tau)
        ts = np.linspace(0.0, 12 * tau, 400)
        # Stay at least 10 h clear of every breakpoint n tau.
        ts = ts[np.abs(ts / tau - np.round(ts / tau)) * tau > 10 * h]
        fd = (dexp_eval(ts + h, p) - dexp_eval(ts - h, p)) / (2 * h)
        fd_err = max(fd_err, float(np.max(np.abs(fd + mu * dexp_eval(ts - tau, p)))))
    elapsed = time.perf_counter() - t0
    ok = record(
        4, "Lambert W identities",
        [
            (f"max Lambert-W residual {w_res:.1e} <= 1e-12", w_res <= 1e-12),
            (f"max characteristic residual {char_res:.1e} <= 1e-10", char_res <= 1e-10),
            (f"max derivative-identity error {fd_err:.1e} <= 1e-5", fd_err <= 1e-5),
        ],
        elapsed, 1.0,
    )
    assert ok, ACCEPTANCE_LINES[4]


def within_se(mean, expected, stderr, z=3.0):
    return bool(np.all(np.abs(mean - expected) <= z * stderr))


def worst_z(mean, expected, stderr):
    dev = np.abs(mean - expected)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(stderr > 0, dev / stderr, np.where(dev > 0, np.inf, 0.0))
    return float(z.max())


def test_criterion_05_delay_only_ensemble():
    t0 = time.perf_counter()
    p = DexpParams(1.0, 0.3)
    spec = ModelSpec(("X",), (), (DelayProcess("X", None, p),), (1000,), 5.0, even_grid(5.0, 51))
    s = run_ensemble(spec, N_PATHS, seed=5)
    expected = 1000 * dexp_eval(s.grid, p)
    mean, se = s.column("X"), s.column("X", "stderr")
    elapsed = time.perf_counter() - t0
    ok = record(
        5, "delay-only ensemble equals survival",
        [(f"worst |mean - 1000 dexp| / SE = {worst_z(mean, expected, se):.2f} <= 3 over 51 points",
          within_se(mean, expected, se))],
        elapsed, 30.0,
    )
    assert ok, ACCEPTANCE_LINES[5]


def test_criterion_06_pk_reproduction():
    t0 = time.perf_counter()
    checks = []
    sol0 = solve(build_dde(preset_pk(tau=0.0)), 10.0, 1e-3)
    ts = np.linspace(0.0, 10.0, 2001)
    err = float(np.max(np.abs(sol0.series("A", ts) - 100 * ts * np.exp(-ts))))
    checks.append((f"(a) tau = 0 max error {err:.1e} <= 1e-6", err <= 1e-6))

    peaks = {}
    for tau in TAUS:
        spec = preset_pk(k=1.0, mu=1.0, tau=tau, x0=100, horizon=10.0)
        step = 0.01 if tau == 0 else min(0.01, tau / 4)
        sol = solve(build_dde(spec), spec.horizon, step)
        det = sol.sample(spec.record_grid)
        s = run_ensemble(spec, N_PATHS, seed=6)
        z = max(worst_z(s.mean[:, i], det[:, i], s.stderr[:, i]) for i in range(2))
        checks.append((f"(b) tau = {tau}: worst |mean - deterministic| / SE = {z:.2f} <= 3",
                       within_se(s.mean, det, s.stderr)))
        fine = np.linspace(0.0, 10.0, 10001)
        peaks[tau] = float(sol.series("A", fine).max())
    ordered = peaks[0.35] > peaks[0.2] > peaks[0.0]
    checks.append((
        "(c) peaks " + " > ".join(f"{peaks[t]:.4f} (tau {t})" for t in (0.35, 0.2, 0.0)), ordered,
    ))
    elapsed = time.perf_counter() - t0
    ok = record(6, "PK reproduction", checks, elapsed, 60.0)
    assert ok, ACCEPTANCE_LINES[6]


def sis_deviation(pop, i0, tau, seed, horizon=20.0):
    spec = preset_sis(b=0.1, d=0.1, lambda_=2 / pop, gamma=1.0, tau=tau, s0=pop - i0, i0=i0, horizon=horizon)
    step = 0.01 if tau == 0 else min(0.01, tau / 4)
    det = solve(build_dde(spec), horizon, step).series("I", spec.record_grid) / pop
    s = run_ensemble(spec, N_PATHS, seed=seed)
    dev = float(np.max(np.abs(s.column("I") / pop - det)))
    return dev, s.extinction_fraction("I")


@pytest.fixture(scope="module")
def large_population(jit_warm):
    t0 = time.perf_counter()
    devs = {tau: sis_deviation(2000, 100, tau, seed=7)[0] for tau in TAUS}
    return devs, time.perf_counter() - t0


def test_criterion_07_sis_large_population(large_population):
    devs, elapsed = large_population
    ok = record(
        7, "SIS large-population convergence (P0 = 2000)",
        [(f"tau = {tau}: max |mean I/P0 - deterministic I/P0| = {devs[tau]:.4f} <= 0.02", devs[tau] <= 0.02)
         for tau in TAUS],
        elapsed, 300.0,
    )
    assert ok, ACCEPTANCE_LINES[7]


def test_criterion_08_sis_small_population(large_population):
    large, _ = large_population
    t0 = time.perf_counter()
    checks = []
    for tau in TAUS:
        dev, extinct = sis_deviation(100, 5, tau, seed=8)
        checks.append((f"tau = {tau}: extinction fraction {extinct:.3f} > 0", extinct > 0.0))
        checks.append((f"tau = {tau}: max deviation {dev:.4f} > large-population {large[tau]:.4f}", dev > large[tau]))
    elapsed = time.perf_counter() - t0
    ok = record(8, "SIS small-population behaviour (P0 = 100)", checks, elapsed, 60.0)
    assert ok, ACCEPTANCE_LINES[8]


def test_criterion_09_endemic_levels():
    t0 = time.perf_counter()
    P = 2000
    checks = []
    for tau, quoted in ((0.0, 0.45), (0.35, 0.4672)):
        spec = preset_sis(b=0.1, d=0.1, lambda_=2 / P, gamma=1.0, tau=tau, s0=P - 100, i0=100, horizon=30.0)
        system = build_dde(spec)
        (eq,) = steady_states(system, [[P / 2, P / 2]], constraints=[((1.0, 1.0), P)])
        fixed = eq.state[1] / P
        checks.append((f"tau = {tau}: fixed point I*/P0 = {fixed:.5f} (quoted {quoted})",
                       eq.converged and abs(fixed - quoted) <= 5e-5))
        sol = solve(system, 30.0, 0.01 if tau == 0 else min(0.01, tau / 4))
        at30 = float(sol(30.0)[1] / P)
        checks.append((f"tau = {tau}: I(30)/P0 = {at30:.5f}, |diff| {abs(at30 - fixed):.1e} <= 5e-3",
                       abs(at30 - fixed) <= 0.005))
        drift = float(np.max(np.abs(sol.values.sum(axis=1) - P)))
        checks.append((f"tau = {tau}: max |P(t) - P0| = {drift:.1e} <= {1e-6 * P:g}", drift <= 1e-6 * P))
    elapsed = time.perf_counter() - t0
    ok = record(9, "endemic levels", checks, elapsed, 10.0)
    assert ok, ACCEPTANCE_LINES[9]


def test_criterion_10_reproducibility(tmp_path):
    t0 = time.perf_counter()
    base = ["simulate", "--preset", "sis", "--pop", "100", "--tau", "0.35", "--mode", "both",
            "--paths", "400", "--seed", "10", "--save-paths", "2"]
    runs = {}
    for name, par in (("first", "1"), ("second", "1"), ("parallel8", "8")):
        out = tmp_path / name
        code = cli.main(base + ["--parallel", par, "--out", str(out)])
        assert code == 0
        runs[name] = {f.name: f.read_bytes() for f in sorted(out.glob("*.csv"))}
    elapsed = time.perf_counter() - t0
    files = sorted(runs["first"])
    ok = record(
        10, "reproducibility",
        [
            (f"{len(files)} CSVs byte-identical across two runs", runs["first"] == runs["second"]),
            ("byte-identical at parallelism 1 and 8", runs["first"] == runs["parallel8"]),
        ],
        elapsed, 60.0,
    )
    assert ok, ACCEPTANCE_LINES[10]
