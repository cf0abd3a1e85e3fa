import pytest

# Lines collected by the acceptance suite, printed once at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def jit_warm():
    """Compile the simulation kernels once so timings measure the run itself."""
    from delaycomp.dexp import DexpParams, dexp_eval
    from delaycomp.model import preset_pk, preset_sis
    from delaycomp.sampler import DexpQuantileTable, RngStream, sample_dexp_many, sample_markov_holding_many
    from delaycomp.ssa import run_ensemble

    table = DexpQuantileTable.build(DexpParams(1.0, 0.3))
    sample_dexp_many(RngStream(0), table, 10)
    sample_markov_holding_many(RngStream(0), 1.0, 10)
    dexp_eval([0.1, 1.0], DexpParams(1.0, 0.3))
    run_ensemble(preset_pk(x0=5, horizon=1.0), 2, seed=0)
    run_ensemble(preset_sis(s0=5, i0=5, horizon=1.0), 2, seed=0, parallel=2)
