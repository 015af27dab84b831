import numpy as np
import pytest

from gapdecomp.model import CompositionTable, EffectTable, RdFit, Sample
from gapdecomp.synth import CellSpec, DgpSpec, load_dgp, make_population


def fake_fit(tau, stratum=()):
    return RdFit(tau_hat=tau, below_coeffs=(0.0, 0.0), above_coeffs=(tau, 0.0),
                 n_below=10, n_above=10, residual_variance=0.0, stratum=stratum)


def make_effects(tau_cell, cells, tau_group=(0.0, 0.0)):
    """EffectTable from {(w, x): tau}; absent keys are recorded as missing."""
    by_cell = {k: fake_fit(v, k) for k, v in tau_cell.items() if v is not None}
    missing = {(w, x): "removed" for w in (0, 1) for x in cells if (w, x) not in by_cell}
    return EffectTable(
        overall=fake_fit(0.0),
        by_group={0: fake_fit(tau_group[0], (0,)), 1: fake_fit(tau_group[1], (1,))},
        by_group_cell=by_cell,
        cells=tuple(cells),
        missing=missing,
    )


def make_comp(pi1, pi0, cells):
    shares = {}
    for w, pi in ((1, pi1), (0, pi0)):
        for x, p in zip(cells, pi):
            shares[(w, x)] = p
    return CompositionTable(shares=shares, cells=tuple(cells))


CELLS = ("Non-South", "South")


@pytest.fixture
def two_cell_example():
    """tau(1,.) = (-0.12, -0.03), tau(0,.) = (-0.03, -0.03) for (South, Non-South)."""
    tau = {(1, "South"): -0.12, (1, "Non-South"): -0.03,
           (0, "South"): -0.03, (0, "Non-South"): -0.03}
    effects = make_effects(tau, CELLS)
    comp = make_comp((0.4, 0.6), (0.8, 0.2), CELLS)
    return effects, comp


@pytest.fixture(scope="session")
def noiseless_dgp():
    return load_dgp("noiseless_2x2")


@pytest.fixture(scope="session")
def noiseless_sample(noiseless_dgp):
    return Sample.from_records(make_population(noiseless_dgp))


def linear_dgp(tau_star=-0.04, seed=0, noise=0.0, count=3):
    return DgpSpec(cells=(CellSpec(
        group=0, cell="all", count_per_age=count, baseline_coeffs=(2.0, 0.5),
        above_coeffs=(0.1,), effect=tau_star, noise_sd=noise),
        CellSpec(group=1, cell="all", count_per_age=count, baseline_coeffs=(2.0, 0.5),
                 above_coeffs=(0.1,), effect=tau_star, noise_sd=noise)), seed=seed)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
