import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CELLS, make_comp, make_effects
from gapdecomp.decomp import (
    DisparityDecomposer,
    change_in_gap,
    composition_covariance,
    decompose,
    decompose_both_references,
    estimate_composition,
    gaps_from_fits,
    kappa,
    reference_sensitivity,
)
from gapdecomp.model import (
    DecompositionResult,
    EstimationError,
    MicroRecord,
    MissingCellError,
    RdSpec,
    Sample,
)
from gapdecomp.rd import fit_rd_lattice
from gapdecomp.synth import CellSpec, DgpSpec, make_population

SPEC = RdSpec()


def rec(group, cell, w=1.0, age=60):
    return MicroRecord(outcome=0.0, group=group, cell=cell, running=age, location="L", weight=w)


class TestComposition:
    def test_group_entirely_in_one_cell(self):
        recs = [rec(1, "South"), rec(1, "South"), rec(0, "South"), rec(0, "Non-South")]
        comp = estimate_composition(recs, SPEC)
        assert comp.share(1, "South") == 1.0
        assert comp.share(1, "Non-South") == 0.0

    def test_equal_counts(self):
        recs = [rec(w, x) for w in (0, 1) for x in CELLS]
        comp = estimate_composition(recs, SPEC)
        assert [comp.share(0, x) for x in CELLS] == [0.5, 0.5]

    def test_weighted_shares(self):
        recs = [rec(0, "South", 1.0), rec(0, "South", 3.0), rec(0, "Non-South", 6.0),
                rec(1, "South")]
        comp = estimate_composition(recs, SPEC)
        assert comp.share(0, "South") == pytest.approx(0.4, abs=1e-15)

    def test_default_sample_is_strictly_below_cutoff(self):
        recs = [rec(0, "South"), rec(0, "Non-South", age=65), rec(0, "Non-South", age=70),
                rec(1, "South")]
        assert estimate_composition(recs, SPEC).share(0, "South") == 1.0
        assert estimate_composition(recs, SPEC, "untreated").share(0, "South") == 0.5
        assert estimate_composition(recs, SPEC, "all").share(0, "South") == pytest.approx(1 / 3)

    def test_empty_group(self):
        with pytest.raises(EstimationError, match="group 1"):
            estimate_composition([rec(0, "South")], SPEC)


class TestChangeInGap:
    @pytest.mark.parametrize("tau1,tau0,expected", [
        (0.092, 0.063, 0.029),
        (-0.07, -0.03, -0.04),
    ])
    def test_table_entries(self, tau1, tau0, expected):
        assert change_in_gap(tau1, tau0) == pytest.approx(expected, abs=1e-15)

    @given(st.floats(-1e6, 1e6))
    def test_equal_effects(self, t):
        assert change_in_gap(t, t) == 0

    def test_rejects_nan(self):
        with pytest.raises(EstimationError):
            change_in_gap(float("nan"), 0.0)


def _two_group_dgp(shift=0.0, tau0=-0.03, tau1=-0.03, noise=0.0):
    return DgpSpec(cells=(
        CellSpec(group=0, cell="all", count_per_age=2, baseline_coeffs=(0.1, 0.001),
                 above_coeffs=(0.002,), effect=tau0, noise_sd=noise),
        CellSpec(group=1, cell="all", count_per_age=2, baseline_coeffs=(0.1 + shift, 0.001),
                 above_coeffs=(0.002,), effect=tau1, noise_sd=noise),
    ))


class TestGaps:
    def test_identical_groups(self):
        effects = fit_rd_lattice(make_population(_two_group_dgp()), SPEC)
        g = gaps_from_fits(effects)
        assert abs(g.gamma0) < 1e-12 and abs(g.gamma1) < 1e-12 and abs(g.delta) < 1e-12

    def test_shifted_baseline(self):
        effects = fit_rd_lattice(make_population(_two_group_dgp(0.179, -0.03, -0.07)), SPEC)
        g = gaps_from_fits(effects)
        assert g.gamma0 == pytest.approx(0.179, abs=1e-10)
        assert g.delta == pytest.approx(-0.04, abs=1e-10)
        assert g.delta == pytest.approx(g.gamma1 - g.gamma0, abs=1e-12)
        assert g.delta == pytest.approx(effects.tau(1) - effects.tau(0), abs=1e-10)

    def test_outcome_shift_cancels(self):
        s = Sample.from_records(make_population(_two_group_dgp(0.1, -0.02, -0.05, noise=0.1)))
        a = gaps_from_fits(fit_rd_lattice(s, SPEC))
        b = gaps_from_fits(fit_rd_lattice(s.with_outcome(s.outcome + 3.0), SPEC))
        assert b.gamma0 == pytest.approx(a.gamma0, abs=1e-12)
        assert b.gamma1 == pytest.approx(a.gamma1, abs=1e-12)


class TestDecompose:
    def test_worked_example_reference_1(self, two_cell_example):
        res = decompose(*two_cell_example, reference=1)
        assert res.per_cell["South"].delta_x == pytest.approx(-0.09, abs=1e-15)
        assert res.per_cell["Non-South"].delta_x == 0.0
        assert res.within_component == pytest.approx(-0.054, abs=1e-15)
        assert res.composition_component == pytest.approx(0.0, abs=1e-15)
        assert res.delta == pytest.approx(-0.054, abs=1e-15)
        assert res.kappa == pytest.approx(1.0, abs=1e-12)

    def test_worked_example_reference_0(self, two_cell_example):
        r1, r0 = decompose_both_references(*two_cell_example)
        assert r0.within_component == pytest.approx(-0.018, abs=1e-15)
        assert r0.composition_component == pytest.approx(-0.036, abs=1e-15)
        assert r0.delta == r1.delta
        assert r0.kappa == pytest.approx(1 / 3, abs=1e-12)
        assert r0.per_cell["South"].tau_ref_x == -0.12

    def test_equal_composition(self):
        effects = make_effects({(1, "a"): 0.3, (1, "b"): -0.1, (0, "a"): 0.1, (0, "b"): 0.05},
                               ("a", "b"))
        comp = make_comp((0.3, 0.7), (0.3, 0.7), ("a", "b"))
        r1, r0 = decompose_both_references(effects, comp)
        assert r1.composition_component == 0.0
        assert r1.kappa == pytest.approx(1.0, abs=1e-12)
        assert r0.within_component == r1.within_component
        assert r0.composition_component == 0.0 and r0.kappa == r1.kappa

    def test_no_within_difference(self):
        effects = make_effects({(1, "a"): 0.3, (1, "b"): -0.1, (0, "a"): 0.3, (0, "b"): -0.1},
                               ("a", "b"))
        comp = make_comp((0.9, 0.1), (0.2, 0.8), ("a", "b"))
        res = decompose(effects, comp)
        assert res.within_component == 0.0
        assert res.kappa == 0.0

    def test_missing_needed_cell(self, two_cell_example):
        effects, comp = two_cell_example
        tau = {(1, "South"): -0.12, (0, "South"): -0.03, (0, "Non-South"): -0.03}
        with pytest.raises(MissingCellError, match="Non-South"):
            decompose(make_effects(tau, CELLS), comp)

    def test_missing_unneeded_cell(self):
        # pi_1(b) = 0, so tau(1, b) is only needed for the reference-0 composition term
        tau = {(1, "a"): 0.2, (0, "a"): 0.1, (0, "b"): 0.05}
        comp = make_comp((1.0, 0.0), (0.5, 0.5), ("a", "b"))
        res = decompose(make_effects(tau, ("a", "b")), comp, reference=1)
        assert res.delta == pytest.approx(0.2 - 0.075)
        with pytest.raises(MissingCellError):
            decompose(make_effects(tau, ("a", "b")), comp, reference=0)

    def test_alphabet_mismatch(self, two_cell_example):
        effects, _ = two_cell_example
        with pytest.raises(EstimationError, match="alphabet"):
            decompose(effects, make_comp((0.5, 0.5), (0.5, 0.5), ("x", "y")))

    def test_reference_sensitivity_flags(self, two_cell_example):
        flags = reference_sensitivity(decompose_both_references(*two_cell_example))
        assert flags["kappa_differs"]
        assert flags["kappa_difference"] == pytest.approx(2 / 3)
        assert not flags["within_sign_differs"]


class TestKappa:
    def _res(self, within, delta):
        return DecompositionResult(reference=1, delta=delta, per_cell={},
                                   within_component=within,
                                   composition_component=delta - within, kappa=None)

    def test_full_within(self):
        assert kappa(self._res(-0.054, -0.054)) == 1.0

    def test_outside_unit_interval(self):
        assert kappa(self._res(0.02, -0.01)) == pytest.approx(-2.0)

    def test_degenerate(self):
        assert kappa(self._res(0.01, 0.0)) is None
        assert kappa(self._res(0.01, 1e-10)) is None


class TestCovariance:
    def test_equal_composition(self):
        effects = make_effects({(w, x): 0.1 * w + 0.01 for w in (0, 1) for x in "ab"}, "ab")
        products, total = composition_covariance(effects, make_comp((0.5, 0.5), (0.5, 0.5), "ab"))
        assert products == {"a": 0.0, "b": 0.0} and total == 0.0

    def test_worked_example(self, two_cell_example):
        products, total = composition_covariance(*two_cell_example, reference=1)
        assert products["South"] == pytest.approx(-0.012, abs=1e-15)
        assert products["Non-South"] == pytest.approx(0.012, abs=1e-15)
        assert total == pytest.approx(0.0, abs=1e-15)
        assert total == decompose(*two_cell_example).composition_component

    def test_single_cell(self):
        effects = make_effects({(0, "x"): 0.1, (1, "x"): 0.3}, ("x",))
        products, total = composition_covariance(effects, make_comp((1.0,), (1.0,), ("x",)))
        assert products == {"x": 0.0}


@st.composite
def random_inputs(draw, max_cells=6):
    k = draw(st.integers(1, max_cells))
    cells = tuple(f"c{i}" for i in range(k))
    taus = draw(st.lists(st.floats(-1, 1), min_size=2 * k, max_size=2 * k))
    raw = draw(st.lists(st.floats(0.01, 10), min_size=2 * k, max_size=2 * k))
    tau = {(w, x): taus[w * k + i] for w in (0, 1) for i, x in enumerate(cells)}
    pi1 = np.array(raw[:k]) / sum(raw[:k])
    pi0 = np.array(raw[k:]) / sum(raw[k:])
    return make_effects(tau, cells), make_comp(pi1, pi0, cells), tau, cells


@settings(max_examples=100, deadline=None)
@given(random_inputs(), st.floats(0.1, 10), st.booleans())
def test_decomposition_properties(inputs, scale, negate):
    effects, comp, tau, cells = inputs
    plug = sum(tau[(1, x)] * comp.share(1, x) - tau[(0, x)] * comp.share(0, x) for x in cells)
    r1, r0 = decompose_both_references(effects, comp)
    for r in (r1, r0):
        assert abs(r.within_component + r.composition_component - plug) <= 1e-12
    assert abs(r1.delta - r0.delta) <= 1e-12
    # outcome scale equivariance
    a = -scale if negate else scale
    scaled = make_effects({k: a * v for k, v in tau.items()}, cells)
    s1 = decompose(scaled, comp)
    assert s1.delta == pytest.approx(a * r1.delta, abs=1e-12)
    assert s1.within_component == pytest.approx(a * r1.within_component, abs=1e-12)
    if r1.kappa is not None and abs(r1.delta) > 1e-6:
        assert s1.kappa == pytest.approx(r1.kappa, rel=1e-8, abs=1e-8)
    # relabelling cells in reverse order
    rev = tuple(reversed(cells))
    relabel = {x: f"z{i}" for i, x in enumerate(rev)}
    new_cells = tuple(sorted(relabel.values()))
    eff2 = make_effects({(w, relabel[x]): v for (w, x), v in tau.items()}, new_cells)
    comp2 = make_comp([comp.share(1, x) for x in sorted(cells, key=relabel.get)],
                      [comp.share(0, x) for x in sorted(cells, key=relabel.get)], new_cells)
    q = decompose(eff2, comp2)
    assert q.delta == pytest.approx(r1.delta, abs=1e-12)
    assert q.within_component == pytest.approx(r1.within_component, abs=1e-12)


def test_decomposer_estimator(noiseless_dgp, noiseless_sample):
    from sklearn.base import clone

    est = DisparityDecomposer(reference=0)
    assert clone(est).get_params()["reference"] == 0
    est.fit(noiseless_sample)
    assert est.kappa_ == pytest.approx(1 / 3, abs=1e-8)
    assert est.decomposition_.reference == 0
    terms = est.transform()
    assert terms.shape == (2, 3)
    assert est.summary()["delta"] == pytest.approx(-0.054, abs=1e-10)
    est.set_params(reference=1).fit(noiseless_sample.to_records())
    assert est.kappa_ == pytest.approx(1.0, abs=1e-8)
