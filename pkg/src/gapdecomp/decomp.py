"""Change-in-gap identity and its within/composition decomposition.

For cell effects ``tau(w, x)`` and cell shares ``pi_w(x)`` the change in the
disparity gap is ``delta = sum_x tau(1,x) pi_1(x) - tau(0,x) pi_0(x)``.  With
group 1 as the reference it splits into::

    within      = sum_x (tau(1,x) - tau(0,x)) * pi_1(x)
    composition = sum_x tau(0,x) * (pi_1(x) - pi_0(x))

and with group 0 as the reference the within term is weighted by ``pi_0``
while the composition term uses ``tau(1, x)``.  ``kappa = within / delta``.

Everything here works at the plug-in level: ``delta`` is the cell-weighted
sum above, not the separately estimated pooled ``tau(1) - tau(0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import (
    GROUPS,
    CellTerms,
    CompositionTable,
    ConfigError,
    DecompositionResult,
    EffectTable,
    EstimationError,
    GapEstimate,
    MissingCellError,
    RdSpec,
    RecordsLike,
    Sample,
    as_sample,
)
from .rd import fit_rd_lattice

KAPPA_THRESHOLD = 1e-9
SAMPLE_RULES = ("below", "untreated", "all")


def _composition_rows(sample: Sample, spec: RdSpec, sample_rule: str):
    keep = spec.in_window(sample.running)
    if sample_rule == "below":
        keep &= sample.running < spec.cutoff
    elif sample_rule == "untreated":
        keep &= ~spec.treated(sample.running)
    elif sample_rule != "all":
        raise ConfigError(f"unknown composition sample rule {sample_rule!r}; use one of {SAMPLE_RULES}")
    return keep


def estimate_composition(
    records: RecordsLike, spec: RdSpec, sample_rule: str = "below"
) -> CompositionTable:
    """Weighted cell shares per group.

    ``sample_rule`` picks the records used: ``"below"`` (running strictly
    below the cutoff, the default), ``"untreated"`` or ``"all"``.
    """
    sample = as_sample(records)
    keep = _composition_rows(sample, spec, sample_rule)
    weight = sample.weight if spec.weighted else np.ones(len(sample))
    ncell = len(sample.cells)
    shares = {}
    for w in GROUPS:
        sel = keep & (sample.group == w)
        totals = np.bincount(sample.cell[sel], weights=weight[sel], minlength=ncell)
        total = totals.sum()
        if total <= 0:
            raise EstimationError(
                f"group {w} has no records in the composition sample ({sample_rule})"
            )
        props = totals / total
        for i, x in enumerate(sample.cells):
            shares[(w, x)] = float(props[i])
    return CompositionTable(shares=shares, cells=sample.cells, estimation_sample=sample_rule)


def change_in_gap(tau1: float, tau0: float) -> float:
    """Change in the disparity gap, the difference in group effects."""
    if not (math.isfinite(tau1) and math.isfinite(tau0)):
        raise EstimationError("change_in_gap needs finite effects")
    return tau1 - tau0


def gaps_from_fits(effects: EffectTable) -> GapEstimate:
    """Gaps at the cutoff from each group's fitted side limits."""
    try:
        f0, f1 = effects.by_group[0], effects.by_group[1]
    except KeyError:
        raise EstimationError("both per-group fits are required") from None
    gamma0 = f1.value_below - f0.value_below
    gamma1 = f1.value_above - f0.value_above
    return GapEstimate(gamma0=gamma0, gamma1=gamma1, delta=gamma1 - gamma0)


def _check_alphabets(effects: EffectTable, comp: CompositionTable):
    if tuple(effects.cells) != tuple(comp.cells):
        raise EstimationError(
            f"cell alphabets differ: effects {effects.cells} vs composition {comp.cells}"
        )


def _needed_tau(effects: EffectTable, w: int, x: str) -> float:
    tau = effects.tau(w, x)
    if not np.isfinite(tau):
        why = effects.missing.get((w, x), "no fit")
        raise MissingCellError(f"effect for group {w}, cell {x!r} is needed but missing: {why}")
    return tau


def _term(weight: float, effects: EffectTable, w: int, x: str) -> float:
    # zero-weight terms never touch a possibly missing cell
    if weight == 0.0:
        return 0.0
    return weight * _needed_tau(effects, w, x)


def plug_in_effect(effects: EffectTable, comp: CompositionTable, group: int) -> float:
    """``sum_x tau(w, x) pi_w(x)``."""
    _check_alphabets(effects, comp)
    return math.fsum(_term(comp.share(group, x), effects, group, x) for x in comp.cells)


def kappa(result: DecompositionResult, threshold: float = KAPPA_THRESHOLD) -> Optional[float]:
    """Within share of the change in gap, or None when delta is degenerate.

    No clamping: values above one or below zero are returned as they are.
    """
    return _kappa(result.within_component, result.delta, threshold)


def _kappa(within, delta, threshold):
    if not abs(delta) > threshold:
        return None
    return within / delta


def decompose(
    effects: EffectTable,
    comp: CompositionTable,
    reference: int = 1,
    kappa_threshold: float = KAPPA_THRESHOLD,
) -> DecompositionResult:
    if reference not in GROUPS:
        raise ConfigError(f"reference must be 0 or 1, got {reference!r}")
    _check_alphabets(effects, comp)
    other = 1 - reference
    per_cell = {}
    within_terms, comp_terms = [], []
    for x in comp.cells:
        p1, p0 = comp.share(1, x), comp.share(0, x)
        p_ref = comp.share(reference, x)
        pi_diff = p1 - p0
        t1, t0 = effects.tau(1, x), effects.tau(0, x)
        if p_ref != 0.0:
            t1, t0 = _needed_tau(effects, 1, x), _needed_tau(effects, 0, x)
        tau_comp = effects.tau(other, x)
        if pi_diff != 0.0:
            tau_comp = _needed_tau(effects, other, x)
        delta_x = t1 - t0
        within_terms.append(0.0 if p_ref == 0.0 else delta_x * p_ref)
        comp_terms.append(0.0 if pi_diff == 0.0 else tau_comp * pi_diff)
        per_cell[x] = CellTerms(delta_x=delta_x, tau_ref_x=tau_comp, pi_diff=pi_diff)
    within = math.fsum(within_terms)
    composition = math.fsum(comp_terms)
    delta = plug_in_effect(effects, comp, 1) - plug_in_effect(effects, comp, 0)
    return DecompositionResult(
        reference=reference,
        delta=delta,
        per_cell=per_cell,
        within_component=within,
        composition_component=composition,
        kappa=_kappa(within, delta, kappa_threshold),
    )


def decompose_both_references(
    effects: EffectTable, comp: CompositionTable, kappa_threshold: float = KAPPA_THRESHOLD
) -> Tuple[DecompositionResult, DecompositionResult]:
    """Decompositions with group 1 and group 0 as reference, in that order."""
    return (
        decompose(effects, comp, 1, kappa_threshold),
        decompose(effects, comp, 0, kappa_threshold),
    )


def reference_sensitivity(pair, tol: float = 1e-9) -> Dict[str, object]:
    """Flags for how much the split moves when the reference group changes."""
    r1, r0 = pair
    k1, k0 = r1.kappa, r0.kappa
    kappa_diff = None if k1 is None or k0 is None else k1 - k0
    return {
        "delta_ref1": r1.delta,
        "delta_ref0": r0.delta,
        "kappa_ref1": k1,
        "kappa_ref0": k0,
        "kappa_difference": kappa_diff,
        "kappa_differs": kappa_diff is not None and abs(kappa_diff) > tol,
        "within_sign_differs": bool(
            np.sign(r1.within_component) != np.sign(r0.within_component)
        ),
    }


def composition_covariance(effects: EffectTable, comp: CompositionTable, reference: int = 1):
    """Per-cell products ``tau(other, x) * (pi_1(x) - pi_0(x))`` and their sum.

    ``other`` is the non-reference group, so the sum is the composition
    component of :func:`decompose`.  No mean-centering is applied.
    """
    result = decompose(effects, comp, reference)
    products = {
        x: (0.0 if t.pi_diff == 0.0 else t.tau_ref_x * t.pi_diff)
        for x, t in result.per_cell.items()
    }
    return products, math.fsum(products.values())


@dataclass(frozen=True)
class Analysis:
    """Everything the point-estimate pipeline produces for one outcome."""

    effects: EffectTable
    composition: CompositionTable
    gaps: GapEstimate
    decompositions: Tuple[DecompositionResult, DecompositionResult]

    @property
    def pooled_delta(self) -> float:
        return change_in_gap(self.effects.tau(1), self.effects.tau(0))

    @property
    def plug_in_delta(self) -> float:
        return self.decompositions[0].delta

    def plug_in_effect(self, group: int) -> float:
        return plug_in_effect(self.effects, self.composition, group)

    def scalars(self) -> Dict[str, float]:
        """Flat name -> value map; the quantities the bootstrap tracks."""
        out = {"tau": self.effects.overall.tau_hat}
        for w in GROUPS:
            out[f"tau[{w}]"] = self.effects.tau(w)
        for w in GROUPS:
            for x in self.effects.cells:
                out[f"tau[{w},{x}]"] = self.effects.tau(w, x)
        out["gamma0"] = self.gaps.gamma0
        out["gamma1"] = self.gaps.gamma1
        out["delta_pooled"] = self.pooled_delta
        out["delta"] = self.plug_in_delta
        for res in self.decompositions:
            pre = f"ref{res.reference}"
            out[f"{pre}.within"] = res.within_component
            out[f"{pre}.composition"] = res.composition_component
            out[f"{pre}.kappa"] = np.nan if res.kappa is None else res.kappa
        return out


def analyze(
    records: RecordsLike,
    spec: RdSpec,
    sample_rule: str = "below",
    kappa_threshold: float = KAPPA_THRESHOLD,
) -> Analysis:
    """Composition, lattice fits, gaps and both decompositions."""
    sample = as_sample(records)
    comp = estimate_composition(sample, spec, sample_rule)
    effects = fit_rd_lattice(sample, spec)
    return Analysis(
        effects=effects,
        composition=comp,
        gaps=gaps_from_fits(effects),
        decompositions=decompose_both_references(effects, comp, kappa_threshold),
    )


class DisparityDecomposer(BaseEstimator):
    """Estimator front-end for the full gap-change pipeline.

    Parameters mirror :class:`~gapdecomp.model.RdSpec` plus the composition
    sample rule, the reporting reference group and the kappa threshold.
    ``fit`` takes a list of :class:`~gapdecomp.model.MicroRecord` or a
    :class:`~gapdecomp.model.Sample`.

    Attributes
    ----------
    effects_ : EffectTable
    composition_ : CompositionTable
    gaps_ : GapEstimate
    decomposition_ : DecompositionResult
        Result for ``reference``.
    decompositions_ : tuple of DecompositionResult
        Reference 1 then reference 0.
    kappa_ : float or None
    """

    def __init__(self, cutoff=65, window=(51, 79), poly_order=1, treated_side="gt",
                 donut=0, weighted=True, composition_sample="below", reference=1,
                 kappa_threshold=KAPPA_THRESHOLD):
        self.cutoff = cutoff
        self.window = window
        self.poly_order = poly_order
        self.treated_side = treated_side
        self.donut = donut
        self.weighted = weighted
        self.composition_sample = composition_sample
        self.reference = reference
        self.kappa_threshold = kappa_threshold

    def rd_spec(self) -> RdSpec:
        return RdSpec(
            cutoff=self.cutoff,
            window=tuple(self.window),
            poly_order=self.poly_order,
            treated_side=self.treated_side,
            donut=self.donut,
            weighted=self.weighted,
        )

    def fit(self, X, y=None):
        if self.reference not in GROUPS:
            raise ConfigError(f"reference must be 0 or 1, got {self.reference!r}")
        sample = as_sample(X)
        if y is not None:
            sample = sample.with_outcome(y)
        self.analysis_ = analyze(sample, self.rd_spec(), self.composition_sample,
                                 self.kappa_threshold)
        self.effects_ = self.analysis_.effects
        self.composition_ = self.analysis_.composition
        self.gaps_ = self.analysis_.gaps
        self.decompositions_ = self.analysis_.decompositions
        self.decomposition_ = self.decompositions_[1 - self.reference]
        self.kappa_ = self.decomposition_.kappa
        return self

    def transform(self, X=None):
        """Per-cell decomposition terms as an array ``(n_cells, 3)``.

        Columns are ``delta_x``, ``tau_ref_x`` and ``pi_diff`` in cell order.
        """
        check_is_fitted(self, "analysis_")
        return np.array([
            [t.delta_x, t.tau_ref_x, t.pi_diff]
            for t in self.decomposition_.per_cell.values()
        ])

    def summary(self) -> Dict[str, float]:
        check_is_fitted(self, "analysis_")
        return self.analysis_.scalars()
