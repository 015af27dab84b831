"""Synthetic populations with known effects, and their analytic truth.

Each (group, cell) stratum follows an exact piecewise polynomial in
``running - cutoff``: the untreated side is ``baseline_coeffs``; the treated
side keeps the baseline intercept, adds ``effect`` and uses
``above_coeffs`` as its slope terms (powers 1, 2, ...).  Missing slope terms
are taken from the baseline.  The truth is computed by direct substitution,
without calling any estimator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .model import GROUPS, ConfigError, MicroRecord, RdSpec

BUNDLED = ("noiseless_2x2", "noisy_2x2", "quadratic_mismatch")


@dataclass(frozen=True)
class CellSpec:
    group: int
    cell: str
    count_per_age: Union[int, Mapping[int, int]]
    baseline_coeffs: Tuple[float, ...]
    effect: float
    above_coeffs: Optional[Tuple[float, ...]] = None
    noise_sd: float = 0.0
    weight: float = 1.0
    locations: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ConfigError(f"cell {self.cell!r}: group must be 0 or 1")
        if self.noise_sd < 0:
            raise ConfigError(f"cell {self.cell!r}: noise_sd must be >= 0")
        if not self.weight > 0:
            raise ConfigError(f"cell {self.cell!r}: weight must be positive")
        if not self.baseline_coeffs:
            raise ConfigError(f"cell {self.cell!r}: baseline_coeffs is empty")
        if isinstance(self.count_per_age, Mapping):
            if any(int(c) < 1 for c in self.count_per_age.values()):
                raise ConfigError(f"cell {self.cell!r}: counts must be >= 1")
        elif int(self.count_per_age) < 1:
            raise ConfigError(f"cell {self.cell!r}: count_per_age must be >= 1")

    def count(self, age: int) -> int:
        if isinstance(self.count_per_age, Mapping):
            return int(self.count_per_age.get(age, 0))
        return int(self.count_per_age)

    def slopes(self) -> Tuple[float, ...]:
        base = tuple(self.baseline_coeffs[1:])
        if self.above_coeffs is None:
            return base
        above = tuple(self.above_coeffs)
        return above + base[len(above):]

    def mean(self, age: int, cutoff: int, treated: bool) -> float:
        d = age - cutoff
        if not treated:
            return sum(c * d**k for k, c in enumerate(self.baseline_coeffs))
        value = self.baseline_coeffs[0] + self.effect
        return value + sum(c * d ** (k + 1) for k, c in enumerate(self.slopes()))


@dataclass(frozen=True)
class DgpSpec:
    cells: Tuple[CellSpec, ...]
    cutoff: int = 65
    window: Tuple[int, int] = (51, 79)
    treated_side: str = "gt"
    seed: int = 0
    n_locations: int = 10
    group_names: Mapping[int, str] = field(default_factory=lambda: {0: "group0", 1: "group1"})
    fit_poly_order: int = 1
    expect: str = "match"

    def __post_init__(self):
        if not self.cells:
            raise ConfigError("DGP needs at least one cell")
        if self.n_locations < 1:
            raise ConfigError("n_locations must be >= 1")
        keys = [(c.group, c.cell) for c in self.cells]
        if len(set(keys)) != len(keys):
            raise ConfigError("duplicate (group, cell) entries in DGP")
        if self.expect not in ("match", "mismatch"):
            raise ConfigError("expect must be 'match' or 'mismatch'")
        self.rd_spec()  # window/cutoff validation

    def ages(self) -> range:
        return range(self.window[0], self.window[1] + 1)

    def rd_spec(self, poly_order: Optional[int] = None) -> RdSpec:
        return RdSpec(
            cutoff=self.cutoff,
            window=tuple(self.window),
            poly_order=self.fit_poly_order if poly_order is None else poly_order,
            treated_side=self.treated_side,
        )

    def treated(self, age: int) -> bool:
        return age > self.cutoff if self.treated_side == "gt" else age >= self.cutoff

    @property
    def cell_alphabet(self) -> Tuple[str, ...]:
        return tuple(sorted({c.cell for c in self.cells}))

    @property
    def noiseless(self) -> bool:
        return all(c.noise_sd == 0 for c in self.cells)

    def n_records(self) -> int:
        return sum(c.count(a) for c in self.cells for a in self.ages())


def make_population(dgp: DgpSpec) -> List[MicroRecord]:
    """Draw the population.

    Records come out cell by cell, then by age.  Locations cycle round-robin
    inside each cell, so when every per-age count is a multiple of the
    number of locations each location holds the same mix of strata.
    """
    rng = np.random.default_rng(dgp.seed)
    default_locs = tuple(f"L{i:02d}" for i in range(dgp.n_locations))
    records = []
    for spec in dgp.cells:
        locs = spec.locations or default_locs
        k = 0
        for age in dgp.ages():
            n = spec.count(age)
            if n == 0:
                continue
            mu = spec.mean(age, dgp.cutoff, dgp.treated(age))
            noise = rng.standard_normal(n) * spec.noise_sd
            for e in noise:
                records.append(MicroRecord(
                    outcome=float(mu + e),
                    group=spec.group,
                    cell=spec.cell,
                    running=age,
                    location=locs[k % len(locs)],
                    weight=float(spec.weight),
                ))
                k += 1
    return records


@dataclass(frozen=True)
class PopulationTruth:
    tau_cell: Dict[Tuple[int, str], float]
    tau_group: Dict[int, float]
    shares: Dict[Tuple[int, str], float]
    gamma0: float
    gamma1: float
    delta: float
    delta_cell: Dict[str, float]
    within: Dict[int, float]
    composition: Dict[int, float]
    kappa: Dict[int, Optional[float]]

    def to_dict(self):
        return {
            "tau_cell": {f"{w},{x}": v for (w, x), v in self.tau_cell.items()},
            "tau_group": {str(w): v for w, v in self.tau_group.items()},
            "shares": {f"{w},{x}": v for (w, x), v in self.shares.items()},
            "gamma0": self.gamma0,
            "gamma1": self.gamma1,
            "delta": self.delta,
            "delta_cell": dict(self.delta_cell),
            "within": {f"ref{r}": v for r, v in self.within.items()},
            "composition": {f"ref{r}": v for r, v in self.composition.items()},
            "kappa": {f"ref{r}": v for r, v in self.kappa.items()},
        }


def population_truth(dgp: DgpSpec, kappa_threshold: float = 1e-9) -> PopulationTruth:
    """Oracle values by substitution into the decomposition formulas.

    Shares come from the specified counts (times cell weights) at running
    values strictly below the cutoff.  A (group, cell) pair absent from the
    DGP has share zero and no effect.
    """
    cells = dgp.cell_alphabet
    by_key = {(c.group, c.cell): c for c in dgp.cells}
    mass = {}
    for w in GROUPS:
        for x in cells:
            c = by_key.get((w, x))
            mass[(w, x)] = 0.0 if c is None else c.weight * sum(
                c.count(a) for a in dgp.ages() if a < dgp.cutoff
            )
    shares = {}
    for w in GROUPS:
        tot = sum(mass[(w, x)] for x in cells)
        if tot == 0:
            raise ConfigError(f"group {w} has no records below the cutoff")
        for x in cells:
            shares[(w, x)] = mass[(w, x)] / tot
    tau_cell = {k: c.effect for k, c in by_key.items()}

    def tau(w, x):
        return tau_cell.get((w, x), 0.0)

    tau_group = {w: sum(tau(w, x) * shares[(w, x)] for x in cells) for w in GROUPS}
    base = {
        w: sum(by_key[(w, x)].baseline_coeffs[0] * shares[(w, x)]
               for x in cells if (w, x) in by_key)
        for w in GROUPS
    }
    gamma0 = base[1] - base[0]
    gamma1 = (base[1] + tau_group[1]) - (base[0] + tau_group[0])
    delta = tau_group[1] - tau_group[0]
    delta_cell = {x: tau(1, x) - tau(0, x) for x in cells}
    within = {
        1: sum(delta_cell[x] * shares[(1, x)] for x in cells),
        0: sum(delta_cell[x] * shares[(0, x)] for x in cells),
    }
    composition = {
        1: sum(tau(0, x) * (shares[(1, x)] - shares[(0, x)]) for x in cells),
        0: sum(tau(1, x) * (shares[(1, x)] - shares[(0, x)]) for x in cells),
    }
    kappa = {
        r: (within[r] / delta if abs(delta) > kappa_threshold else None) for r in (1, 0)
    }
    return PopulationTruth(
        tau_cell=tau_cell,
        tau_group=tau_group,
        shares=shares,
        gamma0=gamma0,
        gamma1=gamma1,
        delta=delta,
        delta_cell=delta_cell,
        within=within,
        composition=composition,
        kappa=kappa,
    )


def expected_counts(dgp: DgpSpec) -> Dict[Tuple[int, str, str], int]:
    """Record counts per (group, cell, side) implied by the DGP."""
    out = {}
    for c in dgp.cells:
        for age in dgp.ages():
            side = "above" if dgp.treated(age) else "below"
            key = (c.group, c.cell, side)
            out[key] = out.get(key, 0) + c.count(age)
    return out


def _as_tuple(v):
    return None if v is None else tuple(float(x) for x in v)


def dgp_from_dict(data) -> DgpSpec:
    if not isinstance(data, Mapping) or not data:
        raise ConfigError("DGP spec is empty or not a mapping")
    if "cells" not in data:
        raise ConfigError("DGP spec: missing field 'cells'")
    known = {"cells", "cutoff", "window", "treated_side", "seed", "n_locations",
             "group_names", "fit", "expect"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"DGP spec: unknown field(s) {sorted(unknown)}")
    cells = []
    for i, raw in enumerate(data["cells"] or []):
        try:
            count = raw["count_per_age"]
            if isinstance(count, Mapping):
                count = {int(k): int(v) for k, v in count.items()}
            cells.append(CellSpec(
                group=int(raw["group"]),
                cell=str(raw["cell"]),
                count_per_age=count,
                baseline_coeffs=_as_tuple(raw["baseline_coeffs"]),
                effect=float(raw["effect"]),
                above_coeffs=_as_tuple(raw.get("above_coeffs")),
                noise_sd=float(raw.get("noise_sd", 0.0)),
                weight=float(raw.get("weight", 1.0)),
                locations=tuple(raw["locations"]) if raw.get("locations") else None,
            ))
        except KeyError as exc:
            raise ConfigError(f"DGP spec: cells[{i}] missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"DGP spec: cells[{i}]: {exc}") from None
    fit = data.get("fit") or {}
    names = data.get("group_names") or {0: "group0", 1: "group1"}
    try:
        return DgpSpec(
            cells=tuple(cells),
            cutoff=int(data.get("cutoff", 65)),
            window=tuple(int(v) for v in data.get("window", (51, 79))),
            treated_side=str(data.get("treated_side", "gt")),
            seed=int(data.get("seed", 0)),
            n_locations=int(data.get("n_locations", 10)),
            group_names={int(k): str(v) for k, v in names.items()},
            fit_poly_order=int(fit.get("poly_order", 1)),
            expect=str(data.get("expect", "match")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"DGP spec: {exc}") from None


def load_dgp(source: Union[str, Path]) -> DgpSpec:
    """Read a DGP spec from a YAML/JSON file, or a bundled name like ``noiseless_2x2``."""
    name = str(source)
    if name in BUNDLED:
        text = resources.files("gapdecomp").joinpath(f"data/{name}.yaml").read_text()
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"DGP spec file not found: {path}")
        text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"DGP spec is not valid YAML: {exc}") from None
    return dgp_from_dict(data)

