"""Shared value types for gap-change estimation and decomposition.

Every estimator in the package consumes or produces these objects.  They are
frozen dataclasses, safe to share between threads once built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

GROUPS = (0, 1)
TREATED_SIDES = ("gt", "ge")


class GapDecompError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class ConfigError(GapDecompError):
    exit_code = 1


class DataError(GapDecompError):
    exit_code = 2


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EstimationError(GapDecompError):
    exit_code = 3


class InsufficientDataError(EstimationError):
    pass


class SingularDesignError(EstimationError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class MissingCellError(EstimationError):
    pass


class InferenceError(EstimationError):
    pass


class ValidationFailure(GapDecompError):
    exit_code = 4


@dataclass(frozen=True)
class MicroRecord:
    """One survey respondent."""

    outcome: float
    group: int
    cell: str
    running: int
    location: str
    weight: float = 1.0

    def __post_init__(self):
        if self.group not in GROUPS:
            raise DataError(f"group must be 0 or 1, got {self.group!r}")
        if not self.weight > 0:
            raise DataError(f"weight must be positive, got {self.weight!r}")


@dataclass(frozen=True)
class RdSpec:
    """Regression-discontinuity configuration.

    Parameters
    ----------
    cutoff : int
        Value of the running variable where eligibility starts.
    window : (int, int)
        Inclusive analysis window on the running variable.
    poly_order : int
        Order of the trend polynomial on each side of the cutoff.
    treated_side : {"gt", "ge"}
        ``"gt"`` treats ``running > cutoff``; ``"ge"`` treats ``running >= cutoff``.
    donut : int
        Records with ``abs(running - cutoff) < donut`` are dropped before fitting.
        Zero keeps everything.
    weighted : bool
        Use survey weights.  When False every weight is treated as 1.
    """

    cutoff: int = 65
    window: Tuple[int, int] = (51, 79)
    poly_order: int = 1
    treated_side: str = "gt"
    donut: int = 0
    weighted: bool = True

    def __post_init__(self):
        lo, hi = (int(v) for v in self.window)
        object.__setattr__(self, "window", (lo, hi))
        if self.poly_order < 0:
            raise ConfigError("poly_order must be >= 0")
        if self.donut < 0:
            raise ConfigError("donut must be >= 0")
        if self.treated_side not in TREATED_SIDES:
            raise ConfigError(f"treated_side must be one of {TREATED_SIDES}")
        if not lo < self.cutoff < hi:
            raise ConfigError(
                f"cutoff {self.cutoff} must lie strictly inside window [{lo}, {hi}]"
            )
        ages = np.arange(lo, hi + 1)
        ages = ages[self.keep_mask(ages)]
        treated = self.treated(ages)
        need = self.poly_order + 1
        if (~treated).sum() < need or treated.sum() < need:
            raise ConfigError(
                f"window [{lo}, {hi}] with donut {self.donut} leaves fewer than "
                f"{need} running values on one side of the cutoff"
            )

    def treated(self, running):
        running = np.asarray(running)
        if self.treated_side == "gt":
            return running > self.cutoff
        return running >= self.cutoff

    def in_window(self, running):
        running = np.asarray(running)
        return (running >= self.window[0]) & (running <= self.window[1])

    def keep_mask(self, running):
        """Rows that survive the donut exclusion."""
        running = np.asarray(running)
        return np.abs(running - self.cutoff) >= self.donut

    @property
    def n_coef(self):
        return 2 * self.poly_order + 2

    @property
    def column_names(self):
        p = self.poly_order
        return (
            ["treated"]
            + [f"below_p{k}" for k in range(p + 1)]
            + [f"above_p{k}" for k in range(1, p + 1)]
        )


Stratum = Tuple  # () overall, (w,) group, (w, x) group-by-cell


def stratum_label(stratum: Stratum) -> str:
    if not stratum:
        return "overall"
    if len(stratum) == 1:
        return f"group={stratum[0]}"
    return f"group={stratum[0]}, cell={stratum[1]}"


@dataclass(frozen=True)
class RdFit:
    """Fitted discontinuity for one stratum.

    ``below_coeffs`` are the coefficients of ``(r - c)**p`` on the untreated
    side; ``above_coeffs`` the same on the treated side, so
    ``above_coeffs[0] - below_coeffs[0] == tau_hat``.
    """

    tau_hat: float
    below_coeffs: Tuple[float, ...]
    above_coeffs: Tuple[float, ...]
    n_below: int
    n_above: int
    residual_variance: float
    stratum: Stratum = ()

    @property
    def value_below(self):
        """Fitted untreated-side limit at the cutoff."""
        return self.below_coeffs[0]

    @property
    def value_above(self):
        return self.above_coeffs[0]

    def predict(self, running, cutoff, treated):
        """Fitted values at ``running`` given the treated indicator."""
        centered = np.asarray(running, dtype=float) - cutoff
        below = np.polynomial.polynomial.polyval(centered, self.below_coeffs)
        above = np.polynomial.polynomial.polyval(centered, self.above_coeffs)
        return np.where(treated, above, below)

    def to_dict(self):
        return {
            "stratum": stratum_label(self.stratum),
            "tau": self.tau_hat,
            "below_coeffs": list(self.below_coeffs),
            "above_coeffs": list(self.above_coeffs),
            "n_below": self.n_below,
            "n_above": self.n_above,
            "residual_variance": self.residual_variance,
        }


@dataclass(frozen=True)
class EffectTable:
    """Overall, per-group and per-(group, cell) RD fits.

    Strata whose fit failed are listed in ``missing`` with the error text.
    """

    overall: RdFit
    by_group: Mapping[int, RdFit]
    by_group_cell: Mapping[Tuple[int, str], RdFit]
    cells: Tuple[str, ...]
    missing: Mapping[Tuple[int, str], str] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.by_group) != set(GROUPS):
            raise EstimationError("EffectTable needs a fit for both groups")

    def tau(self, group: int, cell: Optional[str] = None) -> float:
        """Effect for a group or a (group, cell) stratum; NaN when missing."""
        if cell is None:
            return self.by_group[group].tau_hat
        fit = self.by_group_cell.get((group, cell))
        return np.nan if fit is None else fit.tau_hat


@dataclass(frozen=True)
class CompositionTable:
    """Cell shares per group, ``shares[(w, x)] = Pr(X = x | W = w)``."""

    shares: Mapping[Tuple[int, str], float]
    cells: Tuple[str, ...]
    estimation_sample: str = "below"

    def __post_init__(self):
        for w in GROUPS:
            vals = [self.shares.get((w, x), 0.0) for x in self.cells]
            if any(v < 0 or v > 1 for v in vals):
                raise EstimationError(f"shares for group {w} outside [0, 1]")
            if abs(sum(vals) - 1.0) > 1e-12:
                raise EstimationError(f"shares for group {w} sum to {sum(vals)!r}")

    def share(self, group: int, cell: str) -> float:
        return self.shares.get((group, cell), 0.0)

    def vector(self, group: int) -> np.ndarray:
        return np.array([self.share(group, x) for x in self.cells])

    def to_dict(self):
        return {
            "estimation_sample": self.estimation_sample,
            "shares": {
                str(w): {x: self.share(w, x) for x in self.cells} for w in GROUPS
            },
        }


@dataclass(frozen=True)
class GapEstimate:
    gamma0: float
    gamma1: float
    delta: float

    def to_dict(self):
        return {"gamma0": self.gamma0, "gamma1": self.gamma1, "delta": self.delta}


@dataclass(frozen=True)
class CellTerms:
    delta_x: float
    tau_ref_x: float
    pi_diff: float


@dataclass(frozen=True)
class DecompositionResult:
    """Split of the change in gap into within-cell and composition parts.

    ``kappa`` is None when ``delta`` is too close to zero for the ratio to
    mean anything.
    """

    reference: int
    delta: float
    per_cell: Mapping[str, CellTerms]
    within_component: float
    composition_component: float
    kappa: Optional[float]

    @property
    def kappa_defined(self) -> bool:
        return self.kappa is not None

    def to_dict(self):
        return {
            "reference": self.reference,
            "delta": self.delta,
            "within_component": self.within_component,
            "composition_component": self.composition_component,
            "kappa": self.kappa,
            "kappa_defined": self.kappa_defined,
            "per_cell": {
                x: {
                    "delta_x": t.delta_x,
                    "tau_ref_x": t.tau_ref_x,
                    "pi_diff": t.pi_diff,
                }
                for x, t in self.per_cell.items()
            },
        }


@dataclass(frozen=True)
class Sample:
    """Columnar view of a list of records; what the estimators work on."""

    outcome: np.ndarray
    group: np.ndarray
    cell: np.ndarray  # integer codes into ``cells``
    running: np.ndarray
    location: np.ndarray  # integer codes into ``locations``
    weight: np.ndarray
    cells: Tuple[str, ...]
    locations: Tuple[str, ...] = ()

    def __len__(self):
        return len(self.outcome)

    @classmethod
    def from_records(
        cls, records: Iterable[MicroRecord], cells: Optional[Sequence[str]] = None
    ) -> "Sample":
        records = list(records)
        if cells is None:
            cells = sorted({r.cell for r in records})
        cells = tuple(cells)
        cell_index = {x: i for i, x in enumerate(cells)}
        locations = tuple(sorted({r.location for r in records}))
        loc_index = {x: i for i, x in enumerate(locations)}
        try:
            cell_codes = [cell_index[r.cell] for r in records]
        except KeyError as exc:
            raise DataError(f"cell {exc.args[0]!r} not in alphabet {cells}") from None
        return cls(
            outcome=np.array([r.outcome for r in records], dtype=float),
            group=np.array([r.group for r in records], dtype=np.int64),
            cell=np.array(cell_codes, dtype=np.int64),
            running=np.array([r.running for r in records], dtype=np.int64),
            location=np.array([loc_index[r.location] for r in records], dtype=np.int64),
            weight=np.array([r.weight for r in records], dtype=float),
            cells=cells,
            locations=locations,
        )

    def to_records(self) -> List[MicroRecord]:
        return [
            MicroRecord(
                outcome=float(y),
                group=int(w),
                cell=self.cells[x],
                running=int(r),
                location=self.locations[l] if self.locations else str(l),
                weight=float(wt),
            )
            for y, w, x, r, l, wt in zip(
                self.outcome, self.group, self.cell, self.running,
                self.location, self.weight,
            )
        ]

    def take(self, index) -> "Sample":
        return Sample(
            outcome=self.outcome[index],
            group=self.group[index],
            cell=self.cell[index],
            running=self.running[index],
            location=self.location[index],
            weight=self.weight[index],
            cells=self.cells,
            locations=self.locations,
        )

    def with_outcome(self, outcome) -> "Sample":
        return Sample(
            outcome=np.asarray(outcome, dtype=float),
            group=self.group,
            cell=self.cell,
            running=self.running,
            location=self.location,
            weight=self.weight,
            cells=self.cells,
            locations=self.locations,
        )

    def with_weight(self, weight) -> "Sample":
        return Sample(
            outcome=self.outcome,
            group=self.group,
            cell=self.cell,
            running=self.running,
            location=self.location,
            weight=np.asarray(weight, dtype=float),
            cells=self.cells,
            locations=self.locations,
        )


RecordsLike = Union[Sample, Sequence[MicroRecord]]


def as_sample(records: RecordsLike, cells: Optional[Sequence[str]] = None) -> Sample:
    if isinstance(records, Sample):
        return records
    return Sample.from_records(records, cells=cells)


def stratum_mask(sample: Sample, stratum: Stratum) -> np.ndarray:
    mask = np.ones(len(sample), dtype=bool)
    if len(stratum) >= 1:
        mask &= sample.group == stratum[0]
    if len(stratum) == 2:
        mask &= sample.cell == sample.cells.index(stratum[1])
    return mask
