"""Load survey microdata from CSV and map it onto MicroRecord."""
from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .model import (
    GROUPS,
    ConfigError,
    MicroRecord,
    ParseError,
    RdSpec,
    SchemaError,
)

EXCLUDE = "exclude"
MISSING_POLICIES = ("drop", "error")
CANONICAL_COLUMNS = ("outcome", "group", "cell", "running", "location", "weight")


@dataclass(frozen=True)
class SchemaConfig:
    """How raw columns and labels map onto records.

    ``group_coding`` maps raw group labels to 0, 1 or ``"exclude"``; the key
    ``"*"`` sets the fate of unlisted labels.  ``cell_grouping`` maps raw
    cell labels to analysis cells; empty means identity.  ``missing_policy``
    decides whether empty or unmappable values drop the row (counted) or
    raise.
    """

    outcome: str = "outcome"
    group: str = "group"
    cell: str = "cell"
    running: str = "running"
    location: str = "location"
    weight: Optional[str] = "weight"
    group_coding: Mapping[str, Union[int, str]] = field(
        default_factory=lambda: {"0": 0, "1": 1}
    )
    cell_grouping: Mapping[str, str] = field(default_factory=dict)
    cell_alphabet: Optional[Tuple[str, ...]] = None
    missing_policy: str = "drop"

    def __post_init__(self):
        coded = {self._code(v) for v in self.group_coding.values()}
        if not {0, 1} <= coded:
            raise ConfigError("group_coding must map at least one label to 0 and one to 1")
        if self.missing_policy not in MISSING_POLICIES:
            raise ConfigError(f"missing_policy must be one of {MISSING_POLICIES}")

    @staticmethod
    def _code(value):
        if isinstance(value, str) and value.strip().lower() == EXCLUDE:
            return EXCLUDE
        try:
            code = int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"group code {value!r} must be 0, 1 or 'exclude'") from None
        if code not in GROUPS:
            raise ConfigError(f"group code {value!r} must be 0, 1 or 'exclude'")
        return code

    def code_group(self, label: str):
        """0, 1, ``"exclude"`` or None when the label is unknown."""
        if label in self.group_coding:
            return self._code(self.group_coding[label])
        if "*" in self.group_coding:
            return self._code(self.group_coding["*"])
        return None

    def map_cell(self, label: str):
        if not self.cell_grouping:
            return label
        return self.cell_grouping.get(label)

    def columns(self) -> Dict[str, Optional[str]]:
        return {
            "outcome": self.outcome,
            "group": self.group,
            "cell": self.cell,
            "running": self.running,
            "location": self.location,
            "weight": self.weight,
        }


def canonical_schema(**overrides) -> SchemaConfig:
    """Schema for files written by :func:`write_records`."""
    return SchemaConfig(**overrides)


@dataclass
class IngestReport:
    n_rows: int = 0
    n_records: int = 0
    dropped_window: int = 0
    dropped_excluded: int = 0
    dropped_missing: int = 0
    counts: Dict[Tuple[int, str, str], int] = field(default_factory=dict)
    weight_sums: Dict[Tuple[int, str, str], float] = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return self.dropped_window + self.dropped_excluded + self.dropped_missing

    def to_dict(self):
        keys = sorted(set(self.counts) | set(self.weight_sums))
        return {
            "n_rows": self.n_rows,
            "n_records": self.n_records,
            "dropped": self.dropped,
            "dropped_window": self.dropped_window,
            "dropped_excluded": self.dropped_excluded,
            "dropped_missing": self.dropped_missing,
            "strata": [
                {
                    "group": w,
                    "cell": x,
                    "side": side,
                    "count": self.counts.get((w, x, side), 0),
                    "weight_sum": self.weight_sums.get((w, x, side), 0.0),
                }
                for (w, x, side) in keys
            ],
        }


def summarize(records: Iterable[MicroRecord], spec: Optional[RdSpec] = None) -> IngestReport:
    """Counts and weight sums per (group, cell, side of cutoff)."""
    spec = spec or RdSpec()
    counts: Counter = Counter()
    wsum: Dict[Tuple[int, str, str], float] = defaultdict(float)
    n = 0
    for r in records:
        side = "above" if spec.treated(r.running) else "below"
        key = (r.group, r.cell, side)
        counts[key] += 1
        wsum[key] += r.weight
        n += 1
    return IngestReport(
        n_rows=n,
        n_records=n,
        counts=dict(sorted(counts.items())),
        weight_sums={k: wsum[k] for k in sorted(wsum)},
    )


def _parse_float(text, what, line):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not numeric", line) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} {text!r} is not finite", line)
    return value


def _parse_int(text, what, line):
    value = _parse_float(text, what, line)
    if value != int(value):
        raise ParseError(f"{what} {text!r} is not a whole number", line)
    return int(value)


def load_microdata(
    path: Union[str, Path], schema: SchemaConfig, spec: RdSpec
) -> Tuple[List[MicroRecord], IngestReport]:
    """Read a CSV file into records, in file order.

    Rows outside the window, coded ``"exclude"`` or (under the drop policy)
    with empty or unmappable fields are counted in the report and skipped.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    report = IngestReport()
    records: List[MicroRecord] = []
    strict = schema.missing_policy == "error"
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for role, col in schema.columns().items():
            if col is None:
                continue
            if col not in header:
                if role == "weight" and col == "weight":
                    continue  # optional canonical column
                raise SchemaError(f"missing column {col!r} (for {role}) in {path}")
        has_weight = schema.weight is not None and schema.weight in header
        for line, row in enumerate(reader, start=2):
            report.n_rows += 1
            raw_group = (row.get(schema.group) or "").strip()
            group = schema.code_group(raw_group)
            if group is None:
                if strict:
                    raise ParseError(f"group label {raw_group!r} has no coding", line)
                report.dropped_missing += 1
                continue
            if group == EXCLUDE:
                report.dropped_excluded += 1
                continue
            raw_cell = (row.get(schema.cell) or "").strip()
            cell = schema.map_cell(raw_cell)
            if cell is not None and schema.cell_alphabet and cell not in schema.cell_alphabet:
                cell = None
            y_text = (row.get(schema.outcome) or "").strip()
            r_text = (row.get(schema.running) or "").strip()
            loc = (row.get(schema.location) or "").strip()
            w_text = (row.get(schema.weight) or "").strip() if has_weight else "1"
            if cell is None or not raw_cell or not y_text or not r_text or not loc or not w_text:
                if strict:
                    what = "cell label" if cell is None else "empty field"
                    raise ParseError(f"unmappable or missing value ({what})", line)
                report.dropped_missing += 1
                continue
            outcome = _parse_float(y_text, "outcome", line)
            running = _parse_int(r_text, "running", line)
            weight = _parse_float(w_text, "weight", line)
            if weight <= 0:
                raise ParseError(f"weight {w_text!r} must be positive", line)
            if not spec.in_window(running):
                report.dropped_window += 1
                continue
            records.append(MicroRecord(outcome, group, cell, running, loc, weight))
    summary = summarize(records, spec)
    report.n_records = len(records)
    report.counts = summary.counts
    report.weight_sums = summary.weight_sums
    return records, report


def write_records(records: Sequence[MicroRecord], path: Union[str, Path]) -> None:
    """Write records in the canonical column layout (floats via ``repr``)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CANONICAL_COLUMNS)
        for r in records:
            writer.writerow(
                [repr(float(r.outcome)), r.group, r.cell, r.running, r.location,
                 repr(float(r.weight))]
            )
