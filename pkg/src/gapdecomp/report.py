"""JSON report assembly for one outcome x comparison run."""
from __future__ import annotations

import csv
import json
import math
from typing import Dict, List, Mapping, Optional

import numpy as np

from .decomp import Analysis, composition_covariance, reference_sensitivity
from .infer import BootstrapResult
from .model import GROUPS, RdSpec, Sample

SCHEMA_VERSION = 1
INFERENCE_NOTE = (
    "percentile bootstrap computed by this tool; not a reproduction of any "
    "published standard errors"
)


def clean(obj):
    """Recursively replace non-finite floats by None and numpy scalars by Python ones."""
    if isinstance(obj, Mapping):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report) -> str:
    return json.dumps(clean(report), indent=2, allow_nan=False) + "\n"


def plot_series(sample: Sample, spec: RdSpec, analysis: Analysis, group_names) -> Dict:
    """Per-age weighted means and fitted values by group."""
    ages = np.arange(spec.window[0], spec.window[1] + 1)
    treated = spec.treated(ages)
    weight = sample.weight if spec.weighted else np.ones(len(sample))
    out = {"cutoff": spec.cutoff, "age": ages.tolist(), "groups": {}}
    for w in GROUPS:
        sel = sample.group == w
        means, counts = [], []
        for a in ages:
            m = sel & (sample.running == a)
            counts.append(int(m.sum()))
            means.append(
                float(np.average(sample.outcome[m], weights=weight[m])) if m.any() else None
            )
        fit = analysis.effects.by_group[w]
        out["groups"][group_names[w]] = {
            "group": w,
            "mean": means,
            "count": counts,
            "fitted": fit.predict(ages, spec.cutoff, treated).tolist(),
        }
    return out


def analysis_block(
    *,
    outcome: str,
    group_names: Mapping[int, str],
    sample: Sample,
    spec: RdSpec,
    analysis: Analysis,
    ingest: Optional[dict] = None,
    boot: Optional[BootstrapResult] = None,
) -> Dict:
    eff = analysis.effects
    ci = boot.ci if boot is not None else {}

    def with_ci(name, value):
        lo, hi = ci.get(name, (None, None))
        return {"estimate": value, "ci_low": lo, "ci_high": hi}

    cells = []
    for w in GROUPS:
        for x in eff.cells:
            fit = eff.by_group_cell.get((w, x))
            entry = {"group": w, "group_name": group_names[w], "cell": x}
            if fit is None:
                entry.update({"tau": None, "missing": eff.missing.get((w, x))})
            else:
                entry.update(with_ci(f"tau[{w},{x}]", fit.tau_hat))
                entry["fit"] = fit.to_dict()
            cells.append(entry)

    pair = analysis.decompositions
    targeting = {}
    for ref in (1, 0):
        products, total = composition_covariance(eff, analysis.composition, ref)
        targeting[f"reference_{ref}"] = {"cell_products": products, "sum": total}

    pooled = {w: eff.tau(w) for w in GROUPS}
    plug = {w: analysis.plug_in_effect(w) for w in GROUPS}
    decomposition = {}
    for res in pair:
        block = res.to_dict()
        pre = f"ref{res.reference}"
        block["ci"] = {
            k: {"ci_low": ci.get(f"{pre}.{k}", (None, None))[0],
                "ci_high": ci.get(f"{pre}.{k}", (None, None))[1]}
            for k in ("within", "composition", "kappa")
        }
        decomposition[f"reference_{res.reference}"] = block

    return {
        "outcome": outcome,
        "baseline": group_names[0],
        "comparison": group_names[1],
        "group_coding": {"0": group_names[0], "1": group_names[1]},
        "ingest": ingest,
        "composition": analysis.composition.to_dict(),
        "effects": {
            "overall": {**with_ci("tau", eff.overall.tau_hat), "fit": eff.overall.to_dict()},
            "by_group": {
                str(w): {**with_ci(f"tau[{w}]", pooled[w]), "group_name": group_names[w],
                         "fit": eff.by_group[w].to_dict()}
                for w in GROUPS
            },
            "by_group_cell": cells,
            "missing_cells": [f"{w},{x}" for (w, x) in sorted(eff.missing)],
        },
        "gaps": {
            "gamma0": with_ci("gamma0", analysis.gaps.gamma0),
            "gamma1": with_ci("gamma1", analysis.gaps.gamma1),
            "delta_from_gaps": analysis.gaps.delta,
        },
        "delta": {
            "pooled": {**with_ci("delta_pooled", analysis.pooled_delta),
                       "definition": "tau[1] - tau[0] from the per-group fits"},
            "plug_in": {**with_ci("delta", analysis.plug_in_delta),
                        "definition": "sum_x tau[1,x] pi_1(x) - tau[0,x] pi_0(x)"},
            "discrepancy": analysis.pooled_delta - analysis.plug_in_delta,
            "pooled_tau": {str(w): pooled[w] for w in GROUPS},
            "plug_in_tau": {str(w): plug[w] for w in GROUPS},
        },
        "decomposition": decomposition,
        "reference_sensitivity": reference_sensitivity(pair),
        "targeting": targeting,
        "inference": None if boot is None else {**boot.to_dict(), "note": INFERENCE_NOTE},
        "plot_series": plot_series(sample, spec, analysis, group_names),
    }


def cell_rows(block: Dict) -> List[Dict]:
    """Flat per-cell rows for the optional CSV summary."""
    rows = []
    shares = block["composition"]["shares"]
    r1 = block["decomposition"]["reference_1"]["per_cell"]
    for entry in block["effects"]["by_group_cell"]:
        x = entry["cell"]
        rows.append({
            "outcome": block["outcome"],
            "comparison": block["comparison"],
            "group": entry["group_name"],
            "cell": x,
            "tau": entry.get("estimate"),
            "ci_low": entry.get("ci_low"),
            "ci_high": entry.get("ci_high"),
            "share": shares[str(entry["group"])][x],
            "delta_x": r1[x]["delta_x"],
            "pi_diff": r1[x]["pi_diff"],
        })
    return rows


def write_cells_csv(blocks, path) -> None:
    rows = [row for b in blocks for row in cell_rows(b)]
    fields = ["outcome", "comparison", "group", "cell", "tau", "ci_low", "ci_high",
              "share", "delta_x", "pi_diff"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
