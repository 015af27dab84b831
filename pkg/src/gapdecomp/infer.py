"""Percentile bootstrap for the whole estimation pipeline.

Each replicate redraws the sample (records, or whole locations when
clustering), then reruns composition, lattice fits and both
decompositions.  Replicate ``b`` draws from its own stream seeded by
``(seed, b)``, so results do not depend on how replicates are scheduled.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .decomp import KAPPA_THRESHOLD, analyze
from .model import (
    ConfigError,
    GapDecompError,
    InferenceError,
    RdSpec,
    RecordsLike,
    Sample,
    as_sample,
)

CLUSTER_MODES = (None, "location")


@dataclass(frozen=True)
class BootstrapSpec:
    replicates: int = 1000
    seed: int = 0
    cluster: Optional[str] = None
    ci_level: float = 0.95
    method: str = "percentile"

    def __post_init__(self):
        if self.replicates < 2:
            raise ConfigError("bootstrap needs at least 2 replicates")
        if not 0 < self.ci_level < 1:
            raise ConfigError("ci_level must be in (0, 1)")
        if self.cluster not in CLUSTER_MODES:
            raise ConfigError(f"cluster must be one of {CLUSTER_MODES}")
        if self.method != "percentile":
            raise ConfigError("only the percentile method is available")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class BootstrapResult:
    """Point estimates, replicate draws and percentile intervals.

    ``replicates[name]`` holds one value per replicate, NaN where the
    replicate failed (or, for kappa, where kappa was undefined).
    """

    spec: BootstrapSpec
    point: Dict[str, float]
    replicates: Dict[str, np.ndarray]
    ci: Dict[str, Tuple[float, float]]
    n_failed: int
    n_undefined: Dict[str, int]
    failures: Tuple[str, ...] = ()

    def to_dict(self, with_replicates: bool = False):
        out = {
            "method": self.spec.method,
            "replicates": self.spec.replicates,
            "seed": self.spec.seed,
            "cluster": self.spec.cluster,
            "ci_level": self.spec.ci_level,
            "n_failed": self.n_failed,
            "n_undefined": dict(self.n_undefined),
            "quantities": {
                name: {
                    "point": _clean(self.point[name]),
                    "ci_low": _clean(self.ci[name][0]),
                    "ci_high": _clean(self.ci[name][1]),
                }
                for name in self.point
            },
        }
        if with_replicates:
            out["draws"] = {k: [_clean(v) for v in arr] for k, arr in self.replicates.items()}
        return out


def _clean(v):
    v = float(v)
    return v if np.isfinite(v) else None


def percentile_interval(values, ci_level: float) -> Tuple[float, float]:
    """Order-statistic interval: lower and upper empirical quantiles."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return (np.nan, np.nan)
    alpha = (1.0 - ci_level) / 2.0
    lo = np.quantile(values, alpha, method="lower")
    hi = np.quantile(values, 1.0 - alpha, method="higher")
    return float(lo), float(hi)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _draw_index(sample: Sample, boot: BootstrapSpec, rng, clusters):
    n = len(sample)
    if clusters is None:
        return rng.integers(0, n, size=n)
    picks = rng.integers(0, len(clusters), size=len(clusters))
    return np.concatenate([clusters[i] for i in picks])


def bootstrap(
    records: RecordsLike,
    rd_spec: RdSpec,
    comp_rule: str = "below",
    boot: BootstrapSpec = BootstrapSpec(),
    kappa_threshold: float = KAPPA_THRESHOLD,
    n_jobs: int = 1,
) -> BootstrapResult:
    """Bootstrap every pipeline scalar (see ``Analysis.scalars``)."""
    sample = as_sample(records)
    point = analyze(sample, rd_spec, comp_rule, kappa_threshold).scalars()
    clusters = None
    if boot.cluster == "location":
        codes = np.unique(sample.location)
        if codes.size < 2:
            raise InferenceError("cluster bootstrap needs at least 2 locations")
        clusters = [np.flatnonzero(sample.location == c) for c in codes]

    def one(b):
        rng = replicate_rng(boot.seed, b)
        idx = _draw_index(sample, boot, rng, clusters)
        try:
            return analyze(sample.take(idx), rd_spec, comp_rule, kappa_threshold).scalars()
        except GapDecompError as exc:
            return str(exc)

    if n_jobs == 1:
        outcomes = [one(b) for b in range(boot.replicates)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(one, range(boot.replicates)))

    names = list(point)
    draws = {k: np.full(boot.replicates, np.nan) for k in names}
    failures: List[str] = []
    for b, res in enumerate(outcomes):
        if isinstance(res, str):
            failures.append(f"replicate {b}: {res}")
            continue
        for k in names:
            draws[k][b] = res.get(k, np.nan)
    n_ok = boot.replicates - len(failures)
    if n_ok < 2:
        raise InferenceError(
            f"only {n_ok} bootstrap replicates succeeded; first failure: "
            f"{failures[0] if failures else 'n/a'}"
        )
    undefined = {
        k: int(n_ok - np.isfinite(draws[k]).sum()) for k in names if k.endswith(".kappa")
    }
    ci = {k: percentile_interval(draws[k], boot.ci_level) for k in names}
    return BootstrapResult(
        spec=boot,
        point=point,
        replicates=draws,
        ci=ci,
        n_failed=len(failures),
        n_undefined=undefined,
        failures=tuple(failures),
    )
