"""Estimate changes in disparity gaps and split them into within-cell and
composition parts, with a sharp RD estimator as the effect backend."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    CompositionTable,
    DecompositionResult,
    EffectTable,
    GapEstimate,
    MicroRecord,
    RdFit,
    RdSpec,
    Sample,
)
from .rd import RDRegressor, build_design, fit_rd, fit_rd_lattice  # noqa: E402
from .decomp import (  # noqa: E402
    DisparityDecomposer,
    analyze,
    change_in_gap,
    composition_covariance,
    decompose,
    decompose_both_references,
    estimate_composition,
    gaps_from_fits,
    kappa,
)
from .infer import BootstrapSpec, bootstrap  # noqa: E402
from .ingest import SchemaConfig, load_microdata, summarize, write_records  # noqa: E402
from .synth import DgpSpec, load_dgp, make_population, population_truth  # noqa: E402
