"""The one-unambiguous-symbol model and its three-state scenario."""

from hmmvt.unambiguous.landscape import multistart_minima, partial_knowledge_minima
from hmmvt.unambiguous.model import (
    SpectralData,
    UnambiguousHmm,
    build_unambiguous,
    closed_form_series,
    effective_rank,
    exact_zeta,
    identifiability_jacobian,
    likelihood_rate_exact,
    spectral_data,
    log_t_weights,
    t_weights,
)
from hmmvt.unambiguous.quality import map_quality_ranking
from hmmvt.unambiguous.scenario import (
    REFERENCE,
    ScenarioParams,
    ScenarioStats,
    VtFixedPoint,
    f1_rate,
    fbeta_rate,
    finf_rate,
    ml_manifold_point,
    scenario_stats,
    vt_fixed_points,
    vt_iterate,
)
