"""Multi-objective search over block substitutions."""

from .ehvi import ehvi
from .gp import GPError, GPModel, gp_fit, gp_predict
from .mobo import (
    BRUTE_FORCE_LIMIT,
    BruteForceResult,
    SearchExhausted,
    SearchResult,
    SearchSetup,
    SearchSpaceTooLarge,
    archive_json,
    brute_force_pareto,
    candidate_pool,
    common_reference,
    decode,
    encode,
    evaluate,
    front_hypervolume,
    reference_point,
    latin_hypercube,
    make_setup,
    mobo_run,
    propose,
    run_log_csv,
    space_size,
)
from .pareto import (
    Observation,
    ParetoArchive,
    dominates,
    hypervolume_2d,
    knee_select,
    least_latency_select,
    nondominated,
    pareto_update,
)

__all__ = [
    "BRUTE_FORCE_LIMIT",
    "BruteForceResult",
    "GPError",
    "GPModel",
    "Observation",
    "ParetoArchive",
    "SearchExhausted",
    "SearchResult",
    "SearchSetup",
    "SearchSpaceTooLarge",
    "archive_json",
    "brute_force_pareto",
    "candidate_pool",
    "common_reference",
    "decode",
    "dominates",
    "ehvi",
    "encode",
    "evaluate",
    "front_hypervolume",
    "gp_fit",
    "gp_predict",
    "hypervolume_2d",
    "knee_select",
    "latin_hypercube",
    "least_latency_select",
    "make_setup",
    "mobo_run",
    "nondominated",
    "pareto_update",
    "propose",
    "reference_point",
    "run_log_csv",
    "space_size",
]
