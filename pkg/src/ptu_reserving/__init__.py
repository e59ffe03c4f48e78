"""Chain-ladder reserving by projection-to-ultimate, from triangles to individual claims."""

from .claims import ClaimRecord, Portfolio, aggregate, cohort, rbns_ptu, true_oll
from .fnn import FnnModel, NormStats, TrainConfig, featurize, fit_norm_stats, train
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    build_learning_set,
    evaluate,
    fit_step,
    run_pipeline,
    run_pipeline_oracle_targets,
)
from .simulate import SimConfig, informative_scenario, simulate
from .triangle import (
    DevFactors,
    MackEstimates,
    PtuFactors,
    Triangle,
    cl_forecast,
    cl_reserves,
    estimate_cl_factors,
    estimate_ptu,
    mack_uncertainty,
    verify_grossing_up,
)

__version__ = "0.1.0"
