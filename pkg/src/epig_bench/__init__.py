"""Information-based active learning: BALD, BatchBALD, EPIG and EPIG-BALD.

The library scores pool candidates from Monte-Carlo predictive samples,
checks the information identities against an exact finite-hypothesis
model, and simulates active learning with out-of-distribution junk in the
pool.
"""

from .core import (
    AcquisitionResult,
    DivergenceError,
    ExperimentPools,
    LabeledExample,
    NonFiniteError,
    NormalizationError,
    PredictiveSamples,
    RoundRecord,
    RunLog,
    ShapeError,
    slice_candidates,
    validate_predictive,
)
from .kernels import (
    JointPredictive,
    bald_scores,
    batchbald_greedy,
    batchbald_score,
    entropy,
    expected_conditional_entropy,
    greedy_select,
    joint_entropy,
    joint_predictive,
    marginal_entropy,
    softmax_select,
    topk_select,
)
from .epig import (
    condition_posterior,
    epig_bald_scores,
    epig_entropy_scores,
    epig_greedy_batch,
    eval_entropy_gap,
    exact_epig_all_forms,
    sample_pseudo_label_sets,
)
from .config import ConfigError, ExperimentConfig, parse_config, parse_config_text, serialize

__version__ = "0.1.0"

__all__ = [
    "AcquisitionResult",
    "DivergenceError",
    "ExperimentPools",
    "LabeledExample",
    "NonFiniteError",
    "NormalizationError",
    "PredictiveSamples",
    "RoundRecord",
    "RunLog",
    "ShapeError",
    "slice_candidates",
    "validate_predictive",
    "JointPredictive",
    "bald_scores",
    "batchbald_greedy",
    "batchbald_score",
    "entropy",
    "expected_conditional_entropy",
    "greedy_select",
    "joint_entropy",
    "joint_predictive",
    "marginal_entropy",
    "softmax_select",
    "topk_select",
    "condition_posterior",
    "epig_bald_scores",
    "epig_entropy_scores",
    "epig_greedy_batch",
    "eval_entropy_gap",
    "exact_epig_all_forms",
    "sample_pseudo_label_sets",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "serialize",
]
