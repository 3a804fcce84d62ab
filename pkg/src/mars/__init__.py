"""Margin-aware budgeted preference augmentation and curvature analysis
for Bradley-Terry reward models."""

from .augmentation import Augmenter, AugmenterSpec, VariantBatch, augment, featurize
from .bt_core import (
    Dataset,
    PreferenceTuple,
    RewardParams,
    TextPayload,
    TrainConfig,
    bt_prob,
    grad,
    margin,
    nll_loss,
    per_sample_hessian,
    preference_tuple,
    reward_params,
    sigmoid,
    swap_sides,
    train,
    zero_params,
)
from .fisher_lab import (
    CurvatureReport,
    FisherMatrix,
    MarginBin,
    MixtureSpec,
    bin_by_margin,
    certify_beta,
    curvature_weight,
    empirical_fisher,
    make_assumption_dataset,
    min_eigenvalue,
    mixture_spec,
    verify_theorem,
)
from .mars_engine import (
    AllocationWeights,
    AugmentationPlan,
    EpochReport,
    MarsConfig,
    allocate,
    build_plan,
    round_budget,
    run_mars,
    run_uniform_baseline,
    score_margins,
    split_counts,
    synthesize_pairs,
)
from .metrics import EvalSummary, evaluate, margin_snr, pairwise_accuracy

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
