"""Individualized treatment rules from multi-treatment study data."""

from .core import (
    DatasetError,
    FeatureMatrix,
    PdxDataset,
    ResponseRecord,
    TreatmentId,
    assemble_response_matrix,
    validate_dataset,
)
from .outcomes import (
    TrajectoryError,
    TtdResult,
    VolumeTrajectory,
    compute_bar,
    compute_ttd,
    tumor_volume,
)
from .screening import (
    GeneFeatureSet,
    ScreeningCriteria,
    ScreeningError,
    dcov,
    filter_features,
    filter_treatments,
    rank_genes,
    select_top,
)
from .tree import (
    CenteredRewards,
    Dendrogram,
    TreatmentGrouping,
    TreeError,
    build_tree,
    center_with_template,
    cut_tree,
    group_rewards,
    standardize_and_center,
)
from .learners import (
    DecisionFunction,
    Forest,
    ForestParams,
    LearnerError,
    LinearModel,
    fit_lasso,
    fit_random_forest,
    fit_weighted_classifier,
    lasso_lambda_max,
    median_bandwidth,
    smooth_outcomes,
    weighted_hinge_objective,
)
from .itr import (
    NULL_GROUP,
    FitError,
    FlatItr,
    LearnerSpec,
    NodeRule,
    TreeItr,
    fit_off_the_shelf,
    fit_tree_owl,
    fit_tree_qlearning,
)
from .evaluation import (
    MethodSpec,
    NoConcordantMiceError,
    TuningGrid,
    ValueReport,
    cross_validate,
    estimate_value,
    rule_recommender,
    summarize_values,
    tune,
)
from .superlearner import (
    SAConfig,
    SuperLearner,
    SuperLearnerError,
    fit_superlearner,
    latent_score,
)
from .synthetic import (
    MeanFunction,
    SyntheticError,
    SyntheticOracle,
    const_mean,
    generate,
    linear_mean,
    make_grouped_oracle,
    oracle_optimal_value,
    step_mean,
)
from .autoencoder import (
    AutoencoderError,
    Encoder,
    TrainConfig,
    encode,
    pca_error,
    reconstruction_error,
    train_autoencoder,
)

__version__ = "0.1.0"
