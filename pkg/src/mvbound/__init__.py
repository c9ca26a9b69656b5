"""Error bounds for majority-vote classifiers over partially labeled data,
and the self-learning procedures driven by them."""

from .cbound import (
    BoundReport,
    apply_mislabeling,
    cbil,
    cbil_report,
    cbound,
    cbound_report,
    check_mislabel_matrix,
    correction_terms,
    estimate_mislabeling,
    label_count_deviation,
    margin_moments,
    pac_bayes_cbound,
    pac_bayes_report,
    per_example_true_risk_bound,
)
from .core import (
    POSTERIOR_MODES,
    InapplicableBoundError,
    LabeledSet,
    UndefinedClassError,
    UnlabeledSet,
    as_thresholds,
    check_prob_matrix,
    margin_matrix,
    margins,
    posterior_source,
    predict_bayes,
)
from .data_io import (
    METHODS,
    REFERENCE_SCORES,
    DataFormatError,
    Dataset,
    ExperimentReport,
    MethodSummary,
    TrialSpec,
    experiment_to_dict,
    load_dataset,
    load_matrix_csv,
    load_votes_csv,
    mann_whitney,
    run_experiment,
    split_trial,
    write_experiment_csv,
)
from .ensemble import (
    Forest,
    ForestConfig,
    Tree,
    forest_from_text,
    forest_to_text,
    forest_votes,
    load_forest,
    save_forest,
    train_forest,
)
from .self_learning import (
    POLICIES,
    IterationRecord,
    SelfLearnConfig,
    SelfLearnResult,
    conditional_bayes_error,
    find_theta_star,
    history_to_csv,
    run_self_learning,
    select_pseudo,
    threshold_objective,
)
from .trans_bounds import (
    TightnessRecord,
    VoteLevelProfile,
    bound_matrix,
    class_masses,
    conditional_bound,
    confusion_norm_bound,
    error_rate_bound,
    exact_joint_conditional_risk,
    gibbs_conditional_risk,
    joint_error_rate,
    lp_oracle_bound,
    matrix_spectral_norm,
    tightness_gap,
    vote_level_profile,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "DataFormatError",
    "Dataset",
    "ExperimentReport",
    "Forest",
    "ForestConfig",
    "InapplicableBoundError",
    "IterationRecord",
    "LabeledSet",
    "METHODS",
    "MethodSummary",
    "POLICIES",
    "POSTERIOR_MODES",
    "REFERENCE_SCORES",
    "SelfLearnConfig",
    "SelfLearnResult",
    "TightnessRecord",
    "Tree",
    "TrialSpec",
    "UndefinedClassError",
    "UnlabeledSet",
    "VoteLevelProfile",
    "apply_mislabeling",
    "as_thresholds",
    "bound_matrix",
    "cbil",
    "cbil_report",
    "cbound",
    "cbound_report",
    "check_mislabel_matrix",
    "check_prob_matrix",
    "class_masses",
    "conditional_bayes_error",
    "conditional_bound",
    "confusion_norm_bound",
    "correction_terms",
    "error_rate_bound",
    "estimate_mislabeling",
    "exact_joint_conditional_risk",
    "experiment_to_dict",
    "find_theta_star",
    "forest_from_text",
    "forest_to_text",
    "forest_votes",
    "gibbs_conditional_risk",
    "history_to_csv",
    "joint_error_rate",
    "label_count_deviation",
    "load_dataset",
    "load_forest",
    "load_matrix_csv",
    "load_votes_csv",
    "lp_oracle_bound",
    "mann_whitney",
    "margin_matrix",
    "margin_moments",
    "margins",
    "matrix_spectral_norm",
    "pac_bayes_cbound",
    "pac_bayes_report",
    "per_example_true_risk_bound",
    "posterior_source",
    "predict_bayes",
    "run_experiment",
    "run_self_learning",
    "save_forest",
    "select_pseudo",
    "split_trial",
    "threshold_objective",
    "tightness_gap",
    "train_forest",
    "vote_level_profile",
    "write_experiment_csv",
]
