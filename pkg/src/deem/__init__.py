"""Date-partitioned ensemble pseudo-labelling with branch-routed inference."""
from .dataset import (
    DateGroup,
    Dataset,
    Sample,
    SyntheticConfig,
    derive_date_set,
    format_sample_name,
    generate_synthetic,
    load_dataset,
    parse_sample_name,
    partition_by_date,
    reserve_validation,
    save_dataset,
)
from .estimator import DEEMClassifier
from .experts import (
    Ensemble,
    ExpertSpec,
    GaussianNBExpert,
    KNNExpert,
    LogisticRegressionExpert,
    NearestCentroidExpert,
    RandomProjectionCentroidExpert,
    default_specs,
    top_labels,
    train_ensemble,
    train_expert,
)
from .progressive import RunConfig, direct_vote_baseline, run_round, run_to_completion
from .pseudolabel import (
    PseudoLabelBatch,
    assign_pseudo_labels,
    cosine_similarity,
    similarity_confirm,
    top2_consensus,
    topk_neighbors,
    unanimous_vote,
)
from .router import BranchedModel, build_final_model, evaluate, infer, load_model, save_model

__version__ = "0.1.0"
