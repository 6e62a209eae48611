"""Similarity-discovery workbench.

Propose likely-similar (query, candidate) pairs with an ensemble of
similarity models, collect expert votes on just those suspects, estimate
how rare positives are in the full pair universe, and evaluate models on
the resolved labels with metrics that hold up under discovery bias.
"""

from .annotation import (
    GroundTruth,
    PEstimate,
    Vote,
    chebyshev_budget,
    chebyshev_error_bound,
    estimate_p,
    lower_bound_p,
    make_vote,
    read_labels,
    read_vote_log,
    record_vote,
    resolve_labels,
    resolved_rows,
    sample_annotation_pairs,
    write_labels,
)
from .corpus import (
    Corpus,
    EmbeddingModel,
    RankEntry,
    RankList,
    ScoreListModel,
    identity_ground_truth,
    load_corpus,
    load_embeddings,
    load_model,
    load_scores,
    rank_candidates,
    write_corpus,
    write_embeddings,
    write_scores,
)
from .discovery import (
    CostReport,
    DuplicationStats,
    PerModelSuspects,
    Proposal,
    SuspectPair,
    SuspectSet,
    build_suspects_per_model,
    cost_report,
    duplication_stats,
    overlap_matrix,
    read_suspects,
    union_dedupe,
    write_suspects,
)
from .errors import (
    CorpusFormatError,
    EdsError,
    EvaluationError,
    UnknownItemError,
    ValidationError,
    VoteError,
)
from .metrics import (
    ANNOTATED,
    MetricReport,
    ModelRanks,
    QueryEvalSet,
    SampledNegativeConfig,
    build_eval_sets,
    evaluate_model,
    hr_at_k,
    mrr_at_k,
    pr_auc_macro,
    pr_auc_micro,
    pr_auc_query,
    roc_auc_macro,
    roc_auc_micro,
    roc_auc_query,
    sample_negatives,
)
from .robustness import (
    LooSubset,
    RobustnessReport,
    leave_one_out_subsets,
    loo_report,
    permutation_p_value,
    spearman,
)
from .service import AnnotationService, ProgressSnapshot, VoteStore, create_app

__version__ = "0.1.0"
