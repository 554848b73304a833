from .crossval import (
    BucketRow,
    CVResult,
    Fold,
    FoldSplit,
    LeakageError,
    buckets_csv,
    cross_validate,
    length_buckets,
    make_folds,
)
from .metrics import (
    MetricReport,
    QueryMetrics,
    aggregate,
    dcg,
    eval_ranking,
    evaluate_run,
    evaluate_scored_lists,
    metric_names,
    rank_order,
)
from .stats import auc, paired_test
