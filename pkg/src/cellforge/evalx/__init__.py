"""Evaluation: manifold metrics, plausibility tables, downstream utility."""

from cellforge.evalx.ablation import (
    DEFAULT_FRACTIONS,
    ablation_feedback_fraction,
    subsample_feedback,
)
from cellforge.evalx.downstream import DOWNSTREAM_KEYS, downstream_eval, macro_scores
from cellforge.evalx.manifold import (
    EmbeddingSet,
    coverage_metric,
    knn_radii,
    manifold_metrics,
    precision_metric,
    recall_metric,
)
from cellforge.evalx.plausibility import (
    PlausibilityTable,
    group_by_class,
    human_export_judge,
    oracle_judge,
    plausibility_table,
    reward_judge,
)
from cellforge.evalx.report import (
    ABLATION_HEADER,
    MetricsReport,
    load_metrics_json,
    plot_ablation,
    plot_plausibility,
    write_ablation_csv,
    write_metrics_json,
    write_plausibility_csv,
)

__all__ = [
    "DEFAULT_FRACTIONS",
    "ablation_feedback_fraction",
    "subsample_feedback",
    "DOWNSTREAM_KEYS",
    "downstream_eval",
    "macro_scores",
    "EmbeddingSet",
    "coverage_metric",
    "knn_radii",
    "manifold_metrics",
    "precision_metric",
    "recall_metric",
    "PlausibilityTable",
    "group_by_class",
    "human_export_judge",
    "oracle_judge",
    "plausibility_table",
    "reward_judge",
    "ABLATION_HEADER",
    "MetricsReport",
    "load_metrics_json",
    "plot_ablation",
    "plot_plausibility",
    "write_ablation_csv",
    "write_metrics_json",
    "write_plausibility_csv",
]
