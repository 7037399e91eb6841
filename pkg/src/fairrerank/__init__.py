"""fairrerank: two-sided fairness-aware re-ranking for top-K recommendation."""

__version__ = "0.1.0"

from .dataio import (  # noqa: F401
    Interaction,
    InteractionDataset,
    RecordFormat,
    SplitDataset,
    dataset_stats,
    kcore_filter,
    load_interactions,
    load_split,
    save_split,
    sparsity,
    split,
)
from .segmentation import (  # noqa: F401
    GroupAssignment,
    assign_groups,
    load_groups,
    save_groups,
    segment_items_popularity,
    segment_users_activity,
    segment_users_mainstream,
)
from .baserank import (  # noqa: F401
    ScoreMatrix,
    export_scores,
    import_scores,
    itemknn_scores,
    mostpop_scores,
    random_scores,
)
from .rerank import (  # noqa: F401
    GainTables,
    RankedLists,
    RerankConfig,
    adjusted_scores,
    build_gain_tables,
    consumer_gain,
    greedy_rerank,
    lp_rerank,
    objective_value,
    producer_gain,
)
from .metrics import (  # noqa: F401
    EvaluationReport,
    consumer_deviation,
    coverage,
    delta_pct,
    evaluate,
    exposure_and_dpf,
    mcpf,
    novelty,
    per_user_ndcg,
    producer_deviation,
)
