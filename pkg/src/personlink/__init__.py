"""Cross-document coreference and knowledgebase linking for person mentions
in dated historical text.

Pipeline: mark and window mention contexts, embed them, cluster within
publication dates (average-linkage, cosine), mean-pool cluster prototypes,
then resolve each prototype against an inner-product index of entity
templates with a no-match threshold, a second-neighbor margin, and
popularity re-ranking of near-ties.
"""

from .config import RunConfig
from .coref import (
    ClusterAssignment,
    ClusteringMetrics,
    adjusted_rand_index,
    agglomerative_cluster,
    clustering_metrics,
    coref_partition,
    pairwise_prf,
)
from .corpus import (
    MarkedContext,
    MarkerConfig,
    MentionRecord,
    NOT_IN_KB,
    load_mentions,
    mark_mention,
    partition_by_date,
    truncate_to_window,
)
from .disambig import (
    DisambigConfig,
    Resolution,
    accuracy,
    resolve,
    resolve_assignments,
    sweep_no_match_threshold,
)
from .encode import EncoderHandle, embed_batch, hash_embed, hash_stub_handle
from .errors import (
    ConfigError,
    ParseError,
    PersonlinkError,
    RecordValidationError,
    TransportError,
    WireProtocolError,
)
from .kb import (
    EntityTemplate,
    KbIndex,
    build_index,
    knn_search,
    load_index,
    prune_kb,
    render_template,
    save_index,
)
from .mine import (
    LinkRecord,
    PairExample,
    mine_coref_pairs,
    mine_disambig_pairs,
    split_by_entity,
)
from .train import LinearHashEncoder, online_contrastive_loss, toy_train_step

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment",
    "ClusteringMetrics",
    "ConfigError",
    "DisambigConfig",
    "EncoderHandle",
    "EntityTemplate",
    "KbIndex",
    "LinearHashEncoder",
    "LinkRecord",
    "MarkedContext",
    "MarkerConfig",
    "MentionRecord",
    "NOT_IN_KB",
    "PairExample",
    "ParseError",
    "PersonlinkError",
    "RecordValidationError",
    "Resolution",
    "RunConfig",
    "TransportError",
    "WireProtocolError",
    "accuracy",
    "adjusted_rand_index",
    "agglomerative_cluster",
    "build_index",
    "clustering_metrics",
    "coref_partition",
    "embed_batch",
    "hash_embed",
    "hash_stub_handle",
    "knn_search",
    "load_index",
    "load_mentions",
    "mark_mention",
    "mine_coref_pairs",
    "mine_disambig_pairs",
    "online_contrastive_loss",
    "pairwise_prf",
    "partition_by_date",
    "prune_kb",
    "render_template",
    "resolve",
    "resolve_assignments",
    "save_index",
    "split_by_entity",
    "sweep_no_match_threshold",
    "toy_train_step",
    "truncate_to_window",
]
