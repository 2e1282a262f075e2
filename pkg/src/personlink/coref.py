"""Within-date coreference: average-linkage agglomerative clustering + metrics.

Clustering is bottom-up over cosine distances on normalized embeddings:
repeatedly merge the pair of clusters with the smallest average pairwise
distance until that minimum exceeds the threshold. Partitions are small
(one calendar date each), so the O(n^3)-ish loop with cached pair-distance
sums is deliberate; no priority queue.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date as Date
from math import comb

import numpy as np

from . import encode
from .corpus import MarkerConfig, MentionRecord, prepare_marked
from .encode import EncoderHandle

# Two candidate merges whose average distances differ by no more than this
# are treated as tied and broken deterministically.
TIE_EPS = 1e-12


@dataclass
class ClusterAssignment:
    """Clusters and pooled prototypes for one date partition."""

    date: Date | None
    clusters: dict[int, list[str]]
    prototypes: dict[int, np.ndarray]
    threshold_used: float


@dataclass(frozen=True)
class ClusteringMetrics:
    ari: float
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f1: float


def agglomerative_cluster(vectors: list[np.ndarray], threshold: float) -> list[int]:
    """Average-linkage clustering by cosine distance, stopping past threshold.

    Returns dense integer labels in order of first appearance. Each step
    finds the minimum average linkage; merges tied within TIE_EPS of it are
    broken by the lexicographically smallest sorted pair of the two
    clusters' minimum member indices, so results are deterministic.
    """
    n = len(vectors)
    if n == 0:
        raise ValueError("cannot cluster an empty vector list")
    if not 0.0 <= threshold <= 2.0:
        raise ValueError(f"threshold {threshold} outside [0, 2]")

    unit = [encode.normalize(np.asarray(v, dtype=np.float64)) for v in vectors]
    mat = np.stack(unit)
    dist = 1.0 - mat @ mat.T

    # Live clusters keyed by an id; pair_sum caches the sum of cross-cluster
    # pairwise distances so average linkage is one division away.
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    pair_sum: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            pair_sum[(i, j)] = float(dist[i, j])

    while len(members) > 1:
        ids = sorted(members)
        candidates = []
        for ai in range(len(ids)):
            for bi in range(ai + 1, len(ids)):
                a, b = ids[ai], ids[bi]
                d = pair_sum[(a, b)] / (len(members[a]) * len(members[b]))
                ra, rb = min(members[a]), min(members[b])
                candidates.append((d, (min(ra, rb), max(ra, rb)), a, b))
        min_dist = min(c[0] for c in candidates)
        if min_dist > threshold:
            break
        _, _, a, b = min(
            (c for c in candidates if c[0] <= min_dist + TIE_EPS),
            key=lambda c: c[1],
        )

        for c in list(members):
            if c in (a, b):
                continue
            ka = (a, c) if a < c else (c, a)
            kb = (b, c) if b < c else (c, b)
            pair_sum[ka] = pair_sum[ka] + pair_sum.pop(kb)
        del pair_sum[(a, b)]
        members[a] = members[a] + members[b]
        del members[b]

    # Dense labels in order of first appearance over the input sequence.
    owner = {}
    for cid, idxs in members.items():
        for i in idxs:
            owner[i] = cid
    relabel: dict[int, int] = {}
    labels = []
    for i in range(n):
        cid = owner[i]
        if cid not in relabel:
            relabel[cid] = len(relabel)
        labels.append(relabel[cid])
    return labels


def coref_partition(
    part: list[MentionRecord],
    handle: EncoderHandle,
    threshold: float,
    markers: MarkerConfig = MarkerConfig(),
    window_tokens: int = 256,
    renormalize_prototypes: bool = True,
) -> ClusterAssignment:
    """Mark, truncate, embed, and cluster one date partition.

    Prototypes are the mean-pooled member embeddings, re-normalized by
    default so they can query the inner-product index directly.
    """
    if not part:
        raise ValueError("empty partition")
    dates = {m.date for m in part}
    if len(dates) > 1:
        raise ValueError(f"partition spans multiple dates: {sorted(map(str, dates))}")

    marked = prepare_marked(part, markers, window_tokens)
    vectors = encode.embed_batch(handle, marked)
    labels = agglomerative_cluster(vectors, threshold)

    clusters: dict[int, list[str]] = {}
    grouped: dict[int, list[np.ndarray]] = {}
    for m, v, label in zip(part, vectors, labels):
        clusters.setdefault(label, []).append(m.mention_id)
        grouped.setdefault(label, []).append(v)
    prototypes = {}
    for label, vs in grouped.items():
        proto = encode.mean_pool(vs)
        if renormalize_prototypes:
            proto = encode.normalize(proto)
        prototypes[label] = proto
    return ClusterAssignment(
        date=part[0].date,
        clusters=clusters,
        prototypes=prototypes,
        threshold_used=threshold,
    )


def _contingency(pred, gold):
    if len(pred) != len(gold):
        raise ValueError(f"label lists differ in length: {len(pred)} vs {len(gold)}")
    table: dict[tuple, int] = {}
    pred_sizes: dict = {}
    gold_sizes: dict = {}
    for p, g in zip(pred, gold):
        table[(p, g)] = table.get((p, g), 0) + 1
        pred_sizes[p] = pred_sizes.get(p, 0) + 1
        gold_sizes[g] = gold_sizes.get(g, 0) + 1
    return table, pred_sizes, gold_sizes


def adjusted_rand_index(pred, gold) -> float:
    """Chance-corrected pair-counting agreement between two labelings.

    Computed from the contingency-table combination sums; exactly 1.0 for
    identical partitions (including the degenerate all-singleton and
    single-cluster cases, where the correction denominator vanishes).
    """
    if len(pred) < 2:
        raise ValueError("adjusted rand index needs at least 2 items")
    table, pred_sizes, gold_sizes = _contingency(pred, gold)
    index = sum(comb(c, 2) for c in table.values())
    sum_pred = sum(comb(c, 2) for c in pred_sizes.values())
    sum_gold = sum(comb(c, 2) for c in gold_sizes.values())
    total = comb(len(pred), 2)
    expected = sum_pred * sum_gold / total
    max_index = (sum_pred + sum_gold) / 2.0
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def pairwise_prf(pred, gold) -> tuple[float, float, float]:
    """Precision/recall/F1 over the sets of same-cluster item pairs.

    Precision is 0 by convention when no pairs are predicted; F1 is 0 when
    precision and recall are both 0.
    """
    table, pred_sizes, gold_sizes = _contingency(pred, gold)
    tp = sum(comb(c, 2) for c in table.values())
    pred_pairs = sum(comb(c, 2) for c in pred_sizes.values())
    gold_pairs = sum(comb(c, 2) for c in gold_sizes.values())
    precision = tp / pred_pairs if pred_pairs else 0.0
    recall = tp / gold_pairs if gold_pairs else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f1


def clustering_metrics(pred, gold) -> ClusteringMetrics:
    precision, recall, f1 = pairwise_prf(pred, gold)
    return ClusteringMetrics(
        ari=adjusted_rand_index(pred, gold),
        pairwise_precision=precision,
        pairwise_recall=recall,
        pairwise_f1=f1,
    )


# ---------------------------------------------------------------------------
# on-disk formats

CLUSTERS_HEADER = ("mention_id", "date", "cluster_id")
PROTOTYPES_HEADER = ("cluster_id", "dim", "values")


def global_cluster_id(date_key: str, local_id: int) -> str:
    """Corpus-wide cluster id; local ids only disambiguate within a date."""
    return f"{date_key}/{local_id}"


def format_clusters(assignments: list[ClusterAssignment]) -> str:
    from .corpus import date_key_str

    lines = ["\t".join(CLUSTERS_HEADER)]
    rows = []
    for a in assignments:
        date_key = date_key_str(a.date)
        for local_id in sorted(a.clusters):
            for mention_id in a.clusters[local_id]:
                rows.append((mention_id, date_key, global_cluster_id(date_key, local_id)))
    rows.sort()
    lines.extend("\t".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def parse_clusters(text: str) -> dict[str, str]:
    """mention_id → global cluster id."""
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != CLUSTERS_HEADER:
        raise ValueError("missing clusters header")
    out = {}
    for line in lines[1:]:
        if not line:
            continue
        mention_id, _, cluster_id = line.split("\t")
        out[mention_id] = cluster_id
    return out


def format_prototypes(assignments: list[ClusterAssignment]) -> str:
    from .corpus import date_key_str

    lines = ["\t".join(PROTOTYPES_HEADER)]
    rows = []
    for a in assignments:
        date_key = date_key_str(a.date)
        for local_id in sorted(a.prototypes):
            v = a.prototypes[local_id]
            rows.append(
                (
                    global_cluster_id(date_key, local_id),
                    str(v.shape[0]),
                    " ".join(f"{x:.17g}" for x in v),
                )
            )
    rows.sort()
    lines.extend("\t".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def parse_prototypes(text: str) -> dict[str, np.ndarray]:
    """global cluster id → prototype vector."""
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != PROTOTYPES_HEADER:
        raise ValueError("missing prototypes header")
    out = {}
    for line in lines[1:]:
        if not line:
            continue
        cluster_id, dim, values = line.split("\t")
        v = np.array([float(x) for x in values.split(" ")], dtype=np.float64)
        if v.shape[0] != int(dim):
            raise ValueError(f"prototype {cluster_id}: {v.shape[0]} values, dim {dim}")
        out[cluster_id] = v
    return out
