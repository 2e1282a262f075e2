"""Resolution of cluster prototypes against the KB index.

The decision rule, in order: retrieve top-k neighbors; below the no-match
similarity threshold the cluster is out of knowledgebase; with a clear
second-neighbor gap (cosine distance >= margin) link to the nearest;
otherwise collect every neighbor within the margin of the nearest and link
to the most popular one by rank (rank ties by ascending qid). The
popularity step collapses to "link to the nearest" when rank re-ranking is
disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import encode
from .corpus import NOT_IN_KB, is_out_of_kb
from .coref import ClusterAssignment, global_cluster_id
from .errors import ConfigError
from .kb import KbIndex, knn_search


@dataclass(frozen=True)
class DisambigConfig:
    no_match_threshold: float
    margin: float = 0.01
    k: int = 16
    use_qrank: bool = True
    use_coref: bool = True
    use_birth_filter: bool = True

    def __post_init__(self):
        if not 0.0 < self.no_match_threshold < 1.0:
            raise ConfigError(
                f"no_match_threshold {self.no_match_threshold} outside (0, 1)"
            )
        if self.margin < 0.0:
            raise ConfigError("margin must be >= 0")
        if self.margin > 0.0 and self.k < 2:
            raise ConfigError("k must be >= 2 when the second-neighbor margin is on")


@dataclass(frozen=True)
class Resolution:
    cluster_id: str
    decision: str  # a qid, or NOT_IN_KB
    top_similarity: float
    runner_up_gap: float  # cosine-distance gap to the 2nd neighbor; inf if none
    rerank_applied: bool
    candidates_considered: tuple[tuple[str, float, int], ...] = ()

    @property
    def linked(self) -> bool:
        return self.decision != NOT_IN_KB


def resolve(
    idx: KbIndex,
    prototype: np.ndarray,
    cfg: DisambigConfig,
    qrank: dict[str, int],
    cluster_id: str = "",
) -> Resolution:
    """Apply the decision rule to one prototype embedding."""
    k = min(max(cfg.k, 2 if cfg.margin > 0 else 1), idx.count)
    neighbors = knn_search(idx, prototype, k)
    # Widen k if the whole retrieved band is still within the margin of the
    # top hit; all near-ties must be visible to the re-ranking branch.
    while (
        len(neighbors) < idx.count
        and cfg.margin > 0
        and (neighbors[0][1] - neighbors[-1][1]) < cfg.margin
    ):
        k = min(k * 2, idx.count)
        neighbors = knn_search(idx, prototype, k)

    top_qid, top_sim = neighbors[0]
    gap = (1.0 - neighbors[1][1]) - (1.0 - top_sim) if len(neighbors) > 1 else math.inf

    if top_sim < cfg.no_match_threshold:
        return Resolution(
            cluster_id=cluster_id,
            decision=NOT_IN_KB,
            top_similarity=top_sim,
            runner_up_gap=gap,
            rerank_applied=False,
        )
    if gap >= cfg.margin:
        return Resolution(
            cluster_id=cluster_id,
            decision=top_qid,
            top_similarity=top_sim,
            runner_up_gap=gap,
            rerank_applied=False,
        )
    band = [
        (qid, sim, qrank.get(qid, 0))
        for qid, sim in neighbors
        if (1.0 - sim) - (1.0 - top_sim) < cfg.margin
    ]
    if not cfg.use_qrank:
        return Resolution(
            cluster_id=cluster_id,
            decision=top_qid,
            top_similarity=top_sim,
            runner_up_gap=gap,
            rerank_applied=False,
            candidates_considered=tuple(band),
        )
    best_rank = max(c[2] for c in band)
    winner = min((c for c in band if c[2] == best_rank), key=lambda c: c[0])
    return Resolution(
        cluster_id=cluster_id,
        decision=winner[0],
        top_similarity=top_sim,
        runner_up_gap=gap,
        rerank_applied=True,
        candidates_considered=tuple(band),
    )


def resolve_assignments(
    assignments: list[ClusterAssignment],
    idx: KbIndex,
    cfg: DisambigConfig,
    qrank: dict[str, int],
) -> dict[str, Resolution]:
    """Resolve every cluster; each mention inherits its cluster's decision."""
    from .corpus import date_key_str

    decisions: dict[str, Resolution] = {}
    for assignment in assignments:
        date_key = date_key_str(assignment.date)
        for local_id in sorted(assignment.clusters):
            resolution = resolve(
                idx,
                assignment.prototypes[local_id],
                cfg,
                qrank,
                cluster_id=global_cluster_id(date_key, local_id),
            )
            for mention_id in assignment.clusters[local_id]:
                decisions[mention_id] = resolution
    return decisions


def singleton_assignments(
    partitions, handle, markers, window_tokens, renormalize=True
) -> list[ClusterAssignment]:
    """One cluster per mention: the no-coreference ablation path."""
    from .corpus import prepare_marked

    out = []
    for key in partitions:
        part = partitions[key]
        marked = prepare_marked(part, markers, window_tokens)
        vectors = encode.embed_batch(handle, marked)
        clusters = {i: [m.mention_id] for i, m in enumerate(part)}
        prototypes = {
            i: (encode.normalize(v) if renormalize else v)
            for i, v in enumerate(vectors)
        }
        out.append(
            ClusterAssignment(
                date=part[0].date if part else None,
                clusters=clusters,
                prototypes=prototypes,
                threshold_used=float("nan"),
            )
        )
    return out


def accuracy(
    decisions: dict[str, Resolution | str],
    gold: dict[str, str],
    scope: str = "all",
) -> float:
    """Fraction of mentions resolved correctly.

    Correct = exact qid match, or both sides out-of-KB. scope="in_kb"
    restricts to mentions whose gold entity is in the knowledgebase.
    """
    if scope not in ("all", "in_kb"):
        raise ValueError(f"unknown scope {scope!r}")
    total = 0
    correct = 0
    for mention_id, gold_qid in gold.items():
        if mention_id not in decisions:
            raise KeyError(f"no decision for mention {mention_id}")
        if scope == "in_kb" and is_out_of_kb(gold_qid):
            continue
        decision = decisions[mention_id]
        decided = decision.decision if isinstance(decision, Resolution) else decision
        total += 1
        if is_out_of_kb(gold_qid):
            correct += decided == NOT_IN_KB
        else:
            correct += decided == gold_qid
    if total == 0:
        raise ValueError("no gold-labeled mentions in scope")
    return correct / total


DECISIONS_HEADER = (
    "mention_id",
    "cluster_id",
    "decision",
    "top_similarity",
    "gap",
    "rerank_applied",
)


def format_decisions(decisions: dict[str, Resolution]) -> str:
    """Render decisions as TSV, one mention per line, sorted by mention id."""
    lines = ["\t".join(DECISIONS_HEADER)]
    for mention_id in sorted(decisions):
        r = decisions[mention_id]
        gap = "inf" if math.isinf(r.runner_up_gap) else f"{r.runner_up_gap:.12g}"
        lines.append(
            "\t".join(
                (
                    mention_id,
                    r.cluster_id,
                    r.decision,
                    f"{r.top_similarity:.12g}",
                    gap,
                    "1" if r.rerank_applied else "0",
                )
            )
        )
    return "\n".join(lines) + "\n"


def parse_decisions(text: str) -> dict[str, Resolution]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != DECISIONS_HEADER:
        raise ValueError("missing decisions header")
    out: dict[str, Resolution] = {}
    for line in lines[1:]:
        if not line:
            continue
        mention_id, cluster_id, decision, top_sim, gap, rerank = line.split("\t")
        out[mention_id] = Resolution(
            cluster_id=cluster_id,
            decision=decision,
            top_similarity=float(top_sim),
            runner_up_gap=float(gap),
            rerank_applied=rerank == "1",
        )
    return out


def sweep_no_match_threshold(labeled: list[tuple[float, bool]]) -> float:
    """Pick the similarity cutoff that maximizes pairwise precision.

    Candidates are the observed similarity values; a pair counts as a
    predicted match when its similarity >= the cutoff. Precision ties go to
    the higher cutoff.
    """
    positives = [s for s, is_match in labeled if is_match]
    negatives = [s for s, is_match in labeled if not is_match]
    if not positives or not negatives:
        raise ValueError("sweep needs at least one positive and one negative pair")
    best_threshold = None
    best_precision = -1.0
    for candidate in sorted({s for s, _ in labeled}):
        predicted = [(s, m) for s, m in labeled if s >= candidate]
        if not predicted:
            continue
        precision = sum(1 for _, m in predicted if m) / len(predicted)
        if precision > best_precision or (
            precision == best_precision and candidate > best_threshold
        ):
            best_precision = precision
            best_threshold = candidate
    return best_threshold
