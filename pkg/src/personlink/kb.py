"""Person knowledgebase: templates, pruning, popularity ranks, exact kNN index.

Candidate entities arrive as JSON lines (qid, label, aliases, occupations,
instance_type, birth_date, death_date, page_title, first_paragraph). The
retained subset is rendered into natural-language templates, embedded, and
stored in a flat inner-product index that answers exact top-k queries.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from datetime import date as Date

import numpy as np

from . import encode
from .encode import EncoderHandle
from .errors import ParseError, RecordValidationError

log = logging.getLogger(__name__)

INDEX_MAGIC = b"PLKBIDX1"
_HEADER = struct.Struct("<8sQQQQ")  # magic, dim, count, qid block size, matrix offset


@dataclass(frozen=True)
class EntityTemplate:
    """A knowledgebase entry plus its rendered description text."""

    qid: str
    label: str
    aliases: tuple[str, ...]
    occupations: tuple[str, ...]
    instance_type: str
    birth_date: Date | None
    death_date: Date | None
    page_title: str
    first_paragraph: str
    template_text: str
    qrank: int = 0


@dataclass(frozen=True)
class EditDistanceConfig:
    """Thresholds for the label-vs-page-title mismatch filter.

    An entity is dropped when its label shares no lowercase alphanumeric
    token with the page title AND the normalized edit distance exceeds
    max_norm_dist.
    """

    max_norm_dist: float = 0.5


def _oxford_join(items) -> str:
    items = list(items)
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return f"{items[0]} and {items[1]}"
    return ", ".join(items[:-1]) + f", and {items[-1]}"


def render_template(
    label: str,
    instance_type: str,
    aliases,
    occupations,
    first_paragraph: str,
) -> str:
    """Render the canonical entity description text.

    "{label} is of type {instance_type}." then, if present, an
    "Also known as ..." sentence and a "Has worked as ..." sentence
    (Oxford-comma lists, alias order preserved), then the first paragraph.
    """
    if not label:
        raise ValueError("entity label must be nonempty")
    parts = [f"{label} is of type {instance_type}."]
    if aliases:
        parts.append(f"Also known as {_oxford_join(aliases)}.")
    if occupations:
        parts.append(f"Has worked as {_oxford_join(occupations)}.")
    parts.append(first_paragraph)
    return " ".join(parts)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance between two strings."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def normalized_levenshtein(a: str, b: str) -> float:
    """Edit distance divided by the longer string's length (0 for two empties)."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def _alnum_tokens(text: str) -> set[str]:
    tokens, current = set(), []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.add("".join(current))
            current = []
    if current:
        tokens.add("".join(current))
    return tokens


def _parse_date(value) -> Date | None:
    if value in (None, ""):
        return None
    # Year-only values are common in biographical data; anchor to Jan 1.
    if isinstance(value, int) or (isinstance(value, str) and value.lstrip("-").isdigit()):
        return Date(int(value), 1, 1)
    return Date.fromisoformat(value)


def parse_entity_line(line: str, path="<memory>", line_no: int = 0) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(path, line_no, f"invalid JSON: {exc}") from exc
    try:
        return {
            "qid": str(obj["qid"]),
            "label": obj["label"],
            "aliases": tuple(obj.get("aliases") or ()),
            "occupations": tuple(obj.get("occupations") or ()),
            "instance_type": obj.get("instance_type", ""),
            "birth_date": _parse_date(obj.get("birth_date")),
            "death_date": _parse_date(obj.get("death_date")),
            "page_title": obj.get("page_title", obj["label"]),
            "first_paragraph": obj.get("first_paragraph", ""),
            "qrank": int(obj.get("qrank", 0)),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, line_no, f"bad entity record: {exc}") from exc


def load_entity_candidates(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                rows.append(parse_entity_line(line, path, line_no))
    return rows


def prune_kb(
    candidates: list[dict],
    corpus_end: Date,
    edit_cfg: EditDistanceConfig = EditDistanceConfig(),
    birth_filter: bool = True,
) -> list[EntityTemplate]:
    """Keep person entities that pass every retention predicate.

    Kept iff: instance type is human; a birth or death date exists; the
    birth date (when present and birth_filter is on) is not after
    corpus_end; and the label/page-title mismatch rule does not fire.
    Rejections are logged with the failing predicate.
    """
    kept = []
    for row in candidates:
        qid = row["qid"]
        if row["instance_type"] != "human":
            log.info("prune %s: instance_type=%r is not human", qid, row["instance_type"])
            continue
        if row["birth_date"] is None and row["death_date"] is None:
            log.info("prune %s: no birth or death date", qid)
            continue
        if birth_filter and row["birth_date"] is not None and row["birth_date"] > corpus_end:
            log.info("prune %s: born %s after corpus end %s", qid, row["birth_date"], corpus_end)
            continue
        overlap = _alnum_tokens(row["label"]) & _alnum_tokens(row["page_title"])
        norm_dist = normalized_levenshtein(row["label"].lower(), row["page_title"].lower())
        if not overlap and norm_dist > edit_cfg.max_norm_dist:
            log.info(
                "prune %s: label %r vs page title %r share no token (norm dist %.3f)",
                qid, row["label"], row["page_title"], norm_dist,
            )
            continue
        kept.append(
            EntityTemplate(
                qid=qid,
                label=row["label"],
                aliases=row["aliases"],
                occupations=row["occupations"],
                instance_type=row["instance_type"],
                birth_date=row["birth_date"],
                death_date=row["death_date"],
                page_title=row["page_title"],
                first_paragraph=row["first_paragraph"],
                template_text=render_template(
                    row["label"],
                    row["instance_type"],
                    row["aliases"],
                    row["occupations"],
                    row["first_paragraph"],
                ),
                qrank=row["qrank"],
            )
        )
    return kept


def dump_template(t: EntityTemplate) -> str:
    return json.dumps(
        {
            "qid": t.qid,
            "label": t.label,
            "aliases": list(t.aliases),
            "occupations": list(t.occupations),
            "instance_type": t.instance_type,
            "birth_date": t.birth_date.isoformat() if t.birth_date else None,
            "death_date": t.death_date.isoformat() if t.death_date else None,
            "page_title": t.page_title,
            "first_paragraph": t.first_paragraph,
            "template_text": t.template_text,
            "qrank": t.qrank,
        },
        ensure_ascii=False,
    )


def load_templates(path) -> list[EntityTemplate]:
    """Load an already-pruned template file (output of prune_kb)."""
    templates = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = parse_entity_line(line, path, line_no)
            obj = json.loads(line)
            templates.append(
                EntityTemplate(
                    template_text=obj.get("template_text")
                    or render_template(
                        row["label"],
                        row["instance_type"],
                        row["aliases"],
                        row["occupations"],
                        row["first_paragraph"],
                    ),
                    **{k: row[k] for k in row if k != "template_text"},
                )
            )
    return templates


@dataclass
class KbIndex:
    """Write-once flat index of normalized template embeddings.

    Exact inner-product search; with unit vectors that is cosine
    similarity, matching the decision rules downstream.
    """

    dim: int
    qids: list[str] = field(default_factory=list)
    matrix: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.qids)

    @classmethod
    def from_vectors(cls, qids: list[str], vectors: list[np.ndarray]) -> "KbIndex":
        if not qids:
            raise ValueError("cannot build an empty index")
        if len(qids) != len(vectors):
            raise ValueError("qid/vector count mismatch")
        seen = set()
        for qid in qids:
            if qid in seen:
                raise RecordValidationError(f"duplicate qid in index: {qid}")
            seen.add(qid)
        unit = [encode.normalize(np.asarray(v, dtype=np.float64)) for v in vectors]
        matrix = np.stack(unit)
        return cls(dim=matrix.shape[1], qids=list(qids), matrix=matrix)

    def vector_for(self, i: int) -> np.ndarray:
        return self.matrix[i]


def build_index(templates: list[EntityTemplate], handle: EncoderHandle) -> KbIndex:
    """Embed every template_text and store the normalized vectors in order."""
    if not templates:
        raise ValueError("cannot index an empty template list")
    vectors = encode.embed_batch(handle, [t.template_text for t in templates])
    return KbIndex.from_vectors([t.qid for t in templates], vectors)


def knn_search(idx: KbIndex, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k by inner product, ties broken by insertion order.

    k is clipped to the index size. The query must match the index dim.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (idx.dim,):
        raise ValueError(f"query dim {q.shape} does not match index dim {idx.dim}")
    sims = idx.matrix @ q
    order = np.argsort(-sims, kind="stable")[: min(k, idx.count)]
    return [(idx.qids[i], float(sims[i])) for i in order]


def save_index(idx: KbIndex, path) -> None:
    qid_block = b"".join(q.encode("utf-8") + b"\n" for q in idx.qids)
    offset = _HEADER.size + len(qid_block)
    pad = (-offset) % 8
    offset += pad
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(INDEX_MAGIC, idx.dim, idx.count, len(qid_block), offset))
        fh.write(qid_block)
        fh.write(b"\x00" * pad)
        fh.write(np.ascontiguousarray(idx.matrix, dtype="<f8").tobytes())


def load_index(path, mmap: bool = True) -> KbIndex:
    """Read an index file; the vector matrix is memory-mapped by default."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ParseError(path, 0, "truncated index header")
        magic, dim, count, qid_block_size, offset = _HEADER.unpack(header)
        if magic != INDEX_MAGIC:
            raise ParseError(path, 0, f"bad index magic {magic!r}")
        qid_block = fh.read(qid_block_size)
    qids = qid_block.decode("utf-8").splitlines()
    if len(qids) != count:
        raise ParseError(path, 0, f"qid count {len(qids)} != header count {count}")
    if mmap:
        matrix = np.memmap(path, dtype="<f8", mode="r", offset=offset, shape=(count, dim))
    else:
        with open(path, "rb") as fh:
            fh.seek(offset)
            matrix = np.frombuffer(fh.read(count * dim * 8), dtype="<f8").reshape(count, dim)
    return KbIndex(dim=int(dim), qids=qids, matrix=matrix)


def load_qrank(path) -> dict[str, int]:
    """Parse a two-column qid,count CSV into a rank map.

    Tolerates a header row; other malformed rows are skipped and counted in
    a single warning. Duplicate qids keep the larger value. Entities absent
    from the map default to rank 0 at lookup time.
    """
    ranks: dict[str, int] = {}
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                skipped += 1
                continue
            qid, value = parts[0].strip(), parts[1].strip()
            if not value.isdigit():
                if line_no == 1:  # header row such as "Entity,QRank"
                    continue
                skipped += 1
                continue
            rank = int(value)
            if rank > ranks.get(qid, -1):
                ranks[qid] = rank
    if skipped:
        log.warning("load_qrank: skipped %d malformed rows", skipped)
    return ranks
