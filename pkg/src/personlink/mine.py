"""Contrastive pair mining from hyperlink-derived link records.

Produces training pairs of two flavors: coreference pairs (marked context
vs marked context) and disambiguation pairs (marked context vs entity
template). Negatives come in four kinds — easy (unrelated entities),
disambig_page_hard (entities sharing a disambiguation group), family_hard
(entities related by family), and in_context_hard (entities hyperlinked in
the same paragraph; coreference pairs only).

Entity-level train/val/test splits guarantee no pair joins entities from
different splits. Sampling is deterministic and input-order independent:
every candidate pair is keyed by a seeded hash and quotas take the
smallest keys.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from dataclasses import dataclass, field

from .corpus import (
    MarkerConfig,
    MentionRecord,
    mark_mention,
    truncate_to_window,
)
from .errors import ParseError, RecordValidationError
from .kb import EntityTemplate

KINDS = ("positive", "easy", "disambig_page_hard", "family_hard", "in_context_hard")
SPLITS = ("train", "val", "test")
SPLIT_RATIOS = (0.8, 0.1, 0.1)

#: Relative shares used when deriving per-kind negative quotas from a total.
#: Family and disambiguation-page negatives are overrepresented 2:1.
NEGATIVE_WEIGHTS = {
    "easy": 1.0,
    "disambig_page_hard": 2.0,
    "family_hard": 2.0,
    "in_context_hard": 1.0,
}

DEFAULT_POSITIVE_CAP = 50
DEFAULT_WINDOW_TOKENS = 256


@dataclass(frozen=True)
class LinkRecord:
    """One hyperlink occurrence: a paragraph with an anchored entity link."""

    page_id: str
    target_qid: str
    context: str
    anchor_span: tuple[int, int]
    in_context_qids: tuple[str, ...] = ()

    def validate(self) -> None:
        start, end = self.anchor_span
        if not (0 <= start < end <= len(self.context)):
            raise RecordValidationError(
                f"anchor span {self.anchor_span} outside context of length "
                f"{len(self.context)} (page {self.page_id})"
            )
        if self.target_qid in self.in_context_qids:
            raise RecordValidationError(
                f"target {self.target_qid} repeated in in_context_qids "
                f"(page {self.page_id})"
            )

    @property
    def surface(self) -> str:
        start, end = self.anchor_span
        return self.context[start:end]


@dataclass(frozen=True)
class DisambigGroup:
    group_name: str
    member_qids: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.member_qids)) < 2:
            raise RecordValidationError(
                f"disambiguation group {self.group_name!r} needs >= 2 distinct members"
            )


@dataclass(frozen=True)
class FamilyRelation:
    qid_a: str
    qid_b: str
    relation: str

    def __post_init__(self):
        if self.qid_a == self.qid_b:
            raise RecordValidationError(
                f"family relation {self.relation!r} links {self.qid_a} to itself"
            )


@dataclass(frozen=True)
class PairExample:
    text_a: str
    text_b: str
    label: int
    kind: str
    split: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RecordValidationError(f"unknown pair kind {self.kind!r}")
        if self.split not in SPLITS:
            raise RecordValidationError(f"unknown split {self.split!r}")
        if (self.label == 1) != (self.kind == "positive"):
            raise RecordValidationError(
                f"label {self.label} inconsistent with kind {self.kind!r}"
            )


@dataclass
class MiningResult:
    pairs: list[PairExample]
    shortfall: dict[str, int] = field(default_factory=dict)
    skipped_no_template: int = 0


# ---------------------------------------------------------------------------
# input parsing

def parse_link_line(line: str, path: str = "<links>", line_no: int = 0) -> LinkRecord:
    try:
        row = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(path, line_no, f"invalid JSON: {e}")
    try:
        record = LinkRecord(
            page_id=str(row["page_id"]),
            target_qid=row["target_qid"],
            context=row["context"],
            anchor_span=(int(row["anchor_start"]), int(row["anchor_end"])),
            in_context_qids=tuple(row.get("in_context_qids", ())),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(path, line_no, f"bad link record: {e}")
    return record


def load_link_records(path) -> tuple[list[LinkRecord], int]:
    """Load link records; returns (records, n_self_links_dropped).

    A target qid that also appears in its own in_context_qids list is a
    dump artifact (the anchor counted twice); the duplicate is dropped and
    counted rather than rejected.
    """
    records = []
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = parse_link_line(line, str(path), line_no)
            if record.target_qid in record.in_context_qids:
                dropped += 1
                record = LinkRecord(
                    page_id=record.page_id,
                    target_qid=record.target_qid,
                    context=record.context,
                    anchor_span=record.anchor_span,
                    in_context_qids=tuple(
                        q for q in record.in_context_qids if q != record.target_qid
                    ),
                )
            record.validate()
            records.append(record)
    return records, dropped


def load_groups(path) -> list[DisambigGroup]:
    groups = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                groups.append(
                    DisambigGroup(
                        group_name=row["group_name"],
                        member_qids=tuple(row["qids"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ParseError(str(path), line_no, f"bad group record: {e}")
    return groups


def load_families(path) -> list[FamilyRelation]:
    relations = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                relations.append(
                    FamilyRelation(
                        qid_a=row["qid_a"], qid_b=row["qid_b"], relation=row["relation"]
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ParseError(str(path), line_no, f"bad family record: {e}")
    return relations


# ---------------------------------------------------------------------------
# splits

def split_by_entity(
    qids: list[str],
    ratios: tuple[float, float, float] = SPLIT_RATIOS,
    seed: int = 0,
) -> dict[str, str]:
    """Assign each entity to train/val/test by largest-remainder rounding.

    Counts are floor(n * ratio) plus leftovers awarded by descending
    fractional remainder, ties broken in split order (train, val, test).
    The shuffle is seeded, so the assignment is a pure function of
    (qid set, ratios, seed).
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} do not sum to 1")
    unique = sorted(set(qids))
    n = len(unique)
    rng = random.Random(seed)
    rng.shuffle(unique)

    exact = [n * r for r in ratios]
    counts = [int(x) for x in exact]
    leftover = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1

    assignment = {}
    start = 0
    for split, count in zip(SPLITS, counts):
        for qid in unique[start : start + count]:
            assignment[qid] = split
        start += count
    return assignment


# ---------------------------------------------------------------------------
# keys and marked text

def record_key(record: LinkRecord) -> str:
    """Stable content hash identifying one link record."""
    h = hashlib.blake2b(digest_size=16)
    start, end = record.anchor_span
    for part in (record.page_id, record.target_qid, str(start), str(end), record.context):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _pair_key(seed: int, kind: str, key_a: str, key_b: str) -> str:
    lo, hi = sorted((key_a, key_b))
    h = hashlib.blake2b(
        f"{kind}\x00{lo}\x00{hi}".encode("utf-8"),
        digest_size=16,
        key=str(seed).encode("utf-8"),
    )
    return h.hexdigest()


def marked_text(
    record: LinkRecord,
    markers: MarkerConfig = MarkerConfig(),
    window_tokens: int = DEFAULT_WINDOW_TOKENS,
) -> str:
    """The record's context with its anchor marked, truncated to the window."""
    mention = MentionRecord(
        mention_id=record.page_id,
        doc_id=record.page_id,
        date=None,
        surface=record.surface,
        context=record.context,
        span=record.anchor_span,
    )
    return truncate_to_window(mark_mention(mention, markers), window_tokens, markers).text


# ---------------------------------------------------------------------------
# mining

def _related_qid_pairs(groups, families):
    group_pairs = set()
    for g in groups:
        for a, b in itertools.combinations(sorted(set(g.member_qids)), 2):
            group_pairs.add((a, b))
    family_pairs = set()
    for f in families:
        family_pairs.add(tuple(sorted((f.qid_a, f.qid_b))))
    return group_pairs, family_pairs


def _take(candidates, quota, seed, kind):
    """Order candidate pairs by seeded key and apply the kind's quota.

    candidates: list of (key_a, key_b, payload). Returns the selected
    payloads in key order plus the shortfall against the quota.
    """
    keyed = sorted(
        (( _pair_key(seed, kind, a, b), payload) for a, b, payload in candidates),
        key=lambda item: item[0],
    )
    limit = len(keyed) if quota is None else min(quota, len(keyed))
    shortfall = 0 if quota is None else max(0, quota - len(keyed))
    return [payload for _, payload in keyed[:limit]], shortfall


def mine_coref_pairs(
    records: list[LinkRecord],
    groups: list[DisambigGroup],
    families: list[FamilyRelation],
    quota: dict[str, int | None],
    seed: int = 0,
    markers: MarkerConfig = MarkerConfig(),
    window_tokens: int = DEFAULT_WINDOW_TOKENS,
    positive_cap: int = DEFAULT_POSITIVE_CAP,
) -> MiningResult:
    """Mine context-vs-context pairs of all five kinds."""
    if not records:
        raise ValueError("no link records to mine")
    split_of = split_by_entity(sorted({r.target_qid for r in records}), seed=seed)
    group_pairs, family_pairs = _related_qid_pairs(groups, families)

    keys = {id(r): record_key(r) for r in records}
    texts = {keys[id(r)]: marked_text(r, markers, window_tokens) for r in records}
    by_target: dict[str, list[LinkRecord]] = {}
    for r in sorted(records, key=lambda r: keys[id(r)]):
        by_target.setdefault(r.target_qid, []).append(r)

    def pair(r1, r2, kind):
        k1, k2 = keys[id(r1)], keys[id(r2)]
        if k2 < k1:
            r1, r2, k1, k2 = r2, r1, k2, k1
        return (
            k1,
            k2,
            PairExample(
                text_a=texts[k1],
                text_b=texts[k2],
                label=1 if kind == "positive" else 0,
                kind=kind,
                split=split_of[r1.target_qid],
            ),
        )

    # Positives: every unordered pair of distinct records sharing a target,
    # capped per entity before the global quota.
    positive_candidates = []
    for qid in sorted(by_target):
        entity_pairs = [
            pair(r1, r2, "positive")
            for r1, r2 in itertools.combinations(by_target[qid], 2)
        ]
        entity_pairs.sort(key=lambda c: _pair_key(seed, "positive", c[0], c[1]))
        positive_candidates.extend(entity_pairs[:positive_cap])

    qid_list = sorted(by_target)
    easy, disambig, family = [], [], []
    for a, b in itertools.combinations(qid_list, 2):
        if split_of[a] != split_of[b]:
            continue
        if (a, b) in group_pairs:
            disambig.extend(
                pair(r1, r2, "disambig_page_hard")
                for r1 in by_target[a]
                for r2 in by_target[b]
            )
        if (a, b) in family_pairs:
            family.extend(
                pair(r1, r2, "family_hard")
                for r1 in by_target[a]
                for r2 in by_target[b]
            )
        if (a, b) not in group_pairs:
            easy.extend(
                pair(r1, r2, "easy")
                for r1 in by_target[a]
                for r2 in by_target[b]
            )

    in_context = []
    seen_ic = set()
    for r1 in records:
        for qid in r1.in_context_qids:
            if qid == r1.target_qid or qid not in by_target:
                continue
            if split_of[qid] != split_of[r1.target_qid]:
                continue
            for r2 in by_target[qid]:
                k = tuple(sorted((keys[id(r1)], keys[id(r2)])))
                if k in seen_ic:
                    continue
                seen_ic.add(k)
                in_context.append(pair(r1, r2, "in_context_hard"))

    pairs: list[PairExample] = []
    shortfall: dict[str, int] = {}
    for kind, candidates in (
        ("positive", positive_candidates),
        ("easy", easy),
        ("disambig_page_hard", disambig),
        ("family_hard", family),
        ("in_context_hard", in_context),
    ):
        taken, short = _take(candidates, quota.get(kind), seed, kind)
        pairs.extend(taken)
        if short:
            shortfall[kind] = short
    return MiningResult(pairs=pairs, shortfall=shortfall)


def mine_disambig_pairs(
    records: list[LinkRecord],
    templates: dict[str, EntityTemplate],
    groups: list[DisambigGroup],
    families: list[FamilyRelation],
    quota: dict[str, int | None],
    seed: int = 0,
    markers: MarkerConfig = MarkerConfig(),
    window_tokens: int = DEFAULT_WINDOW_TOKENS,
    positive_cap: int = DEFAULT_POSITIVE_CAP,
) -> MiningResult:
    """Mine context-vs-template pairs (positive, easy, group, family kinds).

    Records whose target has no template are skipped and counted. Negative
    templates are drawn only from entities that appear as link targets, so
    the entity-level split discipline stays well defined.
    """
    if not records:
        raise ValueError("no link records to mine")
    usable = [r for r in records if r.target_qid in templates]
    skipped = len(records) - len(usable)
    split_of = split_by_entity(sorted({r.target_qid for r in usable}), seed=seed)
    group_pairs, family_pairs = _related_qid_pairs(groups, families)

    keys = {id(r): record_key(r) for r in usable}
    texts = {keys[id(r)]: marked_text(r, markers, window_tokens) for r in usable}
    by_target: dict[str, list[LinkRecord]] = {}
    for r in sorted(usable, key=lambda r: keys[id(r)]):
        by_target.setdefault(r.target_qid, []).append(r)

    def template_key(qid):
        return f"template:{qid}"

    def pair(record, template_qid, kind):
        k1 = keys[id(record)]
        return (
            k1,
            template_key(template_qid),
            PairExample(
                text_a=texts[k1],
                text_b=templates[template_qid].template_text,
                label=1 if kind == "positive" else 0,
                kind=kind,
                split=split_of[record.target_qid],
            ),
        )

    positive_candidates = []
    for qid in sorted(by_target):
        entity_pairs = [pair(r, qid, "positive") for r in by_target[qid]]
        entity_pairs.sort(key=lambda c: _pair_key(seed, "positive", c[0], c[1]))
        positive_candidates.extend(entity_pairs[:positive_cap])

    qid_list = sorted(by_target)
    easy, disambig, family = [], [], []
    for a in qid_list:
        for b in qid_list:
            if a == b or split_of[a] != split_of[b]:
                continue
            qp = tuple(sorted((a, b)))
            for r in by_target[a]:
                if qp in group_pairs:
                    disambig.append(pair(r, b, "disambig_page_hard"))
                if qp in family_pairs:
                    family.append(pair(r, b, "family_hard"))
                if qp not in group_pairs:
                    easy.append(pair(r, b, "easy"))

    pairs: list[PairExample] = []
    shortfall: dict[str, int] = {}
    for kind, candidates in (
        ("positive", positive_candidates),
        ("easy", easy),
        ("disambig_page_hard", disambig),
        ("family_hard", family),
    ):
        taken, short = _take(candidates, quota.get(kind), seed, kind)
        pairs.extend(taken)
        if short:
            shortfall[kind] = short
    return MiningResult(pairs=pairs, shortfall=shortfall, skipped_no_template=skipped)


def negative_quota(total: int, weights: dict[str, float] = NEGATIVE_WEIGHTS) -> dict[str, int]:
    """Split a negative-pair budget across kinds by the weight shares."""
    kinds = [k for k in KINDS if k in weights]
    denom = sum(weights[k] for k in kinds)
    exact = {k: total * weights[k] / denom for k in kinds}
    counts = {k: int(exact[k]) for k in kinds}
    leftover = total - sum(counts.values())
    order = sorted(kinds, key=lambda k: (-(exact[k] - counts[k]), kinds.index(k)))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


# ---------------------------------------------------------------------------
# pair file format

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}

PAIRS_HEADER = ("text_a", "text_b", "label", "kind", "split")


def escape_field(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def unescape_field(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text):
                raise ValueError("dangling escape at end of field")
            nxt = text[i + 1]
            if nxt not in _UNESCAPES:
                raise ValueError(f"unknown escape \\{nxt}")
            out.append(_UNESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def format_pairs(pairs: list[PairExample]) -> str:
    lines = ["\t".join(PAIRS_HEADER)]
    for p in pairs:
        lines.append(
            "\t".join(
                (
                    escape_field(p.text_a),
                    escape_field(p.text_b),
                    str(p.label),
                    p.kind,
                    p.split,
                )
            )
        )
    return "\n".join(lines) + "\n"


def parse_pairs(text: str) -> list[PairExample]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != PAIRS_HEADER:
        raise ValueError("missing pairs header")
    pairs = []
    for line in lines[1:]:
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"expected 5 fields, got {len(fields)}")
        text_a, text_b, label, kind, split = fields
        pairs.append(
            PairExample(
                text_a=unescape_field(text_a),
                text_b=unescape_field(text_b),
                label=int(label),
                kind=kind,
                split=split,
            )
        )
    return pairs
