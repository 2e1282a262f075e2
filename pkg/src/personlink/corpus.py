"""Mention ingestion, marker insertion, window truncation, date partitioning.

Corpus files are JSON lines, one mention per line:
{"mention_id", "doc_id", "date", "surface", "context", "span_start",
 "span_end", "gold_qid"?}. Dates are ISO-8601; an empty or missing date
puts the mention into a single undated partition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date as Date

from .errors import ParseError, RecordValidationError

# Gold label for a mention whose person is known to be absent from the
# knowledgebase. Evaluation corpora may suffix it ("NOT_IN_KB#2") to keep
# distinct out-of-KB individuals apart for clustering metrics.
NOT_IN_KB = "NOT_IN_KB"

DEFAULT_MARKER_OPEN = "[M] "
DEFAULT_MARKER_CLOSE = " [\\M]"


def is_out_of_kb(gold_qid: str) -> bool:
    return gold_qid == NOT_IN_KB or gold_qid.startswith(NOT_IN_KB + "#")


@dataclass(frozen=True)
class MentionRecord:
    """One pre-tagged person mention with its paragraph context."""

    mention_id: str
    doc_id: str
    date: Date | None
    surface: str
    context: str
    span: tuple[int, int]
    gold_qid: str | None = None

    def validate(self) -> "MentionRecord":
        start, end = self.span
        if not (0 <= start <= end <= len(self.context)):
            raise RecordValidationError(
                f"mention {self.mention_id}: span {self.span} outside context "
                f"of length {len(self.context)}"
            )
        if self.context[start:end] != self.surface:
            raise RecordValidationError(
                f"mention {self.mention_id}: span text "
                f"{self.context[start:end]!r} != surface {self.surface!r}"
            )
        return self


@dataclass(frozen=True)
class MarkedContext:
    """A context string with exactly one marker pair around the mention.

    marker_span covers the inserted "opener + surface + closer" region so
    truncation and marker stripping never have to search for the markers
    (the marker strings may also occur literally in the surrounding text).
    """

    text: str
    mention_id: str
    marker_span: tuple[int, int]
    mention_truncated: bool = False


@dataclass(frozen=True)
class MarkerConfig:
    open: str = DEFAULT_MARKER_OPEN
    close: str = DEFAULT_MARKER_CLOSE


def parse_mention_line(line: str, path="<memory>", line_no: int = 0) -> MentionRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(path, line_no, f"invalid JSON: {exc}") from exc
    try:
        raw_date = obj.get("date") or None
        record = MentionRecord(
            mention_id=str(obj["mention_id"]),
            doc_id=str(obj["doc_id"]),
            date=Date.fromisoformat(raw_date) if raw_date else None,
            surface=obj["surface"],
            context=obj["context"],
            span=(int(obj["span_start"]), int(obj["span_end"])),
            gold_qid=obj.get("gold_qid"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, line_no, f"bad mention record: {exc}") from exc
    return record.validate()


def load_mentions(path) -> list[MentionRecord]:
    """Load all mentions from a JSONL corpus file, preserving input order."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(parse_mention_line(line, path, line_no))
    seen = set()
    for r in records:
        if r.mention_id in seen:
            raise RecordValidationError(f"duplicate mention_id {r.mention_id}")
        seen.add(r.mention_id)
    return records


def dump_mention(m: MentionRecord) -> str:
    obj = {
        "mention_id": m.mention_id,
        "doc_id": m.doc_id,
        "date": m.date.isoformat() if m.date else None,
        "surface": m.surface,
        "context": m.context,
        "span_start": m.span[0],
        "span_end": m.span[1],
    }
    if m.gold_qid is not None:
        obj["gold_qid"] = m.gold_qid
    return json.dumps(obj, ensure_ascii=False)


def mark_mention(m: MentionRecord, markers: MarkerConfig = MarkerConfig()) -> MarkedContext:
    """Insert the marker pair around the mention span, all else unchanged."""
    start, end = m.span
    text = m.context[:start] + markers.open + m.surface + markers.close + m.context[end:]
    span_len = len(markers.open) + len(m.surface) + len(markers.close)
    return MarkedContext(text=text, mention_id=m.mention_id, marker_span=(start, start + span_len))


def strip_markers(mc: MarkedContext, markers: MarkerConfig = MarkerConfig()) -> str:
    """Undo mark_mention, using the recorded span rather than substring search."""
    start, end = mc.marker_span
    inner = mc.text[start + len(markers.open) : end - len(markers.close)]
    return mc.text[:start] + inner + mc.text[end:]


def count_tokens(text: str) -> int:
    """Whitespace-word token proxy (1 word ~ 1 token); no tokenizer needed."""
    return len(text.split())


def truncate_to_window(
    mc: MarkedContext, max_tokens: int, markers: MarkerConfig = MarkerConfig()
) -> MarkedContext:
    """Shrink a marked context to at most max_tokens proxy tokens.

    Words are dropped from both ends of the surrounding context so the
    marked mention stays near the middle; for an odd leftover budget the
    right side keeps the extra word. If the marked region alone exceeds the
    window its tail words are dropped (keeping the closing marker) and the
    result is flagged mention_truncated.
    """
    marker_words = count_tokens(markers.open) + count_tokens(markers.close)
    if max_tokens < marker_words + 1:
        raise ValueError(f"window of {max_tokens} cannot hold markers and mention")
    if count_tokens(mc.text) <= max_tokens:
        return mc

    start, end = mc.marker_span
    left_words = mc.text[:start].split()
    marked_words = mc.text[start:end].split()
    right_words = mc.text[end:].split()

    truncated = False
    if len(marked_words) > max_tokens:
        # Keep the opener and as much of the mention as fits, then the closer.
        n_close = count_tokens(markers.close)
        tail = marked_words[len(marked_words) - n_close :] if n_close else []
        marked_words = marked_words[: max_tokens - n_close] + tail
        truncated = True
        keep_left = keep_right = 0
    else:
        budget = max_tokens - len(marked_words)
        keep_left = min(len(left_words), budget // 2)
        keep_right = min(len(right_words), budget - keep_left)
        keep_left = min(len(left_words), budget - keep_right)

    kept_left = left_words[len(left_words) - keep_left :] if keep_left else []
    kept_right = right_words[:keep_right]
    marked_text = " ".join(marked_words)
    prefix = " ".join(kept_left)
    if prefix:
        prefix += " "
    suffix = " ".join(kept_right)
    text = prefix + marked_text + (" " + suffix if suffix else "")
    return MarkedContext(
        text=text,
        mention_id=mc.mention_id,
        marker_span=(len(prefix), len(prefix) + len(marked_text)),
        mention_truncated=truncated or mc.mention_truncated,
    )


def partition_by_date(
    mentions: list[MentionRecord], window_days: int = 1
) -> dict[Date | None, list[MentionRecord]]:
    """Group mentions into per-date buckets, order-stable within each bucket.

    window_days > 1 widens a bucket to that many consecutive days (keyed by
    the bucket's first day). Undated mentions share a single None bucket.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    parts: dict[Date | None, list[MentionRecord]] = {}
    for m in mentions:
        if m.date is None:
            key = None
        elif window_days == 1:
            key = m.date
        else:
            ordinal = m.date.toordinal()
            key = Date.fromordinal(ordinal - (ordinal % window_days))
        parts.setdefault(key, []).append(m)
    return parts


def date_key_str(key: Date | None) -> str:
    return key.isoformat() if key is not None else "undated"


def prepare_marked(
    mentions: list[MentionRecord],
    markers: MarkerConfig,
    window_tokens: int,
) -> list[MarkedContext]:
    """Mark every mention, then truncate each to the token window."""
    return [
        truncate_to_window(mark_mention(m, markers), window_tokens, markers)
        for m in mentions
    ]
