from __future__ import annotations

from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from personlink.corpus import (
    MarkerConfig,
    MentionRecord,
    count_tokens,
    dump_mention,
    load_mentions,
    mark_mention,
    parse_mention_line,
    partition_by_date,
    prepare_marked,
    strip_markers,
    truncate_to_window,
)
from personlink.errors import ParseError, RecordValidationError


def _mention(context: str, surface: str, mention_id="m1", d=date(1862, 1, 5)) -> MentionRecord:
    start = context.index(surface)
    return MentionRecord(
        mention_id=mention_id,
        doc_id="doc1",
        date=d,
        surface=surface,
        context=context,
        span=(start, start + len(surface)),
    )


# ---------------------------------------------------------------------------
# splice oracle: an independent marker inserter used to check mark_mention

def _splice_reference(context: str, span: tuple[int, int], opener: str, closer: str) -> str:
    s, e = span
    return context[:s] + opener + context[s:e] + closer + context[e:]


class TestMarkMention:
    def test_kennedy_example(self):
        m = _mention("Kennedy spoke.", "Kennedy")
        assert mark_mention(m).text == "[M] Kennedy [\\M] spoke."

    def test_whole_context_span(self):
        m = _mention("Ulysses Grant", "Ulysses Grant")
        assert mark_mention(m).text == "[M] Ulysses Grant [\\M]"

    def test_literal_marker_text_in_context(self):
        """Pre-existing [M] text is data, not a marker; insertion happens
        exactly once, at the span."""
        context = "the [M] token appears before Kennedy spoke."
        m = _mention(context, "Kennedy")
        marked = mark_mention(m)
        assert marked.text == _splice_reference(context, m.span, "[M] ", " [\\M]")
        assert marked.text.count("[M] ") == 2  # one literal, one inserted
        assert marked.text.count(" [\\M]") == 1

    def test_custom_markers(self):
        m = _mention("Kennedy spoke.", "Kennedy")
        marked = mark_mention(m, MarkerConfig(open="<< ", close=" >>"))
        assert marked.text == "<< Kennedy >> spoke."

    def test_strip_round_trip(self):
        m = _mention("Gen. Hartwell reviewed the troops.", "Hartwell")
        assert strip_markers(mark_mention(m)) == m.context

    def test_marker_span_covers_marked_region(self):
        m = _mention("Kennedy spoke.", "Kennedy")
        marked = mark_mention(m)
        s, e = marked.marker_span
        assert marked.text[s:e] == "[M] Kennedy [\\M]"


@given(
    left=st.text(alphabet=st.characters(codec="utf-8", exclude_characters="\x00"), max_size=40),
    surface=st.text(alphabet=st.characters(codec="utf-8", exclude_characters="\x00"), min_size=1, max_size=20),
    right=st.text(alphabet=st.characters(codec="utf-8", exclude_characters="\x00"), max_size=40),
)
def test_mark_matches_splice_oracle(left, surface, right):
    context = left + surface + right
    m = MentionRecord(
        mention_id="m", doc_id="d", date=None, surface=surface,
        context=context, span=(len(left), len(left) + len(surface)),
    )
    marked = mark_mention(m)
    assert marked.text == _splice_reference(context, m.span, "[M] ", " [\\M]")
    assert strip_markers(marked) == context


# ---------------------------------------------------------------------------
# character-level reference truncator (independent of the implementation's
# bookkeeping): drop words greedily from the far ends, mention centered

def _truncate_reference(marked_text: str, span: tuple[int, int], max_tokens: int) -> list[str]:
    left = marked_text[: span[0]].split()
    mid = marked_text[span[0] : span[1]].split()
    right = marked_text[span[1] :].split()
    budget = max_tokens - len(mid)
    keep_left = min(len(left), budget // 2)
    keep_right = min(len(right), budget - keep_left)
    keep_left = min(len(left), budget - keep_right)
    return (left[len(left) - keep_left :] if keep_left else []) + mid + right[:keep_right]


class TestTruncateToWindow:
    def test_short_context_unchanged(self):
        marked = mark_mention(_mention("Kennedy spoke.", "Kennedy"))
        assert truncate_to_window(marked, 256) is marked

    def test_long_context_fits_window(self):
        context = " ".join(f"w{i}" for i in range(500)) + " Kennedy " + " ".join(
            f"v{i}" for i in range(500)
        )
        marked = mark_mention(_mention(context, "Kennedy"))
        out = truncate_to_window(marked, 256)
        assert count_tokens(out.text) <= 256
        s, e = out.marker_span
        assert out.text[s:e] == "[M] Kennedy [\\M]"

    def test_mention_at_position_zero(self):
        """No left context: the whole leftover budget goes right."""
        context = "Kennedy " + " ".join(f"v{i}" for i in range(100))
        marked = mark_mention(_mention(context, "Kennedy"))
        out = truncate_to_window(marked, 10)
        expected = _truncate_reference(marked.text, marked.marker_span, 10)
        assert out.text.split() == expected
        assert out.text.startswith("[M] Kennedy [\\M]")
        assert count_tokens(out.text) == 10

    def test_matches_reference_on_two_sided_contexts(self):
        for n_left, n_right, window in [(50, 50, 21), (3, 80, 20), (80, 3, 20), (10, 10, 24)]:
            context = (
                " ".join(f"l{i}" for i in range(n_left))
                + " Alice Hartwell "
                + " ".join(f"r{i}" for i in range(n_right))
            )
            marked = mark_mention(_mention(context, "Alice Hartwell"))
            out = truncate_to_window(marked, window)
            assert out.text.split() == _truncate_reference(
                marked.text, marked.marker_span, window
            )

    def test_idempotent(self):
        context = " ".join(f"w{i}" for i in range(300)) + " Kennedy end."
        marked = mark_mention(_mention(context, "Kennedy"))
        once = truncate_to_window(marked, 64)
        twice = truncate_to_window(once, 64)
        assert twice.text == once.text
        assert twice.marker_span == once.marker_span

    def test_oversized_mention_truncates_tail_and_flags(self):
        surface = " ".join(f"name{i}" for i in range(30))
        context = f"prefix {surface} suffix"
        marked = mark_mention(_mention(context, surface))
        out = truncate_to_window(marked, 12)
        assert out.mention_truncated
        assert count_tokens(out.text) <= 12
        words = out.text.split()
        assert words[0] == "[M]"
        assert words[-1] == "[\\M]"

    def test_window_too_small_for_markers(self):
        marked = mark_mention(_mention("Kennedy spoke.", "Kennedy"))
        with pytest.raises(ValueError):
            truncate_to_window(marked, 2)

    def test_custom_markers_counted(self):
        markers = MarkerConfig(open="<ENT> | ", close=" | </ENT>")
        context = " ".join(f"w{i}" for i in range(50)) + " Kennedy tail."
        marked = mark_mention(_mention(context, "Kennedy"), markers)
        out = truncate_to_window(marked, 12, markers)
        assert count_tokens(out.text) <= 12
        s, e = out.marker_span
        assert out.text[s:e] == "<ENT> | Kennedy | </ENT>"


@settings(max_examples=200)
@given(
    n_left=st.integers(0, 60),
    n_right=st.integers(0, 60),
    window=st.integers(4, 48),
)
def test_truncate_bounded_and_keeps_markers(n_left, n_right, window):
    context = (
        " ".join(f"l{i}" for i in range(n_left))
        + (" " if n_left else "")
        + "Kennedy"
        + ((" " + " ".join(f"r{i}" for i in range(n_right))) if n_right else "")
    )
    marked = mark_mention(_mention(context, "Kennedy"))
    out = truncate_to_window(marked, window)
    assert count_tokens(out.text) <= max(window, count_tokens(marked.text))
    s, e = out.marker_span
    assert out.text[s:e].startswith("[M]")
    assert out.text[s:e].endswith("[\\M]")
    again = truncate_to_window(out, window)
    assert again.text == out.text


# ---------------------------------------------------------------------------
# records and files

class TestMentionRecords:
    def test_validate_rejects_span_mismatch(self):
        m = MentionRecord(
            mention_id="m1", doc_id="d", date=None, surface="Kennedy",
            context="Johnson spoke.", span=(0, 7),
        )
        with pytest.raises(RecordValidationError, match="m1"):
            m.validate()

    def test_validate_rejects_out_of_bounds_span(self):
        m = MentionRecord(
            mention_id="m1", doc_id="d", date=None, surface="x",
            context="abc", span=(2, 9),
        )
        with pytest.raises(RecordValidationError):
            m.validate()

    def test_parse_line_round_trip(self):
        m = _mention("Kennedy spoke.", "Kennedy")
        again = parse_mention_line(dump_mention(m))
        assert again == m

    def test_parse_rejects_bad_json(self):
        with pytest.raises(ParseError) as exc:
            parse_mention_line("{not json", path="f.jsonl", line_no=7)
        assert "line 7" in str(exc.value)

    def test_load_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        assert load_mentions(p) == []

    def test_load_preserves_order_and_checks_duplicates(self, tmp_path):
        a = _mention("Kennedy spoke.", "Kennedy", mention_id="a")
        b = _mention("Grant listened.", "Grant", mention_id="b")
        p = tmp_path / "m.jsonl"
        p.write_text(dump_mention(a) + "\n" + dump_mention(b) + "\n")
        assert [m.mention_id for m in load_mentions(p)] == ["a", "b"]

        p.write_text(dump_mention(a) + "\n" + dump_mention(a) + "\n")
        with pytest.raises(RecordValidationError, match="duplicate"):
            load_mentions(p)

    def test_load_one_record(self, tmp_path):
        m = _mention("Kennedy spoke.", "Kennedy")
        p = tmp_path / "m.jsonl"
        p.write_text(dump_mention(m) + "\n")
        records = load_mentions(p)
        assert len(records) == 1
        assert records[0].surface == "Kennedy"

    def test_load_rejects_span_surface_mismatch(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(
            '{"mention_id": "m1", "doc_id": "d", "date": null, '
            '"surface": "Kennedy", "context": "Johnson spoke.", '
            '"span_start": 0, "span_end": 7}\n'
        )
        with pytest.raises((RecordValidationError, ParseError)):
            load_mentions(p)


class TestPartitionByDate:
    def test_single_date(self):
        ms = [_mention("Kennedy spoke.", "Kennedy", mention_id=f"m{i}") for i in range(3)]
        parts = partition_by_date(ms)
        assert set(parts) == {date(1862, 1, 5)}
        assert [m.mention_id for m in parts[date(1862, 1, 5)]] == ["m0", "m1", "m2"]

    def test_two_dates_partition(self):
        ms = [
            _mention("Kennedy spoke.", "Kennedy", mention_id="a", d=date(1862, 1, 5)),
            _mention("Kennedy spoke.", "Kennedy", mention_id="b", d=date(1862, 1, 6)),
            _mention("Kennedy spoke.", "Kennedy", mention_id="c", d=date(1862, 1, 5)),
        ]
        parts = partition_by_date(ms)
        assert len(parts) == 2
        assert sum(len(v) for v in parts.values()) == 3

    def test_empty_input(self):
        assert partition_by_date([]) == {}

    def test_undated_bucket(self):
        ms = [
            _mention("Kennedy spoke.", "Kennedy", mention_id="a", d=None),
            _mention("Kennedy spoke.", "Kennedy", mention_id="b", d=date(1862, 1, 5)),
        ]
        parts = partition_by_date(ms)
        assert {m.mention_id for m in parts[None]} == {"a"}

    def test_window_days_groups_consecutive_days(self):
        ms = [
            _mention("Kennedy spoke.", "Kennedy", mention_id="a", d=date(1862, 1, 5)),
            _mention("Kennedy spoke.", "Kennedy", mention_id="b", d=date(1862, 1, 6)),
            _mention("Kennedy spoke.", "Kennedy", mention_id="c", d=date(1862, 1, 9)),
        ]
        parts = partition_by_date(ms, window_days=3)
        sizes = sorted(len(v) for v in parts.values())
        assert sum(sizes) == 3
        assert len(parts) == 2


def test_prepare_marked_applies_markers_and_window():
    context = " ".join(f"w{i}" for i in range(100)) + " Kennedy tail."
    ms = [_mention(context, "Kennedy")]
    out = prepare_marked(ms, MarkerConfig(), 16)
    assert len(out) == 1
    assert count_tokens(out[0].text) <= 16
    assert "[M] Kennedy [\\M]" in out[0].text
