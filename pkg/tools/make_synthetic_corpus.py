"""Regenerate the committed synthetic test corpus under tests/data/.

The corpus is engineered so the default pipeline is exact — accuracy 1.0
on both scopes, ARI 1.0 — while each ablation flag visibly changes at
least one decision:

* one degraded mention links only through its cluster prototype, so
  --no-coref flips it to out-of-KB;
* two knowledgebase entries share a byte-identical template (same-name
  father and son), so the popularity re-rank decides between them and
  --no-qrank flips the winner;
* a modern namesake whose page paraphrases one entity's newspaper
  coverage out-scores the real target, so --no-birth-filter flips that
  cluster to the namesake.

Every constraint is re-verified numerically here before files are
written; the script fails loudly if wording drifts out of tolerance.
Run from the repository root: python3 tools/make_synthetic_corpus.py
"""

import json
import subprocess
import sys
import tempfile
from datetime import date
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from personlink.cli import main as cli_main
from personlink.corpus import (
    MentionRecord,
    dump_mention,
    mark_mention,
    truncate_to_window,
)
from personlink.encode import cosine_similarity, hash_embed
from personlink.kb import render_template

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"
CORPUS_END = "1870-12-31"
CLUSTER_THRESHOLD = 0.15
MARGIN = 0.01

# ---------------------------------------------------------------------------
# mention corpus: 6 entities x 5 mentions over 2 dates

OCT = "1862-10-07"
APR = "1863-04-22"

def mention_rows():
    rows = []

    def add(date_s, gold, surface, context):
        i = context.index(surface)
        rows.append(
            dict(date=date_s, gold=gold, surface=surface, context=context,
                 start=i, end=i + len(surface))
        )

    # E1: Q101 Alice Hartwell. Last mention is degraded (initials, typo) and
    # is the one that must link only via its cluster.
    base1 = "reviewed the Union volunteers at Fort Keene before the autumn muster"
    add(OCT, "Q101", "Alice Hartwell", f"Gen. Alice Hartwell {base1} on Tuesday.")
    add(OCT, "Q101", "Alice Hartwell", f"Gen. Alice Hartwell {base1} on Friday.")
    add(OCT, "Q101", "Alice Hartwell", f"Gen. Alice Hartwell {base1} last week.")
    add(OCT, "Q101", "Alice Hartwell", f"Gen. Alice Hartwell {base1} this morning.")
    add(OCT, "Q101", "A. Hartwel", f"Gen. A. Hartwel {base1} yesterday.")

    # E2: Q103 Edmund Varrick the younger; the knowledgebase also holds his
    # father Q102 with a byte-identical template.
    base2 = "addressed the Senate chamber on the river tariff bill during the late session"
    add(OCT, "Q103", "Edmund Varrick", f"Senator Edmund Varrick {base2} on Monday.")
    add(OCT, "Q103", "Edmund Varrick", f"Senator Edmund Varrick {base2} on Thursday.")
    add(OCT, "Q103", "Edmund Varrick", f"Senator Edmund Varrick {base2} this session.")
    add(OCT, "Q103", "Edmund Varrick", f"Senator Edmund Varrick {base2} last evening.")
    add(OCT, "Q103", "Varrick", f"Senator Varrick {base2} once more.")

    # X1: Delphine Mercer, not in the knowledgebase.
    base3 = "hosted the soldiers' relief bazaar at the Lyceum hall for the wounded"
    add(OCT, "NOT_IN_KB#1", "Delphine Mercer", f"Mrs. Delphine Mercer {base3} on Saturday.")
    add(OCT, "NOT_IN_KB#1", "Delphine Mercer", f"Mrs. Delphine Mercer {base3} on Sunday.")
    add(OCT, "NOT_IN_KB#1", "Delphine Mercer", f"Mrs. Delphine Mercer {base3} all week.")
    add(OCT, "NOT_IN_KB#1", "Delphine Mercer", f"Mrs. Delphine Mercer {base3} again.")
    add(OCT, "NOT_IN_KB#1", "Mercer", f"Mrs. Mercer {base3} once more.")

    # E3: Q104 Samuel Okafor, surgeon.
    base4 = "performed the field amputations at the Cedar Hollow hospital tents"
    add(APR, "Q104", "Samuel Okafor", f"Dr. Samuel Okafor {base4} through the night.")
    add(APR, "Q104", "Samuel Okafor", f"Dr. Samuel Okafor {base4} on Wednesday.")
    add(APR, "Q104", "Samuel Okafor", f"Dr. Samuel Okafor {base4} without rest.")
    add(APR, "Q104", "Samuel Okafor", f"Dr. Samuel Okafor {base4} after the skirmish.")
    add(APR, "Q104", "Okafor", f"Dr. Okafor {base4} once more.")

    # E4: Q105 Marguerite Chen; a modern namesake Q666 paraphrases this
    # coverage on her page.
    base5 = "kept the military telegraph line open at Harper's Landing under fire"
    add(APR, "Q105", "Marguerite Chen", f"Miss Marguerite Chen {base5} on Tuesday.")
    add(APR, "Q105", "Marguerite Chen", f"Miss Marguerite Chen {base5} on Thursday.")
    add(APR, "Q105", "Marguerite Chen", f"Miss Marguerite Chen {base5} all night.")
    add(APR, "Q105", "Marguerite Chen", f"Miss Marguerite Chen {base5} again.")
    add(APR, "Q105", "Chen", f"Miss Chen {base5} once more.")

    # X2: Tobias Quint, not in the knowledgebase.
    base6 = "auctioned the confiscated cotton bales at the customs wharf"
    add(APR, "NOT_IN_KB#2", "Tobias Quint", f"Mr. Tobias Quint {base6} on Friday.")
    add(APR, "NOT_IN_KB#2", "Tobias Quint", f"Mr. Tobias Quint {base6} at noon.")
    add(APR, "NOT_IN_KB#2", "Tobias Quint", f"Mr. Tobias Quint {base6} to the traders.")
    add(APR, "NOT_IN_KB#2", "Tobias Quint", f"Mr. Tobias Quint {base6} before the crowd.")
    add(APR, "NOT_IN_KB#2", "Quint", f"Mr. Quint {base6} once more.")
    return rows


# ---------------------------------------------------------------------------
# knowledgebase candidates (11; the birth filter prunes Q666)

VARRICK_TEMPLATE = dict(
    label="Edmund Varrick",
    aliases=["Senator Varrick", "E. Varrick"],
    occupations=["politician", "lawyer"],
    first_paragraph=(
        "Edmund Varrick was a senator remembered for addressing the Senate "
        "chamber on the river tariff bill."
    ),
)

def candidate_rows():
    rows = [
        dict(qid="Q101", label="Alice Hartwell", instance_type="human",
             aliases=["General Hartwell", "A. Hartwell"],
             occupations=["military officer"],
             birth_date="1815-03-02", death_date="1881-06-30",
             page_title="Alice Hartwell",
             first_paragraph=(
                 "Alice Hartwell was a Union general who reviewed volunteers "
                 "at Fort Keene during the autumn muster."
             )),
        # Q102/Q103: father and son with identical labels, aliases,
        # occupations, and lead paragraph -> byte-identical templates.
        dict(qid="Q102", instance_type="human",
             birth_date="1791-01-14", death_date="1848-11-02",
             page_title="Edmund Varrick (elder)", **VARRICK_TEMPLATE),
        dict(qid="Q103", instance_type="human",
             birth_date="1820-05-19", death_date="1890-02-11",
             page_title="Edmund Varrick (younger)", **VARRICK_TEMPLATE),
        dict(qid="Q104", label="Samuel Okafor", instance_type="human",
             aliases=["Dr. Okafor"],
             occupations=["surgeon"],
             birth_date="1822-09-09", death_date="1875-04-17",
             page_title="Samuel Okafor",
             first_paragraph=(
                 "Samuel Okafor was a field surgeon known for the hospital "
                 "tents at Cedar Hollow."
             )),
        dict(qid="Q105", label="Marguerite Chen", instance_type="human",
             aliases=["M. Chen"],
             occupations=["telegraph operator"],
             birth_date="1840-12-01", death_date="1902-08-23",
             page_title="Marguerite Chen",
             first_paragraph=(
                 "Marguerite Chen was a telegraph operator stationed at "
                 "Harper's Landing."
             )),
        dict(qid="Q106", label="Rosalind Hartwell", instance_type="human",
             aliases=["R. Hartwell"],
             occupations=["novelist"],
             birth_date="1830-07-21", death_date="1899-01-05",
             page_title="Rosalind Hartwell",
             first_paragraph=(
                 "Rosalind Hartwell was a novelist of coastal romances and "
                 "serialized fiction."
             )),
        dict(qid="Q107", label="Pierre Lachaille", instance_type="human",
             aliases=["P. Lachaille"],
             occupations=["diplomat"],
             birth_date="1801-02-28", death_date="1869-10-10",
             page_title="Pierre Lachaille",
             first_paragraph=(
                 "Pierre Lachaille was a consular diplomat posted to several "
                 "Atlantic legations."
             )),
        dict(qid="Q108", label="Augusta Breen", instance_type="human",
             aliases=["Mrs. Breen"],
             occupations=["philanthropist"],
             birth_date="1812-04-04", death_date="1884-03-15",
             page_title="Augusta Breen",
             first_paragraph=(
                 "Augusta Breen was a philanthropist who endowed orphan "
                 "schools and lending libraries."
             )),
        dict(qid="Q109", label="Theodore Mosley", instance_type="human",
             aliases=["T. Mosley"],
             occupations=["railroad engineer"],
             birth_date="1825-06-11", death_date="1888-12-02",
             page_title="Theodore Mosley",
             first_paragraph=(
                 "Theodore Mosley was a railroad engineer who surveyed the "
                 "western grade crossings."
             )),
        dict(qid="Q110", label="Benedict Okafor", instance_type="human",
             aliases=["B. Okafor"],
             occupations=["merchant"],
             birth_date="1818-10-30", death_date="1877-07-19",
             page_title="Benedict Okafor",
             first_paragraph=(
                 "Benedict Okafor was a dry-goods merchant with warehouses "
                 "on the upper wharf."
             )),
        # Modern namesake of Q105; born after the corpus end, pruned by the
        # birth filter. Her page paraphrases the 1863 coverage, so without
        # the filter she out-scores the real telegraph operator.
        dict(qid="Q666", label="Marguerite Chen", instance_type="human",
             aliases=["Miss Chen"],
             occupations=["historian"],
             birth_date="1985-03-14", death_date=None,
             page_title="Marguerite Chen (historian)",
             first_paragraph=(
                 "Miss Marguerite Chen kept the military telegraph line open "
                 "at Harper's Landing under fire, as retold in her study of "
                 "the landing."
             )),
    ]
    return rows


QRANK = {
    "Q101": 420, "Q102": 15, "Q103": 8800, "Q104": 310, "Q105": 95,
    "Q106": 1200, "Q107": 45, "Q108": 60, "Q109": 75, "Q110": 30,
    "Q666": 5100,
}


# ---------------------------------------------------------------------------
# toy link dump for mining tests: 3 entities x 4 contexts

def toy_rows():
    links = []

    def add(page, qid, surface, context, in_ctx=()):
        i = context.index(surface)
        links.append(
            dict(page_id=page, target_qid=qid, context=context,
                 anchor_start=i, anchor_end=i + len(surface),
                 in_context_qids=list(in_ctx))
        )

    t1 = "chaired the harbor commission inquiry into the dredging accounts"
    add("p01", "QT1", "Edwin Stanbury", f"Edwin Stanbury {t1} on Monday.", ["QT2"])
    add("p02", "QT1", "Edwin Stanbury", f"Edwin Stanbury {t1} on Tuesday.")
    add("p03", "QT1", "Edwin Stanbury", f"Edwin Stanbury {t1} last month.")
    add("p04", "QT1", "Edwin Stanbury", f"Edwin Stanbury {t1} again.")

    t2 = "published the pamphlet against the dredging accounts from his printing house"
    add("p05", "QT2", "Edward Stanbury", f"Edward Stanbury {t2} on Wednesday.")
    add("p06", "QT2", "Edward Stanbury", f"Edward Stanbury {t2} in March.")
    add("p07", "QT2", "Edward Stanbury", f"Edward Stanbury {t2} at last.")
    add("p08", "QT2", "Edward Stanbury", f"Edward Stanbury {t2} quietly.")

    t3 = "sailed the survey schooner beyond the shoals for the coastal charts"
    add("p09", "QT3", "Cordelia Stanbury", f"Cordelia Stanbury {t3} in April.")
    add("p10", "QT3", "Cordelia Stanbury", f"Cordelia Stanbury {t3} in May.")
    add("p11", "QT3", "Cordelia Stanbury", f"Cordelia Stanbury {t3} northward.")
    add("p12", "QT3", "Cordelia Stanbury", f"Cordelia Stanbury {t3} once more.")
    return links


TOY_GROUPS = [dict(group_name="Stanbury", qids=["QT1", "QT2"])]
TOY_FAMILIES = [dict(qid_a="QT1", qid_b="QT3", relation="sibling")]

def toy_template_rows():
    return [
        dict(qid="QT1", label="Edwin Stanbury", instance_type="human",
             aliases=["E. Stanbury"], occupations=["commissioner"],
             birth_date="1810-01-01", death_date="1870-01-01",
             page_title="Edwin Stanbury",
             first_paragraph="Edwin Stanbury chaired the harbor commission."),
        dict(qid="QT2", label="Edward Stanbury", instance_type="human",
             aliases=["Ed. Stanbury"], occupations=["printer"],
             birth_date="1812-02-02", death_date="1871-02-02",
             page_title="Edward Stanbury",
             first_paragraph="Edward Stanbury ran a printing house."),
        dict(qid="QT3", label="Cordelia Stanbury", instance_type="human",
             aliases=["C. Stanbury"], occupations=["surveyor"],
             birth_date="1815-03-03", death_date="1880-03-03",
             page_title="Cordelia Stanbury",
             first_paragraph="Cordelia Stanbury charted the coastal shoals."),
    ]


# ---------------------------------------------------------------------------
# numeric verification

def embed_mention(row):
    m = MentionRecord(
        mention_id="tmp", doc_id="tmp", date=date.fromisoformat(row["date"]),
        surface=row["surface"], context=row["context"],
        span=(row["start"], row["end"]),
    )
    return hash_embed(truncate_to_window(mark_mention(m), 256).text)


def template_text(row):
    return render_template(
        row["label"], row["instance_type"], row["aliases"],
        row["occupations"], row["first_paragraph"],
    )


def verify_geometry(mentions, candidates):
    temps = {c["qid"]: hash_embed(template_text(c)) for c in candidates}
    by_entity = {}
    for row in mentions:
        by_entity.setdefault(row["gold"], []).append(embed_mention(row))

    protos = {}
    for gold, vecs in by_entity.items():
        p = np.mean(vecs, axis=0)
        protos[gold] = p / np.linalg.norm(p)

    kb_default = [q for q in temps if q != "Q666"]

    def top2(proto, qids):
        sims = sorted(((cosine_similarity(proto, temps[q]), q) for q in qids),
                      reverse=True)
        return sims[:3]

    in_kb_tops, notes = [], []
    for gold, proto in sorted(protos.items()):
        top = top2(proto, kb_default)
        notes.append(f"{gold}: " + ", ".join(f"{q}={s:.4f}" for s, q in top))
        if gold.startswith("NOT_IN_KB"):
            continue
        (s1, q1), (s2, q2) = top[0], top[1]
        in_kb_tops.append(s1)
        if gold == "Q103":
            assert {q1, q2} == {"Q102", "Q103"}, top
            assert abs(s1 - s2) < 1e-12, "twin templates must tie exactly"
            s3 = top[2][0]
            assert s1 - s3 >= MARGIN + 0.05, "third neighbor inside the tie band"
        else:
            assert q1 == gold, f"{gold} nearest is {q1}"
            assert (1 - s2) - (1 - s1) >= MARGIN + 0.05, f"{gold} gap too small"

    out_tops = [top2(protos[g], kb_default)[0][0]
                for g in protos if g.startswith("NOT_IN_KB")]

    noisy = next(r for r in mentions if r["surface"] == "A. Hartwel")
    noisy_top = top2(hash_embed(
        truncate_to_window(mark_mention(MentionRecord(
            "tmp", "tmp", date.fromisoformat(noisy["date"]), noisy["surface"],
            noisy["context"], (noisy["start"], noisy["end"]))), 256).text
    ), kb_default)[0][0]

    lo = max(max(out_tops), noisy_top)
    hi = min(in_kb_tops)
    assert hi - lo >= 0.03, f"threshold window too tight: ({lo:.4f}, {hi:.4f})"
    theta = round((lo + hi) / 2, 2)
    assert lo < theta <= hi

    # Without the birth filter the namesake must win E4's cluster outright.
    s666 = cosine_similarity(protos["Q105"], temps["Q666"])
    s105 = cosine_similarity(protos["Q105"], temps["Q105"])
    assert s666 >= theta and s666 - s105 >= MARGIN + 0.05, (s666, s105)

    # Same-date different-entity mentions must stay well apart, and
    # within-entity mentions close, for threshold-0.15 clustering.
    for gold_a, vecs_a in by_entity.items():
        for i, u in enumerate(vecs_a):
            for j, v in enumerate(vecs_a):
                if i < j:
                    assert cosine_similarity(u, v) >= 1 - CLUSTER_THRESHOLD - 0.03, (
                        gold_a, i, j, cosine_similarity(u, v))
        for gold_b, vecs_b in by_entity.items():
            if gold_a < gold_b:
                worst = max(cosine_similarity(u, v) for u in vecs_a for v in vecs_b)
                assert worst <= 1 - CLUSTER_THRESHOLD - 0.05, (gold_a, gold_b, worst)

    return theta, notes, dict(
        threshold_window=[round(lo, 4), round(hi, 4)],
        noisy_solo_top=round(noisy_top, 4),
        namesake_vs_real=[round(s666, 4), round(s105, 4)],
    )


# ---------------------------------------------------------------------------
# pipeline run + golden file

def run_pipeline(tmp, theta, flags=()):
    tmp = Path(tmp)
    out = tmp / ("run_" + "_".join(f.strip("-") for f in flags) if flags else "run_default")
    kb_flags = [f for f in flags if f == "--no-birth-filter"]
    assert cli_main([
        "build-kb", "--candidates", str(DATA_DIR / "kb_candidates.jsonl"),
        "--corpus-end", CORPUS_END, "--out", str(out / "templates.jsonl"),
        *kb_flags,
    ]) == 0
    assert cli_main([
        "index", "--templates", str(out / "templates.jsonl"),
        "--out", str(out / "kb.idx"),
    ]) == 0
    assert cli_main([
        "coref", "--mentions", str(DATA_DIR / "mentions.jsonl"),
        "--out-dir", str(out / "coref"),
    ]) == 0
    assert cli_main([
        "resolve", "--mentions", str(DATA_DIR / "mentions.jsonl"),
        "--index", str(out / "kb.idx"), "--qrank", str(DATA_DIR / "qrank.csv"),
        "--coref-dir", str(out / "coref"), "--out-dir", str(out / "resolve"),
        "--no-match-threshold", str(theta), *flags,
    ]) == 0
    return (out / "resolve" / "decisions.tsv").read_text()


def main():
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    mentions = mention_rows()
    candidates = candidate_rows()
    assert len(mentions) == 30 and len(candidates) == 11

    theta, notes, diag = verify_geometry(mentions, candidates)
    print("chosen no-match threshold:", theta)
    for n in notes:
        print(" ", n)
    print(" ", diag)

    lines = []
    for i, row in enumerate(mentions, start=1):
        m = MentionRecord(
            mention_id=f"m{i:02d}", doc_id=f"doc{i:02d}",
            date=date.fromisoformat(row["date"]), surface=row["surface"],
            context=row["context"], span=(row["start"], row["end"]),
            gold_qid=row["gold"],
        )
        lines.append(dump_mention(m))
    (DATA_DIR / "mentions.jsonl").write_text("\n".join(lines) + "\n")

    (DATA_DIR / "kb_candidates.jsonl").write_text(
        "".join(json.dumps(c, ensure_ascii=False) + "\n" for c in candidates)
    )
    (DATA_DIR / "qrank.csv").write_text(
        "qid,rank\n" + "".join(f"{q},{r}\n" for q, r in QRANK.items())
    )

    (DATA_DIR / "toy_links.jsonl").write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in toy_rows())
    )
    (DATA_DIR / "toy_groups.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in TOY_GROUPS)
    )
    (DATA_DIR / "toy_families.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in TOY_FAMILIES)
    )
    (DATA_DIR / "toy_templates.jsonl").write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in toy_template_rows())
    )

    with tempfile.TemporaryDirectory() as tmp:
        default = run_pipeline(tmp, theta)
        no_coref = run_pipeline(tmp, theta, ("--no-coref",))
        no_qrank = run_pipeline(tmp, theta, ("--no-qrank",))
        no_birth = run_pipeline(tmp, theta, ("--no-birth-filter",))

    for name, ablated in (("no_coref", no_coref), ("no_qrank", no_qrank),
                          ("no_birth", no_birth)):
        changed = sum(
            1 for a, b in zip(default.splitlines()[1:], ablated.splitlines()[1:])
            if a.split("\t")[2] != b.split("\t")[2]
        )
        print(f"{name}: {changed} decisions changed")
        assert changed >= 1, f"{name} ablation changed nothing"

    gold = {f"m{i:02d}": row["gold"] for i, row in enumerate(mentions, start=1)}
    wrong = [
        line for line in default.splitlines()[1:]
        if not _decision_ok(line, gold)
    ]
    assert not wrong, wrong

    (DATA_DIR / "golden_decisions.tsv").write_text(default)
    (DATA_DIR / "corpus_meta.json").write_text(json.dumps(dict(
        no_match_threshold=theta,
        corpus_end=CORPUS_END,
        cluster_threshold=CLUSTER_THRESHOLD,
        margin=MARGIN,
        diagnostics=diag,
    ), indent=2, sort_keys=True) + "\n")
    print("wrote", DATA_DIR)


def _decision_ok(line, gold):
    fields = line.split("\t")
    mention_id, decision = fields[0], fields[2]
    g = gold[mention_id]
    if g.startswith("NOT_IN_KB"):
        return decision == "NOT_IN_KB"
    return decision == g


if __name__ == "__main__":
    main()
