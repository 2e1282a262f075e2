"""Pipeline commands: mine, build-kb, index, coref, resolve, eval, sweep.

One binary, shared config handling. Every command writes its outputs
atomically (temp file + rename), drops the exact RunConfig it ran with
into the output directory, and logs record counts at each stage. Exit
codes: 2 missing input file, 3 validation/config failure, 4 encoder
transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import date as Date
from pathlib import Path

from . import coref, corpus, disambig, encode, kb, mine
from .bridge import ENDPOINT_ENV_VAR
from .config import RunConfig
from .corpus import MarkerConfig
from .errors import (
    ConfigError,
    ParseError,
    RecordValidationError,
    TransportError,
    WireProtocolError,
)

log = logging.getLogger("personlink")

EXIT_MISSING_FILE = 2
EXIT_VALIDATION = 3
EXIT_TRANSPORT = 4


def write_atomic(path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _markers(cfg: RunConfig) -> MarkerConfig:
    return MarkerConfig(open=cfg.marker_open, close=cfg.marker_close)


def _encoder_handle(cfg: RunConfig) -> encode.EncoderHandle:
    if cfg.encoder == encode.HASH_STUB:
        return encode.hash_stub_handle(cfg.dim)
    return encode.EncoderHandle(
        kind=encode.EXTERNAL_BRIDGE, dim=cfg.dim, endpoint=cfg.bridge_endpoint
    )


def _write_run_config(out_dir, cfg: RunConfig, extra: dict) -> None:
    write_atomic(Path(out_dir) / "run_config.json", cfg.to_json(extra))


def build_config(args) -> tuple[RunConfig, dict]:
    """Merge config file, environment, and flags (most explicit wins).

    Returns the config plus a provenance map naming the source of each
    overridden value.
    """
    provenance: dict[str, str] = {}
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
        provenance["base"] = f"config:{args.config}"
    else:
        cfg = RunConfig()
        provenance["base"] = "defaults"

    env_endpoint = os.environ.get(ENDPOINT_ENV_VAR)
    if env_endpoint:
        cfg.bridge_endpoint = env_endpoint
        provenance["bridge_endpoint"] = f"env:{ENDPOINT_ENV_VAR}"

    scalar_flags = (
        "encoder",
        "bridge_endpoint",
        "dim",
        "window_tokens",
        "cluster_threshold",
        "no_match_threshold",
        "margin",
        "k",
        "date_window_days",
        "seed",
        "jobs",
    )
    for name in scalar_flags:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
            provenance[name] = "flag"
    for flag, field in (
        ("no_coref", "use_coref"),
        ("no_qrank", "use_qrank"),
        ("no_birth_filter", "use_birth_filter"),
    ):
        if getattr(args, flag, None):
            setattr(cfg, field, False)
            provenance[field] = "flag"
    cfg.validate()
    return cfg, provenance


# ---------------------------------------------------------------------------
# commands

def cmd_mine(args) -> int:
    cfg, provenance = build_config(args)
    records, dropped = mine.load_link_records(args.links)
    groups = mine.load_groups(args.groups) if args.groups else []
    families = mine.load_families(args.families) if args.families else []
    log.info(
        "mine: %d link records (%d self-links dropped), %d groups, %d families",
        len(records), dropped, len(groups), len(families),
    )

    markers = _markers(cfg)
    quota: dict[str, int | None] = {"positive": None}
    quota.update(mine.negative_quota(args.negatives))
    coref_result = mine.mine_coref_pairs(
        records, groups, families, quota,
        seed=cfg.seed, markers=markers, window_tokens=cfg.window_tokens,
        positive_cap=cfg.positive_cap,
    )
    out_dir = Path(args.out_dir)
    write_atomic(out_dir / "coref_pairs.tsv", mine.format_pairs(coref_result.pairs))
    report = {
        "coref": _mining_counts(coref_result),
        "negatives_requested": args.negatives,
        "self_links_dropped": dropped,
    }
    log.info("mine: %d coreference pairs", len(coref_result.pairs))

    if args.templates:
        templates = {t.qid: t for t in kb.load_templates(args.templates)}
        dq: dict[str, int | None] = {"positive": None}
        dq.update(
            mine.negative_quota(
                args.negatives,
                {k: w for k, w in mine.NEGATIVE_WEIGHTS.items() if k != "in_context_hard"},
            )
        )
        disambig_result = mine.mine_disambig_pairs(
            records, templates, groups, families, dq,
            seed=cfg.seed, markers=markers, window_tokens=cfg.window_tokens,
            positive_cap=cfg.positive_cap,
        )
        write_atomic(
            out_dir / "disambig_pairs.tsv", mine.format_pairs(disambig_result.pairs)
        )
        report["disambig"] = _mining_counts(disambig_result)
        log.info(
            "mine: %d disambiguation pairs (%d records skipped, no template)",
            len(disambig_result.pairs), disambig_result.skipped_no_template,
        )

    write_atomic(out_dir / "mine_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_run_config(out_dir, cfg, {"command": "mine", "links": str(args.links), **provenance})
    return 0


def _mining_counts(result: mine.MiningResult) -> dict:
    by_kind: dict[str, int] = {}
    for p in result.pairs:
        by_kind[p.kind] = by_kind.get(p.kind, 0) + 1
    out = {"pairs_by_kind": by_kind, "total": len(result.pairs)}
    if result.shortfall:
        out["shortfall"] = dict(sorted(result.shortfall.items()))
    if result.skipped_no_template:
        out["skipped_no_template"] = result.skipped_no_template
    return out


def cmd_build_kb(args) -> int:
    cfg, provenance = build_config(args)
    candidates = kb.load_entity_candidates(args.candidates)
    corpus_end = Date.fromisoformat(args.corpus_end)
    templates = kb.prune_kb(candidates, corpus_end, birth_filter=cfg.use_birth_filter)
    log.info(
        "build-kb: kept %d of %d candidates (birth filter %s)",
        len(templates), len(candidates), "on" if cfg.use_birth_filter else "off",
    )
    out = Path(args.out)
    write_atomic(out, "".join(kb.dump_template(t) + "\n" for t in templates))
    _write_run_config(
        out.parent, cfg,
        {"command": "build-kb", "candidates": str(args.candidates),
         "corpus_end": args.corpus_end, **provenance},
    )
    return 0


def cmd_index(args) -> int:
    cfg, provenance = build_config(args)
    templates = kb.load_templates(args.templates)
    handle = _encoder_handle(cfg)
    idx = kb.build_index(templates, handle)
    log.info("index: %d entities, dim %d", idx.count, idx.dim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp")
    os.close(fd)
    try:
        kb.save_index(idx, tmp)
        os.replace(tmp, out)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    _write_run_config(
        out.parent, cfg,
        {"command": "index", "templates": str(args.templates), **provenance},
    )
    return 0


def _cluster_partitions(mentions, cfg: RunConfig) -> list[coref.ClusterAssignment]:
    partitions = corpus.partition_by_date(mentions, cfg.date_window_days)
    keys = sorted(partitions, key=lambda d: corpus.date_key_str(d))
    handle = _encoder_handle(cfg)
    markers = _markers(cfg)

    def work(key):
        return coref.coref_partition(
            partitions[key], handle, cfg.cluster_threshold,
            markers=markers, window_tokens=cfg.window_tokens,
            renormalize_prototypes=cfg.renormalize_prototypes,
        )

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            assignments = list(pool.map(work, keys))
    else:
        assignments = [work(k) for k in keys]
    return assignments


def cmd_coref(args) -> int:
    cfg, provenance = build_config(args)
    mentions = corpus.load_mentions(args.mentions)
    assignments = _cluster_partitions(mentions, cfg)
    n_clusters = sum(len(a.clusters) for a in assignments)
    log.info(
        "coref: %d mentions, %d date partitions, %d clusters at threshold %g",
        len(mentions), len(assignments), n_clusters, cfg.cluster_threshold,
    )
    out_dir = Path(args.out_dir)
    write_atomic(out_dir / "clusters.tsv", coref.format_clusters(assignments))
    write_atomic(out_dir / "prototypes.tsv", coref.format_prototypes(assignments))
    _write_run_config(
        out_dir, cfg,
        {"command": "coref", "mentions": str(args.mentions), **provenance},
    )
    return 0


def cmd_resolve(args) -> int:
    cfg, provenance = build_config(args)
    if cfg.no_match_threshold is None:
        raise ConfigError(
            "no_match_threshold is required for resolve "
            "(set --no-match-threshold or put it in the config; "
            "the sweep command produces one)"
        )
    mentions = corpus.load_mentions(args.mentions)
    idx = kb.load_index(args.index)
    qrank = kb.load_qrank(args.qrank) if args.qrank else {}
    dcfg = disambig.DisambigConfig(
        no_match_threshold=cfg.no_match_threshold,
        margin=cfg.margin,
        k=cfg.k,
        use_qrank=cfg.use_qrank,
        use_coref=cfg.use_coref,
        use_birth_filter=cfg.use_birth_filter,
    )

    if not cfg.use_coref:
        partitions = corpus.partition_by_date(mentions, cfg.date_window_days)
        assignments = disambig.singleton_assignments(
            partitions, _encoder_handle(cfg), _markers(cfg), cfg.window_tokens,
            renormalize=cfg.renormalize_prototypes,
        )
        decisions = disambig.resolve_assignments(assignments, idx, dcfg, qrank)
    elif args.coref_dir:
        cluster_of = coref.parse_clusters((Path(args.coref_dir) / "clusters.tsv").read_text())
        prototypes = coref.parse_prototypes(
            (Path(args.coref_dir) / "prototypes.tsv").read_text()
        )
        decisions = {}
        resolved = {
            cid: disambig.resolve(idx, vec, dcfg, qrank, cluster_id=cid)
            for cid, vec in prototypes.items()
        }
        for mention_id, cid in cluster_of.items():
            if cid not in resolved:
                raise RecordValidationError(
                    f"mention {mention_id} references unknown cluster {cid}"
                )
            decisions[mention_id] = resolved[cid]
    else:
        assignments = _cluster_partitions(mentions, cfg)
        decisions = disambig.resolve_assignments(assignments, idx, dcfg, qrank)

    missing = [m.mention_id for m in mentions if m.mention_id not in decisions]
    if missing:
        raise RecordValidationError(f"no decision for mentions: {missing[:5]}")
    linked = sum(1 for r in decisions.values() if r.linked)
    log.info(
        "resolve: %d mentions, %d linked, %d out-of-KB (threshold %g)",
        len(decisions), linked, len(decisions) - linked, cfg.no_match_threshold,
    )
    out_dir = Path(args.out_dir)
    write_atomic(out_dir / "decisions.tsv", disambig.format_decisions(decisions))
    _write_run_config(
        out_dir, cfg,
        {
            "command": "resolve",
            "mentions": str(args.mentions),
            "index": str(args.index),
            "qrank": str(args.qrank) if args.qrank else None,
            "no_match_threshold_source": provenance.get(
                "no_match_threshold", provenance["base"]
            ),
            **provenance,
        },
    )
    return 0


def cmd_eval(args) -> int:
    cfg, provenance = build_config(args)
    decisions = disambig.parse_decisions(Path(args.decisions).read_text())
    mentions = corpus.load_mentions(args.mentions)
    gold = {m.mention_id: m.gold_qid for m in mentions if m.gold_qid is not None}
    if not gold:
        raise RecordValidationError("no gold labels in the mention file")

    acc_all = disambig.accuracy(decisions, gold, scope="all")
    acc_in_kb = disambig.accuracy(decisions, gold, scope="in_kb")
    mention_ids = sorted(gold)
    pred_labels = [decisions[m].cluster_id for m in mention_ids]
    gold_labels = [gold[m] for m in mention_ids]
    metrics = coref.clustering_metrics(pred_labels, gold_labels)

    report = {
        "accuracy_all": acc_all,
        "accuracy_in_kb": acc_in_kb,
        "ari": metrics.ari,
        "pairwise_precision": metrics.pairwise_precision,
        "pairwise_recall": metrics.pairwise_recall,
        "pairwise_f1": metrics.pairwise_f1,
        "mentions_scored": len(mention_ids),
    }
    for key in (
        "accuracy_all", "accuracy_in_kb", "ari",
        "pairwise_precision", "pairwise_recall", "pairwise_f1",
    ):
        print(f"{key} {report[key]:.6f}")
    if args.out:
        write_atomic(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
        _write_run_config(
            Path(args.out).parent, cfg,
            {"command": "eval", "decisions": str(args.decisions), **provenance},
        )
    return 0


def cmd_sweep(args) -> int:
    cfg, provenance = build_config(args)
    pairs = mine.parse_pairs(Path(args.pairs).read_text())
    if args.split != "all":
        pairs = [p for p in pairs if p.split == args.split]
    if not pairs:
        raise RecordValidationError(f"no pairs in split {args.split!r}")
    handle = _encoder_handle(cfg)
    a_vecs = encode.embed_batch(handle, [p.text_a for p in pairs])
    b_vecs = encode.embed_batch(handle, [p.text_b for p in pairs])
    labeled = [
        (encode.cosine_similarity(u, v), p.label == 1)
        for u, v, p in zip(a_vecs, b_vecs, pairs)
    ]
    threshold = disambig.sweep_no_match_threshold(labeled)
    log.info("sweep: %d pairs in split %s", len(pairs), args.split)
    print(f"no_match_threshold {threshold:.6f}")
    if args.out:
        write_atomic(
            args.out,
            json.dumps(
                {"no_match_threshold": threshold, "pairs_scored": len(pairs),
                 "split": args.split},
                indent=2, sort_keys=True,
            ) + "\n",
        )
        _write_run_config(
            Path(args.out).parent, cfg,
            {"command": "sweep", "pairs": str(args.pairs), **provenance},
        )
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _shared_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="run-config JSON to start from")
    p.add_argument("--jobs", type=int, help="worker pool size")
    p.add_argument("--encoder", choices=(encode.HASH_STUB, encode.EXTERNAL_BRIDGE))
    p.add_argument("--bridge-endpoint", dest="bridge_endpoint",
                   help=f"host:port or unix socket path (env {ENDPOINT_ENV_VAR} overrides config)")
    p.add_argument("--dim", type=int, help="embedding dimension")
    p.add_argument("--window-tokens", dest="window_tokens", type=int)
    p.add_argument("--cluster-threshold", dest="cluster_threshold", type=float,
                   help="average-linkage cosine-distance stop (default 0.15)")
    p.add_argument("--no-match-threshold", dest="no_match_threshold", type=float,
                   help="similarity below which a cluster is out of KB")
    p.add_argument("--margin", type=float, help="second-neighbor cosine-distance margin")
    p.add_argument("--k", type=int, help="neighbors retrieved (default 16)")
    p.add_argument("--date-window-days", dest="date_window_days", type=int)
    p.add_argument("--no-coref", dest="no_coref", action="store_true", default=None,
                   help="treat every mention as its own cluster")
    p.add_argument("--no-qrank", dest="no_qrank", action="store_true", default=None,
                   help="disable popularity re-ranking of near-ties")
    p.add_argument("--no-birth-filter", dest="no_birth_filter", action="store_true",
                   default=None, help="keep entities born after the corpus end")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = argparse.ArgumentParser(
        prog="personlink",
        description="Cross-document person linking for historical text",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", parents=[shared], help="mine contrastive training pairs")
    p.add_argument("--links", required=True, help="link-record JSONL")
    p.add_argument("--groups", help="disambiguation-group JSONL")
    p.add_argument("--families", help="family-relation JSONL")
    p.add_argument("--templates", help="entity-template JSONL (enables disambig pairs)")
    p.add_argument("--negatives", type=int, default=1000,
                   help="total negative-pair budget, split across kinds")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("build-kb", parents=[shared], help="prune candidates into templates")
    p.add_argument("--candidates", required=True, help="entity-candidate JSONL")
    p.add_argument("--corpus-end", required=True, help="YYYY-MM-DD")
    p.add_argument("--out", required=True, help="template JSONL to write")
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("index", parents=[shared], help="embed templates into a KB index")
    p.add_argument("--templates", required=True)
    p.add_argument("--out", required=True, help="binary index file to write")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("coref", parents=[shared], help="cluster mentions within dates")
    p.add_argument("--mentions", required=True, help="mention JSONL")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_coref)

    p = sub.add_parser("resolve", parents=[shared], help="link clusters to the KB")
    p.add_argument("--mentions", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--qrank", help="qid,rank CSV")
    p.add_argument("--coref-dir", dest="coref_dir",
                   help="reuse a coref command's output instead of re-clustering")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("eval", parents=[shared], help="score decisions against gold")
    p.add_argument("--decisions", required=True)
    p.add_argument("--mentions", required=True, help="mention JSONL with gold qids")
    p.add_argument("--out", help="report JSON to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[shared], help="pick the no-match threshold")
    p.add_argument("--pairs", required=True, help="labeled pair TSV")
    p.add_argument("--split", default="val", choices=("train", "val", "test", "all"))
    p.add_argument("--out", help="JSON to write")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except FileNotFoundError as e:
        log.error("missing file: %s", e.filename or e)
        return EXIT_MISSING_FILE
    except (ParseError, RecordValidationError, ConfigError, ValueError) as e:
        log.error("%s", e)
        return EXIT_VALIDATION
    except (TransportError, WireProtocolError) as e:
        log.error("%s", e)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
