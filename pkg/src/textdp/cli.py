"""Command-line front door.

Subcommands: synth, deidentify, evaluate, sweep, inspect-store.
Exit codes: 0 success, 1 validation error, 2 runtime error. Diagnostics go
to stderr; machine-readable output goes to files or stdout only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import secrets
import sys
import time
from pathlib import Path

from . import __version__
from .corpus import load_annotations, load_corpus, load_output_corpus, write_output_corpus
from .embeddings import load_store, read_store_header
from .errors import TextDpError
from .evaluation import (
    DEFAULT_EPSILON_GRID,
    SUBWORD,
    WHOLE_TOKEN,
    emit_report,
    load_entity_relations,
    run_sweep,
    score_leakage_corpus,
    score_survival_corpus,
)
from .pipeline import PipelineSpec, run_pipeline, validate_spec
from .plots import render_sweep_figures
from .synth import SynthConfig, CLINICAL_MIX, build_synthetic_store, corpus_vocab, generate, write_synth
from .embeddings import write_store


def _err(message: str) -> None:
    print(f"textdp: {message}", file=sys.stderr)


def _seed_value(arg: int | None) -> int:
    if arg is not None:
        return arg
    seed = secrets.randbits(32)
    _err(f"no --seed given; drew seed {seed} (pass --seed {seed} to reproduce)")
    return seed


def _add_jobs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--jobs",
        type=int,
        default=os.cpu_count() or 1,
        help="worker parallelism for document and sweep cells (default: available cores)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textdp",
        description="Text de-identification with token-level differential privacy.",
    )
    parser.add_argument("--version", action="version", version=f"textdp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clinical corpus with planted PII")
    p.add_argument("--out-dir", required=True, help="directory for corpus/annotation files")
    p.add_argument("--n-docs", type=int, default=102, help="number of documents")
    p.add_argument("--target-words", type=int, default=107110, help="total corpus word budget")
    p.add_argument("--pii-rate", type=float, default=0.0083, help="target PII token rate")
    p.add_argument("--entity-rate", type=float, default=0.010, help="planted entity mentions per word")
    p.add_argument("--relation-rate", type=float, default=0.003, help="planted relations per word")
    p.add_argument("--mix", choices=["uniform", "clinical"], default="uniform", help="PII category mix preset")
    p.add_argument("--lexicon-dir", default=None, help="override the packaged lexicons")
    p.add_argument("--seed", type=int, default=None, help="generation seed (drawn and printed if omitted)")
    p.add_argument("--store-out", default=None, help="also write a synthetic TDPE store over the corpus vocabulary")
    p.add_argument("--store-dim", type=int, default=32, help="embedding dimension for --store-out")

    p = sub.add_parser("deidentify", help="run a de-identification pipeline over a corpus")
    p.add_argument("--corpus", required=True, help="raw corpus JSONL")
    p.add_argument("--spec", required=True, help="pipeline spec JSON")
    p.add_argument("--store", default=None, help="TDPE embedding store (required for privatize stages)")
    p.add_argument("--seed", type=int, default=None, help="master seed (drawn and printed if omitted)")
    p.add_argument("--out", required=True, help="output corpus JSONL (with provenance)")
    p.add_argument("--manifest", default=None, help="run manifest path (default: <out>.manifest.json)")
    p.add_argument("--lenient-store", action="store_true", help="deduplicate identical embedding rows instead of failing")
    _add_jobs(p)

    p = sub.add_parser("evaluate", help="score leakage and annotation survival of a de-identified corpus")
    p.add_argument("--corpus", required=True, help="raw corpus JSONL (source of gold offsets)")
    p.add_argument("--deidentified", required=True, help="output corpus JSONL from deidentify")
    p.add_argument("--gold", required=True, help="gold PII annotations JSONL")
    p.add_argument("--annotations", default=None, help="entity/relation annotations JSONL for survival")
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")

    p = sub.add_parser("sweep", help="run pipelines across an epsilon grid and emit reports + figures")
    p.add_argument("--corpus", required=True, help="raw corpus JSONL")
    p.add_argument("--gold", required=True, help="gold PII annotations JSONL")
    p.add_argument("--annotations", default=None, help="entity/relation annotations JSONL for survival")
    p.add_argument("--store", default=None, help="TDPE embedding store")
    p.add_argument(
        "--pipeline",
        action="append",
        required=True,
        help="pipeline spec JSON (repeatable, one per pipeline)",
    )
    p.add_argument(
        "--grid",
        default=",".join(f"{e:g}" for e in DEFAULT_EPSILON_GRID),
        help="comma-separated epsilon grid (default: 8..1024 doubling)",
    )
    p.add_argument("--seeds", default=None, help="comma-separated master seeds (default: one drawn seed)")
    p.add_argument("--out-dir", required=True, help="directory for sweep.csv/json, plot data, figures, manifest")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p.add_argument("--lenient-store", action="store_true", help="deduplicate identical embedding rows instead of failing")
    _add_jobs(p)

    p = sub.add_parser("inspect-store", help="print TDPE header fields and content digests")
    p.add_argument("--store", required=True, help="TDPE file to inspect")
    p.add_argument("--header-only", action="store_true", help="do not load the matrix (no digests)")

    return parser


def _cmd_synth(args: argparse.Namespace) -> int:
    seed = _seed_value(args.seed)
    config = SynthConfig(
        n_docs=args.n_docs,
        target_words=args.target_words,
        pii_rate=args.pii_rate,
        entity_rate=args.entity_rate,
        relation_rate=args.relation_rate,
        category_mix=CLINICAL_MIX if args.mix == "clinical" else None,
        seed=seed,
        lexicon_dir=args.lexicon_dir,
    )
    result = generate(config)
    paths = write_synth(result, args.out_dir)
    if args.store_out:
        store = build_synthetic_store(corpus_vocab(result.docs), dim=args.store_dim, seed=seed)
        write_store(args.store_out, store.vocab, store.matrix)
        paths["store"] = Path(args.store_out)
    manifest = {
        "seed": seed,
        "n_docs": config.n_docs,
        "total_words": result.total_words,
        "pii_tokens": result.pii_tokens,
        "realized_pii_rate": result.realized_pii_rate,
        "entities": len(result.entities),
        "relations": len(result.relations),
        "files": {k: str(v) for k, v in paths.items()},
    }
    manifest_path = Path(args.out_dir) / "synth_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    _err(
        f"wrote {result.total_words} words over {config.n_docs} docs "
        f"(PII rate {result.realized_pii_rate:.4%}) to {args.out_dir}"
    )
    return 0


def _cmd_deidentify(args: argparse.Namespace) -> int:
    spec = PipelineSpec.from_file(args.spec)
    store = None
    if args.store:
        store = load_store(args.store, strict=not args.lenient_store)
    elif spec.privatize_stage() is not None:
        _err("spec contains a privatize stage: --store is required")
        return 1
    diagnostics = validate_spec(spec, store)
    for d in diagnostics:
        _err(f"{d.severity}: {d.message}")
    if any(d.severity == "error" for d in diagnostics):
        return 1

    seed = _seed_value(args.seed)
    corpus = load_corpus(args.corpus)
    outputs, run = run_pipeline(corpus, spec, master_seed=seed, store=store, jobs=args.jobs)
    write_output_corpus(outputs, args.out)
    manifest = run.manifest()
    manifest["input"] = str(args.corpus)
    manifest["output"] = str(args.out)
    manifest["versions"] = {"textdp": __version__}
    manifest_path = Path(args.manifest) if args.manifest else Path(str(args.out) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    failed = [d for d, s in run.doc_status.items() if s != "ok"]
    if failed:
        _err(f"{len(failed)} documents failed; see manifest {manifest_path}")
        return 2
    _err(f"de-identified {run.n_docs} docs in {run.wall_time:.2f}s (OOV: {run.oov_count}) -> {args.out}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    sources = {d.doc_id: d for d in load_corpus(args.corpus)}
    outputs = load_output_corpus(args.deidentified, sources)
    gold = load_annotations(args.gold, sources)
    report = {
        "docs": len(outputs),
        "leakage": {
            granularity: score_leakage_corpus(outputs, gold, granularity).to_dict()
            for granularity in (WHOLE_TOKEN, SUBWORD)
        },
    }
    if args.annotations:
        entities, relations = load_entity_relations(args.annotations)
        report["survival"] = score_survival_corpus(outputs, entities, relations).to_dict()
    payload = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(payload, encoding="utf-8")
        _err(f"wrote evaluation report to {args.report}")
    else:
        print(payload)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    try:
        grid = [float(x) for x in args.grid.split(",") if x.strip()]
    except ValueError:
        _err(f"invalid --grid value {args.grid!r}")
        return 1
    if not grid:
        _err("epsilon grid is empty")
        return 1
    if args.seeds:
        try:
            seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
        except ValueError:
            _err(f"invalid --seeds value {args.seeds!r}")
            return 1
    else:
        seeds = [_seed_value(None)]

    specs = [PipelineSpec.from_file(p) for p in args.pipeline]
    store = load_store(args.store, strict=not args.lenient_store) if args.store else None
    for spec in specs:
        diagnostics = validate_spec(spec, store)
        for d in diagnostics:
            _err(f"{spec.pipeline_id}: {d.severity}: {d.message}")
        if any(d.severity == "error" for d in diagnostics):
            return 1
        if spec.privatize_stage() is not None and store is None:
            _err(f"{spec.pipeline_id}: spec contains a privatize stage: --store is required")
            return 1

    sources = load_corpus(args.corpus)
    gold = load_annotations(args.gold, {d.doc_id: d for d in sources})
    entities, relations = ([], [])
    if args.annotations:
        entities, relations = load_entity_relations(args.annotations)

    started = time.perf_counter()
    sweep = run_sweep(
        sources,
        gold,
        specs,
        eps_grid=grid,
        seeds=seeds,
        store=store,
        entities=entities,
        relations=relations,
        jobs=args.jobs,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_report(sweep, "csv", out_dir / "sweep.csv")
    emit_report(sweep, "json", out_dir / "sweep.json")
    emit_report(sweep, "plotdata", out_dir / "sweep_plotdata.json")
    figures: list[str] = []
    if not args.no_figures:
        figures = [str(p) for p in render_sweep_figures(sweep, out_dir / "figures")]
    manifest = {
        "seeds": seeds,
        "epsilon_grid": grid,
        "pipelines": [s.to_dict() for s in specs],
        "determinism_hash": sweep.determinism_hash(),
        "wall_time_s": time.perf_counter() - started,
        "rows": len(sweep.rows),
        "figures": figures,
        "versions": {"textdp": __version__},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    failures = [r for r in sweep.rows if r.status != "ok"]
    if failures:
        _err(f"{len(failures)} sweep cells failed; see {out_dir / 'sweep.csv'}")
        return 2
    _err(f"sweep complete: {len(sweep.rows)} rows -> {out_dir}")
    return 0


def _cmd_inspect_store(args: argparse.Namespace) -> int:
    version, dim, count = read_store_header(args.store)
    info: dict = {"path": str(args.store), "magic": "TDPE", "version": version, "dim": dim, "vocab_count": count}
    if not args.header_only:
        store = load_store(args.store)
        matrix_f32 = store.matrix.astype("float32")
        info["matrix_sha256"] = hashlib.sha256(matrix_f32.tobytes()).hexdigest()
        info["vocab_sha256"] = hashlib.sha256("\x00".join(store.vocab).encode("utf-8")).hexdigest()
        info["first_tokens"] = store.vocab[:8]
    print(json.dumps(info, indent=2))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "deidentify": _cmd_deidentify,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "inspect-store": _cmd_inspect_store,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except TextDpError as exc:
        _err(str(exc))
        return 1
    except OSError as exc:
        _err(f"i/o error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
