"""Operator command line: ingestion, annotation runs, evaluation, baselines,
enrichment, word frequencies, export, and serving.

Every run writes a manifest (inputs with digests, seeds, versions, counts)
into the output directory. Exit codes: 0 success, 1 validation error,
2 runtime failure. Flags can be defaulted through ``BCAID_``-prefixed
environment variables (``--gene-info`` reads ``BCAID_GENE_INFO``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from . import agents, corpus, evaluation, gateways, ontology, prompts, store as store_mod


class CliError(ValueError):
    """User-facing validation problem; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # unknown flags exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _env_default(flag: str):
    return os.environ.get("BCAID_" + flag.strip("-").replace("-", "_").upper())


def _add(parser: _Parser, flag: str, **kwargs):
    env = _env_default(flag)
    if env is not None:
        kwargs["default"] = env
        kwargs.pop("required", None)
    parser.add_argument(flag, **kwargs)


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, inputs: dict, seeds: dict, counts: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "inputs": {
            name: {"path": str(p), "sha256": _digest(p)}
            for name, p in inputs.items()
            if p and Path(p).is_file()
        },
        "seeds": seeds,
        "versions": {"bcaid": __version__, "prompts": prompts.PROMPT_VERSION},
        "counts": counts,
        "started_at": agents.utc_now_iso(),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# -- subcommands -----------------------------------------------------------


def cmd_ingest(args) -> int:
    db = store_mod.AnnotationStore(args.store)
    counts: dict = {}

    try:
        tax_filter = {int(t) for t in args.tax} if args.tax else None
    except ValueError:
        raise CliError(f"--tax values must be integers, got {args.tax!r}") from None
    if args.obo:
        graph = ontology.parse_obo(Path(args.obo).read_text(encoding="utf-8"))
        db.add_go_names({t.id: t.name for t in graph.terms.values()})
        counts["go_terms"] = len(graph)
    links: corpus.PubmedLinks = corpus.PubmedLinks()
    if args.gene_info:
        with open(args.gene_info, encoding="utf-8") as fh:
            registry = corpus.parse_gene_info(fh, tax_filter)
        db.add_genes(registry)
        counts["genes"] = len(registry)
        counts["gene_rows_rejected"] = registry.rejected
    if args.gene2pubmed:
        with open(args.gene2pubmed, encoding="utf-8") as fh:
            links = corpus.parse_gene2pubmed(fh, tax_filter)
        db.add_gene_links(links)
        counts["gene_pmid_links"] = sum(len(v) for v in links.values())
    if args.abstracts:
        with open(args.abstracts, encoding="utf-8") as fh:
            abstracts = corpus.ingest_abstracts(fh, links)
        db.add_abstracts(abstracts.values())
        counts["abstracts"] = len(abstracts)
        counts["abstract_lines_skipped"] = abstracts.skipped

    if args.atlas_metadata:
        metadata = Path(args.atlas_metadata).read_text(encoding="utf-8")
        markers = (
            Path(args.atlas_markers).read_text(encoding="utf-8")
            if args.atlas_markers
            else None
        )
        registry = corpus.ingest_atlas(metadata, markers)
        if args.expression:
            expr = corpus.parse_expression_csv(Path(args.expression).read_text(encoding="utf-8"))
            counts["top20_sets"] = corpus.generate_top20_sets(registry, expr, args.top_k)
        db.add_clusters(registry)
        counts["clusters"] = len(registry)
        for marker_type in corpus.MarkerType:
            counts[f"gene_sets_{marker_type.value}"] = registry.marker_set_count(marker_type)
        counts["gene_sets_total"] = registry.marker_set_count()

    _write_manifest(
        Path(args.out),
        "ingest",
        {
            "obo": args.obo,
            "gene_info": args.gene_info,
            "gene2pubmed": args.gene2pubmed,
            "abstracts": args.abstracts,
            "atlas_metadata": args.atlas_metadata,
            "atlas_markers": args.atlas_markers,
            "expression": args.expression,
        },
        {},
        counts,
    )
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_verbalize(args) -> int:
    graph = ontology.parse_obo(Path(args.obo).read_text(encoding="utf-8"))
    gateway = gateways.lm_gateway_from_spec(args.gateway) if args.gateway else None
    namespace = {
        "bp": ontology.Namespace.BIOLOGICAL_PROCESS,
        "mf": ontology.Namespace.MOLECULAR_FUNCTION,
        "cc": ontology.Namespace.CELLULAR_COMPONENT,
        "all": None,
    }.get(args.namespace)
    if args.namespace not in ("bp", "mf", "cc", "all"):
        raise CliError(f"unknown namespace {args.namespace!r} (use bp, mf, cc, or all)")
    verbalizations = ontology.verbalize_graph(graph, gateway, namespace)
    ontology.write_verbalizations(verbalizations, args.verbalizations)
    _write_manifest(
        Path(args.out), "verbalize", {"obo": args.obo}, {}, {"verbalized_terms": len(verbalizations)}
    )
    print(f"wrote {len(verbalizations)} verbalizations to {args.verbalizations}")
    return 0


def _build_pipeline_deps(args):
    db = store_mod.AnnotationStore(args.store)
    graph = ontology.parse_obo(Path(args.obo).read_text(encoding="utf-8"))
    verbalizations = ontology.read_verbalizations(args.verbalizations)
    embedder = gateways.embedding_gateway_from_spec(args.embedder)
    go_index = agents.VerbalizedGoIndex.build(verbalizations, embedder, graph)
    lm = gateways.lm_gateway_from_spec(args.gateway)
    if args.record_replay:
        lm = gateways.RecordingLmGateway(lm)
    return db, graph, go_index, lm, embedder


def cmd_annotate(args) -> int:
    db, graph, go_index, lm, embedder = _build_pipeline_deps(args)
    registry = db.load_cluster_registry()
    corpus_store = db.load_corpus()
    config = agents.PipelineConfig(n_top_pm=args.n_top_pm, k_go=args.k, jobs=args.jobs)

    n_records = n_summaries = 0
    failures = []
    for result in agents.annotate_pipeline(registry, corpus_store, go_index, lm, embedder, config):
        for record in result.records:
            db.save_annotation(record)
            n_records += 1
        if result.summary is not None:
            db.save_annotation(result.summary)
            n_summaries += 1
        db.save_exchanges(result.exchanges)
        failures.extend(result.failures)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "failures.jsonl", "w", encoding="utf-8") as fh:
        for failure in failures:
            fh.write(json.dumps(failure.to_dict(), sort_keys=True) + "\n")
    if args.record_replay:
        lm.write_jsonl(args.record_replay)

    counts = {"records": n_records, "summaries": n_summaries, "failures": len(failures)}
    _write_manifest(
        out_dir,
        "annotate",
        {"obo": args.obo, "verbalizations": args.verbalizations, "store": args.store},
        {"seed": args.seed, "gateway": args.gateway, "embedder": args.embedder,
         "n_top_pm": args.n_top_pm, "k": args.k},
        counts,
    )
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_summarize(args) -> int:
    db = store_mod.AnnotationStore(args.store)
    lm = gateways.lm_gateway_from_spec(args.gateway)
    registry = db.load_cluster_registry()
    n_summaries = 0
    for cluster in registry.ordered():
        records = [
            record
            for marker_type in corpus.MarkerType
            if (record := db.latest_annotation(cluster.cluster_id, marker_type)) is not None
        ]
        if not records:
            continue
        if db.latest_summary(cluster.cluster_id) is not None and not args.force:
            continue
        summary, exchanges = agents.summarize_cluster(cluster, records, lm)
        db.save_annotation(summary)
        db.save_exchanges(exchanges)
        n_summaries += 1
    _write_manifest(
        Path(args.out), "summarize", {"store": args.store},
        {"gateway": args.gateway}, {"summaries": n_summaries},
    )
    print(json.dumps({"summaries": n_summaries}, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    report: dict = {}
    if args.rouge:
        pairs = _read_jsonl(args.rouge)
        modes = {"rouge1": evaluation.RougeMode.N1, "rouge2": evaluation.RougeMode.N2,
                 "rougeL": evaluation.RougeMode.L}
        rows = []
        for pair in pairs:
            row = {"candidate": pair["candidate"], "reference": pair["reference"]}
            for name, mode in modes.items():
                score = evaluation.rouge(pair["candidate"], pair["reference"], mode)
                row[name] = {"precision": score.precision, "recall": score.recall, "f1": score.f1}
            rows.append(row)
        report["rouge"] = {
            "pairs": rows,
            "mean_f1": {
                name: (sum(r[name]["f1"] for r in rows) / len(rows) if rows else 0.0)
                for name in modes
            },
        }
    if args.topo:
        if not args.obo:
            raise CliError("--topo evaluation needs --obo for the ontology graph")
        graph = ontology.parse_obo(Path(args.obo).read_text(encoding="utf-8"))
        rows = _read_jsonl(args.topo)
        topo = evaluation.topo_hit_rate(
            [r["predictions"] for r in rows], [r["truth"] for r in rows], graph, args.radius
        )
        report["topo"] = topo.to_dict()
    if not report:
        raise CliError("evaluate needs --rouge and/or --topo input")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "evaluation.json", report)
    if "rouge" in report:
        with open(out_dir / "rouge.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["candidate", "reference", "rouge1_f1", "rouge2_f1", "rougeL_f1"])
            for row in report["rouge"]["pairs"]:
                writer.writerow([row["candidate"], row["reference"],
                                 row["rouge1"]["f1"], row["rouge2"]["f1"], row["rougeL"]["f1"]])
    if "topo" in report:
        with open(out_dir / "topo.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["set_index", "hit"])
            for i, hit in enumerate(report["topo"]["hits"]):
                writer.writerow([i, int(hit)])
    _write_manifest(out_dir, "evaluate", {"rouge": args.rouge, "topo": args.topo, "obo": args.obo},
                    {}, {"rouge_pairs": len(report.get("rouge", {}).get("pairs", [])),
                         "topo_sets": report.get("topo", {}).get("n_sets", 0)})
    if "topo" in report:
        print(f"topo accuracy: {report['topo']['accuracy']}")
    return 0


def cmd_baseline(args) -> int:
    graph = ontology.parse_obo(Path(args.obo).read_text(encoding="utf-8"))
    rows = _read_jsonl(args.topo)
    base = [r["base"] for r in rows]
    truths = [r["truth"] for r in rows]
    if args.observed is not None:
        observed = args.observed
    elif all("predictions" in r for r in rows):
        observed = evaluation.topo_hit_rate(
            [r["predictions"] for r in rows], truths, graph, args.radius
        ).accuracy
    else:
        observed = evaluation.topo_hit_rate(base, truths, graph, args.radius).accuracy
    report = evaluation.random_baseline(
        base, truths, graph, observed,
        n_random=args.n_random, trials=args.trials, seed=args.seed, radius=args.radius,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "baseline.json", report.to_dict())
    with open(out_dir / "baseline.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "accuracy"])
        for i, acc in enumerate(report.trial_accuracies):
            writer.writerow([i, acc])
    _write_manifest(out_dir, "baseline", {"topo": args.topo, "obo": args.obo},
                    {"seed": args.seed, "trials": args.trials, "n_random": args.n_random},
                    {"sets": len(rows)})
    print(f"observed {report.observed:.4f} vs random mean {report.mean:.4f} "
          f"(t={report.t_statistic:.3f}, p={report.p_value:.3g})")
    return 0


def cmd_ora(args) -> int:
    query = _read_lines(args.query)
    background = _read_lines(args.background)
    library_sets = corpus.parse_gmt(Path(args.library).read_text(encoding="utf-8"))
    library = {s.label: s.genes for s in library_sets}
    results = evaluation.ora_enrich(query, library, background)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "enrichment.json", [r.to_dict() for r in results])
    with open(out_dir / "enrichment.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term", "p_value", "adjusted_p", "contributing_genes",
                         "term_size", "background_size"])
        for r in results:
            writer.writerow([r.term, r.p_value, r.adjusted_p, " ".join(r.contributing_genes),
                             r.term_size, r.background_size])
    _write_manifest(out_dir, "ora", {"query": args.query, "library": args.library,
                                     "background": args.background}, {},
                    {"terms": len(results)})
    print(f"wrote {len(results)} enrichment rows")
    return 0


def cmd_wordfreq(args) -> int:
    if args.field:
        texts = [str(row.get(args.field, "")) for row in _read_jsonl(args.input)]
    else:
        texts = _read_lines(args.input)
    extra = _read_lines(args.stopwords) if args.stopwords else []
    ranked = evaluation.word_frequencies(texts, extra)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "wordfreq.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token", "count"])
        writer.writerows(ranked)
    _write_manifest(out_dir, "wordfreq", {"input": args.input, "stopwords": args.stopwords},
                    {}, {"tokens": len(ranked), "texts": len(texts)})
    print(f"wrote {len(ranked)} token counts")
    return 0


def cmd_export(args) -> int:
    db = store_mod.AnnotationStore(args.store)
    counts = db.export_jsonl(args.out)
    _write_manifest(Path(args.out), "export", {"store": args.store}, {}, counts)
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    from . import service

    db = store_mod.AnnotationStore(args.store)
    service.serve(db, args.host, args.port, args.cors_origin)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="bcaid", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load corpora and atlas data into a store")
    _add(p, "--store", required=True)
    _add(p, "--obo")
    _add(p, "--gene-info")
    _add(p, "--gene2pubmed")
    _add(p, "--abstracts")
    _add(p, "--atlas-metadata")
    _add(p, "--atlas-markers")
    _add(p, "--expression")
    p.add_argument("--tax", action="append", default=None)
    p.add_argument("--top-k", type=int, default=20)
    _add(p, "--out", default="bcaid_out/ingest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("verbalize", help="write a GO verbalization table")
    _add(p, "--obo", required=True)
    _add(p, "--verbalizations", required=True)
    _add(p, "--gateway")
    p.add_argument("--namespace", default="all")
    _add(p, "--out", default="bcaid_out/verbalize")
    p.set_defaults(func=cmd_verbalize)

    p = sub.add_parser("annotate", help="run the annotation pipeline")
    _add(p, "--store", required=True)
    _add(p, "--obo", required=True)
    _add(p, "--verbalizations", required=True)
    _add(p, "--gateway", required=True)
    _add(p, "--embedder", default="mock:hash")
    p.add_argument("--n-top-pm", type=int, default=5)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--record-replay")
    _add(p, "--out", default="bcaid_out/annotate")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("summarize", help="regenerate cluster summaries")
    _add(p, "--store", required=True)
    _add(p, "--gateway", required=True)
    p.add_argument("--force", action="store_true")
    _add(p, "--out", default="bcaid_out/summarize")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", help="ROUGE and GO-topology evaluation")
    _add(p, "--rouge")
    _add(p, "--topo")
    _add(p, "--obo")
    p.add_argument("--radius", type=int, default=3)
    _add(p, "--out", default="bcaid_out/evaluate")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="random-BP baseline with t-test")
    _add(p, "--topo", required=True)
    _add(p, "--obo", required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--n-random", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--observed", type=float, default=None)
    _add(p, "--out", default="bcaid_out/baseline")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ora", help="over-representation baseline")
    _add(p, "--query", required=True)
    _add(p, "--library", required=True)
    _add(p, "--background", required=True)
    _add(p, "--out", default="bcaid_out/ora")
    p.set_defaults(func=cmd_ora)

    p = sub.add_parser("wordfreq", help="word-frequency table")
    _add(p, "--input", required=True)
    p.add_argument("--field")
    _add(p, "--stopwords")
    _add(p, "--out", default="bcaid_out/wordfreq")
    p.set_defaults(func=cmd_wordfreq)

    p = sub.add_parser("export", help="export the store as JSONL")
    _add(p, "--store", required=True)
    _add(p, "--out", default="bcaid_out/export")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="serve the REST API")
    _add(p, "--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8642)
    _add(p, "--cors-origin")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, store_mod.ValidationError, corpus.GmtParseError,
            ontology.OboParseError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failure surface
        sys.stderr.write(f"runtime failure: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
