"""Annotation agents over pluggable gateways.

Pipeline stages per marker gene set: an initial narrative from the query
prompt, literature retrieval and ranking, evidence selection, one refined
annotation per evidence variant (TopPM, TopGene) with enforced two-sentence
output and citation grounding, and GO-term mapping of every generated text.
A final stage synthesizes a per-cluster cell-type summary from all of the
cluster's marker-set annotations plus anatomical and neurochemical context.

Every generated text field links back to the language-model exchanges that
produced it, forming a full audit trail.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .corpus import (
    AbstractRecord,
    CellCluster,
    ClusterRegistry,
    CorpusStore,
    MARKER_TYPE_ORDER,
    MarkerGeneSet,
    MarkerType,
)
from .gateways import EmbeddingGateway, GatewayError, LmExchange, LmGateway
from .ontology import OntologyGraph, VerbalizedTerm
from .retrieval import (
    EvidenceSet,
    RetrievalError,
    build_query_text,
    collect_candidates,
    per_gene_candidates,
    query_digest,
    rank_abstracts,
    select_evidence,
)
from . import prompts


class AnnotationError(RuntimeError):
    pass


class ConfigurationError(RuntimeError):
    pass


class Variant(Enum):
    TOP_PM = "top_pm"
    TOP_GENE = "top_gene"


GO_PREDICTIONS_PER_TEXT = 5
_PMID_MARKER = re.compile(r"\[PMID:(\d+)\]")
_SENTENCE_SPLIT = re.compile(r"(?<=[.?!])\s+")


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def split_sentences(text: str) -> list[str]:
    """Mechanical sentence split: ``.?!`` followed by whitespace."""
    parts = _SENTENCE_SPLIT.split(text.strip())
    return [p for p in parts if p]


def truncate_sentences(text: str, max_sentences: int) -> str:
    parts = split_sentences(text)
    if len(parts) <= max_sentences:
        return text.strip()
    return " ".join(parts[:max_sentences])


def extract_citations(text: str) -> list[int]:
    """PMIDs cited with bracketed markers, in order of first appearance."""
    seen: set[int] = set()
    out: list[int] = []
    for m in _PMID_MARKER.finditer(text):
        pmid = int(m.group(1))
        if pmid not in seen:
            seen.add(pmid)
            out.append(pmid)
    return out


def strip_citations(text: str, pmids: Iterable[int]) -> str:
    for pmid in pmids:
        text = re.sub(r"\s*\[PMID:" + str(pmid) + r"\]", "", text)
    return re.sub(r"\s{2,}", " ", text).strip()


@dataclass(frozen=True)
class RefinedAnnotation:
    variant: Variant
    summary: str
    cited_pmids: tuple[int, ...]
    go_terms: tuple[tuple[str, float], ...]
    literature_free: bool = False
    uncited: bool = False
    stripped_pmids: tuple[int, ...] = ()
    exchange_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "summary": self.summary,
            "cited_pmids": list(self.cited_pmids),
            "go_terms": [[t, s] for t, s in self.go_terms],
            "literature_free": self.literature_free,
            "uncited": self.uncited,
            "stripped_pmids": list(self.stripped_pmids),
            "exchange_ids": list(self.exchange_ids),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RefinedAnnotation":
        return cls(
            variant=Variant(obj["variant"]),
            summary=obj["summary"],
            cited_pmids=tuple(obj["cited_pmids"]),
            go_terms=tuple((t, float(s)) for t, s in obj["go_terms"]),
            literature_free=obj.get("literature_free", False),
            uncited=obj.get("uncited", False),
            stripped_pmids=tuple(obj.get("stripped_pmids", ())),
            exchange_ids=tuple(obj.get("exchange_ids", ())),
        )


def _evidence_to_dict(evidence: EvidenceSet) -> dict:
    return {
        "top_pm": [
            {"pmid": s.pmid, "score": s.score, "via_gene": s.via_gene}
            for s in evidence.top_pm
        ],
        "top_gene": [
            {"pmid": s.pmid, "score": s.score, "via_gene": s.via_gene}
            for s in evidence.top_gene
        ],
        "query_digest": evidence.query_digest,
    }


def _evidence_from_dict(obj: Mapping) -> EvidenceSet:
    from .retrieval import ScoredAbstract

    def entries(items) -> tuple:
        return tuple(
            ScoredAbstract(e["pmid"], float(e["score"]), e.get("via_gene")) for e in items
        )

    return EvidenceSet(entries(obj["top_pm"]), entries(obj["top_gene"]), obj["query_digest"])


@dataclass(frozen=True)
class AnnotationRecord:
    cluster_id: str
    marker_type: MarkerType
    initial_narrative: str
    initial_go_terms: tuple[tuple[str, float], ...]
    refined: Mapping[Variant, RefinedAnnotation]
    evidence: EvidenceSet
    created_at: str
    initial_exchange_ids: tuple[str, ...] = ()

    def total_go_predictions(self) -> int:
        return len(self.initial_go_terms) + sum(
            len(r.go_terms) for r in self.refined.values()
        )

    def all_cited_pmids(self) -> set[int]:
        return {p for r in self.refined.values() for p in r.cited_pmids}

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "marker_type": self.marker_type.value,
            "initial_narrative": self.initial_narrative,
            "initial_go_terms": [[t, s] for t, s in self.initial_go_terms],
            "refined": {v.value: r.to_dict() for v, r in sorted(self.refined.items(), key=lambda kv: kv[0].value)},
            "evidence": _evidence_to_dict(self.evidence),
            "created_at": self.created_at,
            "initial_exchange_ids": list(self.initial_exchange_ids),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "AnnotationRecord":
        return cls(
            cluster_id=obj["cluster_id"],
            marker_type=MarkerType(obj["marker_type"]),
            initial_narrative=obj["initial_narrative"],
            initial_go_terms=tuple((t, float(s)) for t, s in obj["initial_go_terms"]),
            refined={
                Variant(k): RefinedAnnotation.from_dict(v) for k, v in obj["refined"].items()
            },
            evidence=_evidence_from_dict(obj["evidence"]),
            created_at=obj["created_at"],
            initial_exchange_ids=tuple(obj.get("initial_exchange_ids", ())),
        )


@dataclass(frozen=True)
class CellTypeSummary:
    cluster_id: str
    brief: str
    detailed: str
    evidence_links: tuple[tuple[str, int], ...]
    anatomical_location: str
    nt_type_label: str
    sources: tuple[MarkerType, ...]
    created_at: str
    exchange_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "brief": self.brief,
            "detailed": self.detailed,
            "evidence_links": [[g, p] for g, p in self.evidence_links],
            "anatomical_location": self.anatomical_location,
            "nt_type_label": self.nt_type_label,
            "sources": [s.value for s in self.sources],
            "created_at": self.created_at,
            "exchange_ids": list(self.exchange_ids),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "CellTypeSummary":
        return cls(
            cluster_id=obj["cluster_id"],
            brief=obj["brief"],
            detailed=obj["detailed"],
            evidence_links=tuple((g, int(p)) for g, p in obj["evidence_links"]),
            anatomical_location=obj["anatomical_location"],
            nt_type_label=obj["nt_type_label"],
            sources=tuple(MarkerType(s) for s in obj["sources"]),
            created_at=obj["created_at"],
            exchange_ids=tuple(obj.get("exchange_ids", ())),
        )


class VerbalizedGoIndex:
    """Embedding index over GO-term verbalizations for nearest-term mapping."""

    def __init__(self, term_ids: Sequence[str], matrix: np.ndarray, embedder: EmbeddingGateway):
        self.term_ids = tuple(term_ids)
        self.matrix = matrix
        self.embedder = embedder

    @classmethod
    def build(
        cls,
        verbalizations: Mapping[str, VerbalizedTerm],
        embedder: EmbeddingGateway,
        graph: OntologyGraph | None = None,
    ) -> "VerbalizedGoIndex":
        term_ids = sorted(verbalizations)
        if graph is not None:
            term_ids = [
                t for t in term_ids if t in graph.terms and not graph.terms[t].obsolete
            ]
        narrations = [verbalizations[t].narration for t in term_ids]
        matrix = np.asarray(embedder.embed(narrations), dtype=float) if term_ids else np.zeros((0, embedder.dimension))
        matrix = _normalize_rows(matrix)
        return cls(term_ids, matrix, embedder)

    def __len__(self) -> int:
        return len(self.term_ids)


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    if matrix.size == 0:
        return matrix
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def map_to_go_terms(
    narrative: str, index: VerbalizedGoIndex, k: int = GO_PREDICTIONS_PER_TEXT
) -> list[tuple[str, float]]:
    """The k verbalized terms closest to the narrative by cosine similarity.

    Ties break by ascending GO accession for a reproducible ranking.
    """
    if len(index) == 0:
        raise ConfigurationError("GO verbalization index is empty")
    vec = np.asarray(index.embedder.embed([narrative])[0], dtype=float)
    norm = np.linalg.norm(vec)
    if norm > 0.0:
        vec = vec / norm
    scores = index.matrix @ vec
    order = sorted(range(len(index.term_ids)), key=lambda i: (-scores[i], index.term_ids[i]))
    return [(index.term_ids[i], float(scores[i])) for i in order[:k]]


def generate_initial_annotation(
    gene_set: MarkerGeneSet, gateway: LmGateway
) -> tuple[str, list[LmExchange]]:
    """Initial narrative for a gene set from the neurology-steering prompt."""
    if not gene_set.genes:
        raise AnnotationError("gene set is empty")
    messages = prompts.render("initial", genes=", ".join(gene_set.genes))
    exchanges: list[LmExchange] = []
    for _attempt in range(2):  # one re-ask on empty output
        try:
            exchange = gateway.complete(messages)
        except GatewayError as exc:
            raise AnnotationError(f"initial annotation failed: {exc}") from exc
        exchanges.append(exchange)
        narrative = exchange.response.strip()
        if narrative:
            return narrative, exchanges
    raise AnnotationError(
        f"model returned empty output twice for cluster {gene_set.cluster_id}"
    )


def _format_abstracts(
    entries: Sequence, abstracts: Mapping[int, AbstractRecord]
) -> str:
    lines = []
    for entry in entries:
        record = abstracts.get(entry.pmid)
        if record is None:
            lines.append(f"[PMID:{entry.pmid}] (abstract unavailable)")
        else:
            lines.append(f"[PMID:{record.pmid}] {record.title} {record.body}")
    return "\n".join(lines)


_REWRITE_INSTRUCTION = (
    "Your answer must be exactly two sentences. Rewrite it as exactly two "
    "sentences, keeping the [PMID:nnnnnnnn] citations."
)


def refine_with_evidence(
    gene_set: MarkerGeneSet,
    initial_narrative: str,
    evidence: EvidenceSet,
    cluster: CellCluster,
    variant: Variant,
    gateway: LmGateway,
    go_index: VerbalizedGoIndex,
    abstracts: Mapping[int, AbstractRecord],
    k_go: int = GO_PREDICTIONS_PER_TEXT,
) -> tuple[RefinedAnnotation, list[LmExchange]]:
    """Literature-grounded refinement for one evidence variant.

    The reply is held to two sentences (one corrective re-ask, then hard
    truncation) and citations are filtered to the supplied evidence PMIDs;
    fabricated citations never survive. Without evidence the annotation
    degrades to the initial narrative, flagged literature-free.
    """
    entries = evidence.top_pm if variant is Variant.TOP_PM else evidence.top_gene
    if not entries:
        summary = truncate_sentences(initial_narrative, 2)
        annotation = RefinedAnnotation(
            variant=variant,
            summary=summary,
            cited_pmids=(),
            go_terms=tuple(map_to_go_terms(summary, go_index, k_go)),
            literature_free=True,
            uncited=True,
        )
        return annotation, []

    supplied = {e.pmid for e in entries}
    messages = prompts.render(
        "refine",
        genes=", ".join(gene_set.genes),
        narrative=initial_narrative,
        anatomical_location=cluster.anatomical_location or "unspecified",
        nt_type=cluster.nt_type_label or "unspecified",
        abstracts=_format_abstracts(entries, abstracts),
    )
    exchanges: list[LmExchange] = []
    try:
        exchange = gateway.complete(messages)
        exchanges.append(exchange)
        text = exchange.response.strip()
        if len(split_sentences(text)) > 2:
            retry_messages = list(messages) + [
                {"role": "assistant", "content": text},
                {"role": "user", "content": _REWRITE_INSTRUCTION},
            ]
            exchange = gateway.complete(retry_messages)
            exchanges.append(exchange)
            text = exchange.response.strip()
    except GatewayError as exc:
        raise AnnotationError(f"refinement failed ({variant.value}): {exc}") from exc

    text = truncate_sentences(text, 2)
    cited = extract_citations(text)
    fabricated = tuple(p for p in cited if p not in supplied)
    if fabricated:
        text = strip_citations(text, fabricated)
    kept = tuple(p for p in extract_citations(text) if p in supplied)
    annotation = RefinedAnnotation(
        variant=variant,
        summary=text,
        cited_pmids=kept,
        go_terms=tuple(map_to_go_terms(text, go_index, k_go)),
        uncited=not kept,
        stripped_pmids=fabricated,
        exchange_ids=tuple(e.exchange_id for e in exchanges),
    )
    return annotation, exchanges


def _marker_annotation_lines(records: Sequence[AnnotationRecord]) -> str:
    lines = []
    for record in sorted(records, key=lambda r: r.marker_type.value):
        lines.append(f"- {record.marker_type.value} initial: {record.initial_narrative}")
        for variant in (Variant.TOP_PM, Variant.TOP_GENE):
            refined = record.refined.get(variant)
            if refined is None:
                continue
            cites = " ".join(f"[PMID:{p}]" for p in refined.cited_pmids)
            lines.append(f"  {variant.value}: {refined.summary} {cites}".rstrip())
    return "\n".join(lines)


def summarize_cluster(
    cluster: CellCluster,
    records: Sequence[AnnotationRecord],
    gateway: LmGateway,
    clock: Callable[[], str] = utc_now_iso,
) -> tuple[CellTypeSummary, list[LmExchange]]:
    """Synthesize the cluster-level summary from all marker-set annotations."""
    if not records:
        raise AnnotationError(f"no annotation records for cluster {cluster.cluster_id}")
    present = [r.marker_type for r in records]
    missing = [m for m in MARKER_TYPE_ORDER if m not in present]
    missing_note = (
        "No annotation available for marker types: "
        + ", ".join(m.value for m in missing)
        + "."
        if missing
        else ""
    )
    fields = dict(
        cluster_id=cluster.cluster_id,
        anatomical_location=cluster.anatomical_location or "unspecified",
        nt_type=cluster.nt_type_label or "unspecified",
        marker_annotations=_marker_annotation_lines(records),
        missing_note=missing_note,
    )
    exchanges: list[LmExchange] = []
    try:
        brief_exchange = gateway.complete(prompts.render("summary_brief", **fields))
        exchanges.append(brief_exchange)
        detailed_exchange = gateway.complete(prompts.render("summary_detailed", **fields))
        exchanges.append(detailed_exchange)
    except GatewayError as exc:
        raise AnnotationError(f"cluster summary failed: {exc}") from exc

    brief = truncate_sentences(brief_exchange.response.strip(), 4)
    detailed = detailed_exchange.response.strip()
    if not brief or not detailed:
        raise AnnotationError(f"empty summary output for cluster {cluster.cluster_id}")

    links: list[tuple[str, int]] = []
    seen: set[tuple[str, int]] = set()
    for record in records:
        via = {e.pmid: e.via_gene for e in record.evidence.top_gene if e.via_gene}
        marker_set = cluster.marker_sets.get(record.marker_type)
        fallback = marker_set.genes[0] if marker_set else ""
        for variant in (Variant.TOP_PM, Variant.TOP_GENE):
            refined = record.refined.get(variant)
            if refined is None:
                continue
            for pmid in refined.cited_pmids:
                link = (via.get(pmid, fallback), pmid)
                if link not in seen:
                    seen.add(link)
                    links.append(link)

    summary = CellTypeSummary(
        cluster_id=cluster.cluster_id,
        brief=brief,
        detailed=detailed,
        evidence_links=tuple(links),
        anatomical_location=cluster.anatomical_location,
        nt_type_label=cluster.nt_type_label,
        sources=tuple(m for m in MARKER_TYPE_ORDER if m in present),
        created_at=clock(),
        exchange_ids=tuple(e.exchange_id for e in exchanges),
    )
    return summary, exchanges


@dataclass
class PipelineConfig:
    n_top_pm: int = 5
    k_go: int = GO_PREDICTIONS_PER_TEXT
    clock: Callable[[], str] = utc_now_iso
    jobs: int = 1  # worker-pool bound for per-gene-set annotation


@dataclass(frozen=True)
class FailureRecord:
    cluster_id: str
    marker_type: str | None
    code: str
    message: str

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "marker_type": self.marker_type,
            "code": self.code,
            "message": self.message,
        }


@dataclass
class ClusterResult:
    cluster_id: str
    records: list[AnnotationRecord]
    summary: CellTypeSummary | None
    failures: list[FailureRecord]
    exchanges: list[LmExchange]


def _failure_code(exc: Exception) -> str:
    if isinstance(exc, RetrievalError):
        return "retrieval"
    if isinstance(exc, GatewayError):
        return "gateway"
    if isinstance(exc, ConfigurationError):
        return "configuration"
    if isinstance(exc, AnnotationError):
        return "annotation"
    return "internal"


def annotate_gene_set(
    cluster: CellCluster,
    gene_set: MarkerGeneSet,
    corpus: CorpusStore,
    go_index: VerbalizedGoIndex,
    lm: LmGateway,
    embedder: EmbeddingGateway,
    config: PipelineConfig,
) -> tuple[AnnotationRecord, list[LmExchange]]:
    """Run the full per-gene-set stage sequence and assemble the record."""
    narrative, exchanges = generate_initial_annotation(gene_set, lm)
    initial_go = tuple(map_to_go_terms(narrative, go_index, config.k_go))

    candidates = collect_candidates(gene_set, corpus)
    gene_candidates = per_gene_candidates(gene_set, corpus)
    ranked = rank_abstracts(build_query_text(gene_set, narrative), candidates, embedder)
    evidence = select_evidence(
        ranked, gene_set, gene_candidates, config.n_top_pm, query_digest(gene_set, narrative)
    )

    refined: dict[Variant, RefinedAnnotation] = {}
    initial_ids = tuple(e.exchange_id for e in exchanges)
    for variant in (Variant.TOP_PM, Variant.TOP_GENE):
        annotation, more = refine_with_evidence(
            gene_set,
            narrative,
            evidence,
            cluster,
            variant,
            lm,
            go_index,
            corpus.abstracts,
            config.k_go,
        )
        if annotation.literature_free and not annotation.exchange_ids:
            # Degraded path reuses the initial narrative; audit points there.
            annotation = replace(annotation, exchange_ids=initial_ids)
        refined[variant] = annotation
        exchanges.extend(more)

    record = AnnotationRecord(
        cluster_id=cluster.cluster_id,
        marker_type=gene_set.marker_type,
        initial_narrative=narrative,
        initial_go_terms=initial_go,
        refined=refined,
        evidence=evidence,
        created_at=config.clock(),
        initial_exchange_ids=initial_ids,
    )
    return record, exchanges


def annotate_pipeline(
    registry: ClusterRegistry,
    corpus: CorpusStore,
    go_index: VerbalizedGoIndex,
    lm: LmGateway,
    embedder: EmbeddingGateway,
    config: PipelineConfig | None = None,
) -> Iterator[ClusterResult]:
    """Annotate every cluster's marker sets, then summarize each cluster.

    Failures are isolated per gene set and recorded with reason codes; the
    pipeline always continues to the next item.
    """
    config = config or PipelineConfig()
    for cluster in registry.ordered():
        records: list[AnnotationRecord] = []
        failures: list[FailureRecord] = []
        exchanges: list[LmExchange] = []
        present = [m for m in MARKER_TYPE_ORDER if m in cluster.marker_sets]

        def run_one(marker_type: MarkerType):
            return annotate_gene_set(
                cluster, cluster.marker_sets[marker_type], corpus, go_index,
                lm, embedder, config,
            )

        if config.jobs > 1 and len(present) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                futures = [(m, pool.submit(run_one, m)) for m in present]
                outcomes = [(m, f) for m, f in futures]
        else:
            outcomes = [(m, None) for m in present]

        # Results are collected in canonical marker order either way, so
        # serial and parallel runs produce identical output.
        for marker_type, future in outcomes:
            try:
                record, more = future.result() if future is not None else run_one(marker_type)
                records.append(record)
                exchanges.extend(more)
            except Exception as exc:  # noqa: BLE001 - isolated per item
                failures.append(
                    FailureRecord(
                        cluster.cluster_id, marker_type.value, _failure_code(exc), str(exc)
                    )
                )
        summary: CellTypeSummary | None = None
        if records:
            try:
                summary, more = summarize_cluster(cluster, records, lm, config.clock)
                exchanges.extend(more)
            except Exception as exc:  # noqa: BLE001
                failures.append(
                    FailureRecord(cluster.cluster_id, None, _failure_code(exc), str(exc))
                )
        else:
            failures.append(
                FailureRecord(cluster.cluster_id, None, "annotation", "no marker sets annotated")
            )
        yield ClusterResult(cluster.cluster_id, records, summary, failures, exchanges)
