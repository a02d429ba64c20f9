"""Literature retrieval: collect candidate abstracts for a gene set, rank
them by embedding similarity, and pick the TopPM / TopGene evidence sets.

Ranking and selection are pure functions; only the embedding call touches a
gateway, so distinct gene sets can be processed concurrently.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import AbstractRecord, CorpusStore, MarkerGeneSet
from .gateways import EmbeddingGateway, GatewayError


class RetrievalError(RuntimeError):
    """Embedding failed for a candidate batch; carries the affected PMIDs."""

    def __init__(self, message: str, pmids: Sequence[int] = ()):
        self.pmids = tuple(pmids)
        super().__init__(message)


@dataclass(frozen=True)
class ScoredAbstract:
    pmid: int
    score: float
    via_gene: str | None = None


@dataclass(frozen=True)
class EvidenceSet:
    top_pm: tuple[ScoredAbstract, ...]
    top_gene: tuple[ScoredAbstract, ...]
    query_digest: str

    def pmids(self) -> frozenset[int]:
        return frozenset(s.pmid for s in self.top_pm) | frozenset(
            s.pmid for s in self.top_gene
        )


def collect_candidates(gene_set: MarkerGeneSet, corpus: CorpusStore) -> list[AbstractRecord]:
    """Union of ingested abstracts linked to any resolvable gene in the set.

    An empty result is a valid outcome: it flags a literature-poor set.
    """
    pmids: set[int] = set()
    for symbol in gene_set.genes:
        pmids.update(corpus.pmids_for_gene(symbol))
    return [corpus.abstracts[p] for p in sorted(pmids)]


def per_gene_candidates(
    gene_set: MarkerGeneSet, corpus: CorpusStore
) -> dict[str, tuple[int, ...]]:
    """Candidate PMIDs per gene symbol (only genes with at least one)."""
    out: dict[str, tuple[int, ...]] = {}
    for symbol in gene_set.genes:
        pmids = corpus.pmids_for_gene(symbol)
        if pmids:
            out[symbol] = pmids
    return out


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def rank_abstracts(
    query_text: str,
    candidates: Sequence[AbstractRecord],
    gateway: EmbeddingGateway,
) -> list[ScoredAbstract]:
    """Score candidates by cosine similarity to the query and sort descending.

    Ties break by ascending PMID, so the ranking is a deterministic
    permutation of the input regardless of input order.
    """
    if not candidates:
        return []
    texts = [query_text] + [c.text for c in candidates]
    try:
        vectors = gateway.embed(texts)
    except GatewayError as exc:
        raise RetrievalError(str(exc), [c.pmid for c in candidates]) from exc
    query_vec = vectors[0]
    scored = [
        ScoredAbstract(c.pmid, cosine(query_vec, vec))
        for c, vec in zip(candidates, vectors[1:])
    ]
    scored.sort(key=lambda s: (-s.score, s.pmid))
    return scored


def build_query_text(gene_set: MarkerGeneSet, narrative: str) -> str:
    """Retrieval query: space-joined symbols plus the initial narrative."""
    return " ".join(gene_set.genes) + " " + narrative if narrative else " ".join(gene_set.genes)


def query_digest(gene_set: MarkerGeneSet, narrative: str) -> str:
    payload = "\x1f".join([*gene_set.genes, narrative])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def select_evidence(
    ranked: Sequence[ScoredAbstract],
    gene_set: MarkerGeneSet,
    gene_candidates: Mapping[str, Sequence[int]],
    n_top_pm: int,
    digest: str = "",
) -> EvidenceSet:
    """Build the TopPM and TopGene evidence lists from a ranking.

    TopPM is the overall head of the ranking. TopGene holds each gene's
    best-ranked candidate, deduplicated by PMID: the first gene in set order
    keeps the entry and is recorded as ``via_gene``.
    """
    if n_top_pm < 0:
        raise ValueError("n_top_pm must be >= 0")
    top_pm = tuple(ranked[:n_top_pm])

    rank_index = {s.pmid: i for i, s in enumerate(ranked)}
    taken: set[int] = set()
    top_gene: list[ScoredAbstract] = []
    for symbol in gene_set.genes:
        pmids = [p for p in gene_candidates.get(symbol, ()) if p in rank_index]
        if not pmids:
            continue
        best = min(pmids, key=lambda p: rank_index[p])
        if best in taken:
            continue
        taken.add(best)
        entry = ranked[rank_index[best]]
        top_gene.append(ScoredAbstract(entry.pmid, entry.score, via_gene=symbol))
    return EvidenceSet(top_pm, tuple(top_gene), digest)
