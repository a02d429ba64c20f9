"""Corpus ingestion: gene registry, gene-to-PubMed links, abstracts, labeled
gene sets (GMT), atlas cluster metadata, and top-k DEG marker generation.

All registries are immutable once built and safe to share across threads.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

HUMAN_TAX_ID = 9606
MOUSE_TAX_ID = 10090

# Mouse whole-brain atlas scale: taxonomy sizes and marker-set arithmetic.
ATLAS_CLASSES = 34
ATLAS_SUBCLASSES = 338
ATLAS_SUPERTYPES = 1201
ATLAS_CLUSTERS = 5322
ATLAS_DEG_CLUSTERS = 5309  # clusters with expression support for top-20 DEGs


def gene_set_total(n_clusters: int, n_deg_clusters: int) -> int:
    """Gene sets after DEG generation: three atlas sets per cluster plus DEGs."""
    return 3 * n_clusters + n_deg_clusters


class MarkerType(Enum):
    CLUSTER_COMBO = "cluster_combo"
    MERFISH = "merfish"
    TF = "tf"
    TOP20_DEG = "top20_deg"


MARKER_TYPE_ORDER = tuple(MarkerType)


@dataclass(frozen=True)
class GeneRecord:
    gene_id: int
    symbol: str
    tax_id: int
    synonyms: tuple[str, ...] = ()


class GeneRegistry:
    """Symbol lookup with case-insensitive matching and synonym fallback."""

    def __init__(self, records: Iterable[GeneRecord], rejected: int = 0):
        self.records: list[GeneRecord] = sorted(records, key=lambda r: (r.tax_id, r.gene_id))
        self.rejected = rejected
        self._by_symbol: dict[tuple[int, str], GeneRecord] = {}
        self._by_synonym: dict[tuple[int, str], GeneRecord] = {}
        for rec in self.records:
            self._by_symbol.setdefault((rec.tax_id, rec.symbol.lower()), rec)
        for rec in self.records:
            for syn in rec.synonyms:
                self._by_synonym.setdefault((rec.tax_id, syn.lower()), rec)

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, symbol: str, tax_id: int | None = None) -> GeneRecord | None:
        """Resolve a symbol to a gene, preferring official symbols over synonyms.

        Without a tax filter the match must be unique across species.
        """
        key = symbol.lower()
        if tax_id is not None:
            return self._by_symbol.get((tax_id, key)) or self._by_synonym.get((tax_id, key))
        direct = [r for (tax, sym), r in self._by_symbol.items() if sym == key]
        if len(direct) == 1:
            return direct[0]
        if len(direct) > 1:
            return None
        via_syn = [r for (tax, syn), r in self._by_synonym.items() if syn == key]
        return via_syn[0] if len(via_syn) == 1 else None

    def resolve_set(
        self, symbols: Sequence[str], tax_id: int | None = None
    ) -> tuple[dict[str, GeneRecord], list[str]]:
        """Resolve a gene set; unresolvable symbols are returned, not dropped."""
        resolved: dict[str, GeneRecord] = {}
        unresolved: list[str] = []
        for sym in symbols:
            rec = self.resolve(sym, tax_id)
            if rec is None:
                unresolved.append(sym)
            else:
                resolved[sym] = rec
        return resolved, unresolved


def parse_gene_info(stream: Iterable[str], tax_filter: set[int] | None = None) -> GeneRegistry:
    """Parse an NCBI gene_info TSV (tab-separated, ``#`` header line).

    Rows with a non-integer GeneID are rejected and counted on the registry.
    """
    records: list[GeneRecord] = []
    rejected = 0
    for line in stream:
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 5:
            rejected += 1
            continue
        try:
            tax_id = int(cols[0])
            gene_id = int(cols[1])
        except ValueError:
            rejected += 1
            continue
        symbol = cols[2].strip()
        if gene_id <= 0 or not symbol:
            rejected += 1
            continue
        if tax_filter is not None and tax_id not in tax_filter:
            continue
        synonyms = tuple(s for s in cols[4].split("|") if s and s != "-")
        records.append(GeneRecord(gene_id, symbol, tax_id, synonyms))
    return GeneRegistry(records, rejected)


class PubmedLinks(dict):
    """gene_id -> ascending, deduplicated tuple of PMIDs."""

    rejected: int = 0


def parse_gene2pubmed(stream: Iterable[str], tax_filter: set[int] | None = None) -> PubmedLinks:
    """Parse NCBI gene2pubmed (columns tax_id, GeneID, PubMed_ID)."""
    per_gene: dict[int, set[int]] = {}
    rejected = 0
    for line in stream:
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 3:
            rejected += 1
            continue
        try:
            tax_id, gene_id, pmid = int(cols[0]), int(cols[1]), int(cols[2])
        except ValueError:
            rejected += 1
            continue
        if tax_filter is not None and tax_id not in tax_filter:
            continue
        per_gene.setdefault(gene_id, set()).add(pmid)
    links = PubmedLinks({g: tuple(sorted(p)) for g, p in per_gene.items()})
    links.rejected = rejected
    return links


@dataclass(frozen=True)
class AbstractRecord:
    pmid: int
    title: str
    body: str
    linked_genes: frozenset[int] = frozenset()

    @property
    def text(self) -> str:
        return f"{self.title} {self.body}"


class AbstractStore(dict):
    """pmid -> AbstractRecord; duplicate PMIDs keep the first occurrence."""

    skipped: int = 0


def ingest_abstracts(lines: Iterable[str], links: Mapping[int, Sequence[int]]) -> AbstractStore:
    """Ingest JSONL abstracts (pmid, title, abstract) and back-fill gene links."""
    pmid_to_genes: dict[int, set[int]] = {}
    for gene_id, pmids in links.items():
        for pmid in pmids:
            pmid_to_genes.setdefault(pmid, set()).add(gene_id)

    store = AbstractStore()
    skipped = 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            pmid = int(obj["pmid"])
            title = str(obj["title"])
            body = str(obj["abstract"])
        except (ValueError, KeyError, TypeError):
            skipped += 1
            continue
        if not title and not body:
            skipped += 1
            continue
        if pmid in store:
            continue
        store[pmid] = AbstractRecord(
            pmid, title, body, frozenset(pmid_to_genes.get(pmid, set()))
        )
    store.skipped = skipped
    return store


@dataclass(frozen=True)
class LabeledGeneSet:
    label: str
    description: str
    genes: tuple[str, ...]
    species: int


class GmtParseError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


def _dedup(genes: Iterable[str]) -> tuple[str, ...]:
    seen: set[str] = set()
    out: list[str] = []
    for g in genes:
        if g and g not in seen:
            seen.add(g)
            out.append(g)
    return tuple(out)


def parse_gmt(text: str, species: int = HUMAN_TAX_ID) -> list[LabeledGeneSet]:
    """Parse GMT lines (name TAB description TAB gene TAB gene ...)."""
    sets: list[LabeledGeneSet] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) < 3:
            raise GmtParseError("expected name, description and at least one gene", lineno)
        genes = _dedup(fields[2:])
        if not genes:
            raise GmtParseError("gene list empty", lineno)
        sets.append(LabeledGeneSet(fields[0], fields[1], genes, species))
    return sets


def serialize_gmt(sets: Sequence[LabeledGeneSet]) -> str:
    return "".join(
        "\t".join([s.label, s.description, *s.genes]) + "\n" for s in sets
    )


@dataclass(frozen=True)
class MarkerGeneSet:
    cluster_id: str
    marker_type: MarkerType
    genes: tuple[str, ...]

    def __post_init__(self):
        if not self.genes:
            raise ValueError(f"empty marker gene set for cluster {self.cluster_id}")


@dataclass
class CellCluster:
    cluster_id: str
    class_label: str
    subclass_label: str
    supertype_label: str
    nt_type_label: str
    anatomical_location: str
    marker_sets: dict[MarkerType, MarkerGeneSet] = field(default_factory=dict)


class AtlasIngestError(ValueError):
    pass


class ClusterRegistry:
    """Cluster metadata plus attached marker gene sets."""

    def __init__(self):
        self.clusters: dict[str, CellCluster] = {}

    def __len__(self) -> int:
        return len(self.clusters)

    def __contains__(self, cluster_id: str) -> bool:
        return cluster_id in self.clusters

    def add(self, cluster: CellCluster) -> None:
        if cluster.cluster_id in self.clusters:
            raise AtlasIngestError(f"duplicate cluster_id {cluster.cluster_id!r}")
        self.clusters[cluster.cluster_id] = cluster

    def attach_marker_set(self, marker_set: MarkerGeneSet) -> None:
        cluster = self.clusters.get(marker_set.cluster_id)
        if cluster is None:
            raise AtlasIngestError(f"unknown cluster {marker_set.cluster_id!r}")
        cluster.marker_sets[marker_set.marker_type] = marker_set

    def ordered(self) -> list[CellCluster]:
        return [self.clusters[c] for c in sorted(self.clusters)]

    def marker_set_count(self, marker_type: MarkerType | None = None) -> int:
        if marker_type is None:
            return sum(len(c.marker_sets) for c in self.clusters.values())
        return sum(1 for c in self.clusters.values() if marker_type in c.marker_sets)

    def taxonomy(self) -> dict[str, set[str]]:
        return {
            "classes": {c.class_label for c in self.clusters.values()},
            "subclasses": {c.subclass_label for c in self.clusters.values()},
            "supertypes": {c.supertype_label for c in self.clusters.values()},
        }


_MARKER_COLUMNS = {
    "cluster_combo": MarkerType.CLUSTER_COMBO,
    "merfish": MarkerType.MERFISH,
    "tf": MarkerType.TF,
}

_METADATA_COLUMNS = (
    "cluster_id",
    "class_label",
    "subclass_label",
    "supertype_label",
    "nt_type_label",
    "anatomical_location",
)


def ingest_atlas(metadata_csv: str, markers_csv: str | None = None) -> ClusterRegistry:
    """Build a cluster registry from atlas metadata and marker CSVs.

    The metadata CSV needs the columns ``cluster_id, class_label,
    subclass_label, supertype_label, nt_type_label, anatomical_location``.
    The marker CSV has ``cluster_id`` plus any of ``cluster_combo, merfish,
    tf``, each cell a space-separated gene list; empty cells (or a missing
    column) leave that marker set absent.
    """
    registry = ClusterRegistry()
    reader = csv.DictReader(io.StringIO(metadata_csv))
    header = reader.fieldnames or []
    missing = [c for c in _METADATA_COLUMNS if c not in header]
    if missing:
        raise AtlasIngestError(f"metadata CSV missing columns: {', '.join(missing)}")
    for row in reader:
        registry.add(
            CellCluster(
                cluster_id=row["cluster_id"].strip(),
                class_label=row["class_label"].strip(),
                subclass_label=row["subclass_label"].strip(),
                supertype_label=row["supertype_label"].strip(),
                nt_type_label=row["nt_type_label"].strip(),
                anatomical_location=row["anatomical_location"].strip(),
            )
        )

    if markers_csv is not None:
        reader = csv.DictReader(io.StringIO(markers_csv))
        header = reader.fieldnames or []
        if "cluster_id" not in header:
            raise AtlasIngestError("marker CSV missing cluster_id column")
        present = [c for c in header if c in _MARKER_COLUMNS]
        for row in reader:
            cluster_id = row["cluster_id"].strip()
            for column in present:
                cell = (row.get(column) or "").strip()
                if not cell:
                    continue
                genes = _dedup(cell.split())
                registry.attach_marker_set(
                    MarkerGeneSet(cluster_id, _MARKER_COLUMNS[column], genes)
                )
    return registry


@dataclass(frozen=True)
class ExpressionMatrix:
    """Mean expression per (gene, cluster); rows genes, columns clusters."""

    genes: tuple[str, ...]
    clusters: tuple[str, ...]
    values: np.ndarray

    def column(self, cluster_id: str) -> int:
        try:
            return self.clusters.index(cluster_id)
        except ValueError:
            raise KeyError(f"cluster {cluster_id!r} not in expression matrix") from None


def parse_expression_csv(text: str) -> ExpressionMatrix:
    """First column gene symbol, remaining column headers are cluster ids."""
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if not rows:
        raise ValueError("empty expression CSV")
    clusters = tuple(h.strip() for h in rows[0][1:])
    genes: list[str] = []
    values: list[list[float]] = []
    for row in rows[1:]:
        genes.append(row[0].strip())
        values.append([float(v) for v in row[1:]])
    return ExpressionMatrix(tuple(genes), clusters, np.asarray(values, dtype=float))


def top_k_degs(expression: ExpressionMatrix, target_cluster: str, k: int) -> list[str]:
    """Top-k genes by one-vs-rest log2 fold change of cluster means.

    Score = log2((target_mean + 1) / (rest_mean + 1)); ties break by
    ascending symbol. Requires at least two clusters.
    """
    if len(expression.clusters) < 2:
        raise ValueError("expression matrix needs at least 2 clusters for a DEG ranking")
    if k < 0:
        raise ValueError("k must be >= 0")
    col = expression.column(target_cluster)
    target = expression.values[:, col]
    rest = np.delete(expression.values, col, axis=1).mean(axis=1)
    scores = np.log2((target + 1.0) / (rest + 1.0))
    order = sorted(range(len(expression.genes)), key=lambda i: (-scores[i], expression.genes[i]))
    return [expression.genes[i] for i in order[:k]]


def generate_top20_sets(
    registry: ClusterRegistry, expression: ExpressionMatrix, k: int = 20
) -> int:
    """Attach top-k DEG marker sets for every cluster with expression support."""
    generated = 0
    for cluster_id in sorted(registry.clusters):
        if cluster_id not in expression.clusters:
            continue  # no expression support for this cluster
        genes = top_k_degs(expression, cluster_id, k)
        if not genes:
            continue
        registry.attach_marker_set(
            MarkerGeneSet(cluster_id, MarkerType.TOP20_DEG, tuple(genes))
        )
        generated += 1
    return generated


@dataclass
class CorpusStore:
    """Bundles the literature-side registries used by retrieval."""

    registry: GeneRegistry
    links: Mapping[int, Sequence[int]]
    abstracts: AbstractStore
    primary_tax: int = MOUSE_TAX_ID

    def pmids_for_gene(self, symbol: str) -> tuple[int, ...]:
        rec = self.registry.resolve(symbol, self.primary_tax) or self.registry.resolve(symbol)
        if rec is None:
            return ()
        return tuple(p for p in self.links.get(rec.gene_id, ()) if p in self.abstracts)
