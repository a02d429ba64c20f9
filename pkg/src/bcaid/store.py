"""Persistence and search for clusters, gene sets, annotations, summaries,
and community submissions.

Backed by an embedded SQLite database; the normative interchange format is
the JSONL export schema (one file per entity type, documented field names,
UTC ISO-8601 timestamps with seconds precision). History is append-only:
saving over an existing annotation creates a new version and prior versions
are retained; submissions are stored alongside, never replacing, the
machine annotations.
"""

from __future__ import annotations

import json
import re
import sqlite3
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .agents import AnnotationRecord, CellTypeSummary
from .corpus import (
    AbstractRecord,
    AbstractStore,
    CellCluster,
    ClusterRegistry,
    CorpusStore,
    GeneRecord,
    GeneRegistry,
    MarkerGeneSet,
    MarkerType,
    PubmedLinks,
)
from .gateways import LmExchange

_GO_ID = re.compile(r"^GO:[0-9]{7}$")

PAGE_SIZES = (20, 90)

SIMPLE_FIELDS = (
    "cluster_id",
    "supertype_label",
    "class_label",
    "nt_type_label",
    "marker_type",
    "genes",
)

ADVANCED_FIELDS = (
    "cluster_id",
    "gene",
    "marker_type",
    "class_label",
    "supertype_label",
    "nt_type",
    "go_term",
    "pmid",
    "annotation",
)

FILTER_FIELDS = (
    "class_label",
    "subclass_label",
    "supertype_label",
    "nt_type_label",
    "marker_type",
    "source",
)

ANNOTATION_SOURCES = ("initial", "top_pm", "top_gene")

SUMMARY_TARGET = "summary"
_SUMMARY_EDIT_FIELDS = ("brief", "detailed")
_GENESET_EDIT_FIELDS = ("initial", "top_pm", "top_gene")


class StoreError(RuntimeError):
    pass


class NotFoundError(StoreError):
    pass


class IntegrityError(StoreError):
    pass


class ValidationError(StoreError):
    pass


class SearchMode(Enum):
    SIMPLE = "simple"
    ADVANCED = "advanced"


class SubmissionStatus(Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class CommunitySubmission:
    submission_id: str
    cluster_id: str
    target: str  # marker type value or "summary"
    field_name: str
    proposed_text: str
    author: str
    contact: str | None
    submitted_at: str
    status: SubmissionStatus

    def to_dict(self) -> dict:
        return {
            "submission_id": self.submission_id,
            "cluster_id": self.cluster_id,
            "target": self.target,
            "field_name": self.field_name,
            "proposed_text": self.proposed_text,
            "author": self.author,
            "contact": self.contact,
            "submitted_at": self.submitted_at,
            "status": self.status.value,
        }


@dataclass
class SearchQuery:
    mode: SearchMode = SearchMode.SIMPLE
    simple_field: str | None = None
    simple_value: str | None = None
    advanced: dict[str, str] = field(default_factory=dict)
    filters: dict[str, str] = field(default_factory=dict)
    page: int = 1
    page_size: int = 20

    def validate(self) -> None:
        if self.page < 1:
            raise ValidationError("page must be >= 1")
        if self.page_size not in PAGE_SIZES:
            raise ValidationError(f"page_size must be one of {PAGE_SIZES}")
        if self.mode is SearchMode.SIMPLE:
            if self.simple_field is not None and self.simple_field not in SIMPLE_FIELDS:
                raise ValidationError(
                    f"unknown simple field {self.simple_field!r}; "
                    f"legal fields: {', '.join(SIMPLE_FIELDS)}"
                )
            if (self.simple_field is None) != (self.simple_value is None):
                raise ValidationError("simple search needs exactly one field and a value")
        else:
            for key in self.advanced:
                if key not in ADVANCED_FIELDS:
                    raise ValidationError(
                        f"unknown advanced field {key!r}; "
                        f"legal fields: {', '.join(ADVANCED_FIELDS)}"
                    )
        for key in self.filters:
            if key not in FILTER_FIELDS:
                raise ValidationError(
                    f"unknown filter {key!r}; legal filters: {', '.join(FILTER_FIELDS)}"
                )
        if "marker_type" in self.filters:
            _parse_marker_type(self.filters["marker_type"])
        if "source" in self.filters and self.filters["source"] not in ANNOTATION_SOURCES:
            raise ValidationError(
                f"unknown source {self.filters['source']!r}; "
                f"legal sources: {', '.join(ANNOTATION_SOURCES)}"
            )


def _parse_marker_type(value: str) -> MarkerType:
    try:
        return MarkerType(value)
    except ValueError:
        raise ValidationError(
            f"unknown marker type {value!r}; legal types: "
            + ", ".join(m.value for m in MarkerType)
        ) from None


@dataclass(frozen=True)
class SearchPage:
    items: list[dict]
    total: int
    page: int
    page_size: int
    rollups: dict[str, int]


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


_SCHEMA = """
CREATE TABLE IF NOT EXISTS clusters (
    cluster_id TEXT PRIMARY KEY,
    class_label TEXT NOT NULL,
    subclass_label TEXT NOT NULL,
    supertype_label TEXT NOT NULL,
    nt_type_label TEXT NOT NULL,
    anatomical_location TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS gene_sets (
    cluster_id TEXT NOT NULL,
    marker_type TEXT NOT NULL,
    genes TEXT NOT NULL,
    PRIMARY KEY (cluster_id, marker_type)
);
CREATE TABLE IF NOT EXISTS annotations (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    cluster_id TEXT NOT NULL,
    marker_type TEXT NOT NULL,
    version INTEGER NOT NULL,
    payload TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS summaries (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    cluster_id TEXT NOT NULL,
    version INTEGER NOT NULL,
    payload TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS submissions (
    submission_id TEXT PRIMARY KEY,
    cluster_id TEXT NOT NULL,
    target TEXT NOT NULL,
    field_name TEXT NOT NULL,
    proposed_text TEXT NOT NULL,
    author TEXT NOT NULL,
    contact TEXT,
    submitted_at TEXT NOT NULL,
    status TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS abstracts (
    pmid INTEGER PRIMARY KEY,
    title TEXT NOT NULL,
    body TEXT NOT NULL,
    linked_genes TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS genes (
    gene_id INTEGER PRIMARY KEY,
    symbol TEXT NOT NULL,
    tax_id INTEGER NOT NULL,
    synonyms TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS gene_pmids (
    gene_id INTEGER NOT NULL,
    pmid INTEGER NOT NULL,
    PRIMARY KEY (gene_id, pmid)
);
CREATE TABLE IF NOT EXISTS go_names (
    go_id TEXT PRIMARY KEY,
    name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS exchanges (
    exchange_id TEXT PRIMARY KEY,
    payload TEXT NOT NULL
);
"""

_MARKER_ORDER_SQL = {m.value: i for i, m in enumerate(MarkerType)}


class AnnotationStore:
    """Embedded store; one connection guarded by a lock (atomic visibility)."""

    DEFAULT_ATLAS_LINK = "https://knowledge.brain-map.org/celltypes?cluster={cluster_id}"

    def __init__(
        self,
        path: str | Path = ":memory:",
        clock: Callable[[], str] = utc_now_iso,
        atlas_link_template: str = DEFAULT_ATLAS_LINK,
    ):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._lock = threading.RLock()
        self.clock = clock
        self.atlas_link_template = atlas_link_template
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- ingestion -----------------------------------------------------

    def add_clusters(self, registry: ClusterRegistry) -> None:
        for cluster in registry.ordered():
            self.add_cluster(cluster)
            for marker_type, gene_set in sorted(
                cluster.marker_sets.items(), key=lambda kv: kv[0].value
            ):
                self.add_gene_set(gene_set)

    def add_cluster(self, cluster: CellCluster) -> None:
        with self._lock, self._conn:
            try:
                self._conn.execute(
                    "INSERT INTO clusters VALUES (?, ?, ?, ?, ?, ?)",
                    (
                        cluster.cluster_id,
                        cluster.class_label,
                        cluster.subclass_label,
                        cluster.supertype_label,
                        cluster.nt_type_label,
                        cluster.anatomical_location,
                    ),
                )
            except sqlite3.IntegrityError:
                raise IntegrityError(f"duplicate cluster {cluster.cluster_id!r}") from None

    def add_gene_set(self, gene_set: MarkerGeneSet) -> None:
        self._require_cluster(gene_set.cluster_id)
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO gene_sets VALUES (?, ?, ?)",
                (
                    gene_set.cluster_id,
                    gene_set.marker_type.value,
                    json.dumps(list(gene_set.genes)),
                ),
            )

    def add_abstracts(self, abstracts: Iterable[AbstractRecord]) -> None:
        with self._lock, self._conn:
            for record in abstracts:
                self._conn.execute(
                    "INSERT OR IGNORE INTO abstracts VALUES (?, ?, ?, ?)",
                    (
                        record.pmid,
                        record.title,
                        record.body,
                        json.dumps(sorted(record.linked_genes)),
                    ),
                )

    def add_genes(self, registry: GeneRegistry) -> None:
        with self._lock, self._conn:
            for record in registry.records:
                self._conn.execute(
                    "INSERT OR IGNORE INTO genes VALUES (?, ?, ?, ?)",
                    (record.gene_id, record.symbol, record.tax_id, json.dumps(list(record.synonyms))),
                )

    def add_gene_links(self, links: Mapping[int, Sequence[int]]) -> None:
        with self._lock, self._conn:
            for gene_id in sorted(links):
                for pmid in links[gene_id]:
                    self._conn.execute(
                        "INSERT OR IGNORE INTO gene_pmids VALUES (?, ?)", (gene_id, pmid)
                    )

    def add_go_names(self, names: Mapping[str, str]) -> None:
        with self._lock, self._conn:
            for go_id in sorted(names):
                self._conn.execute(
                    "INSERT OR REPLACE INTO go_names VALUES (?, ?)", (go_id, names[go_id])
                )

    def save_exchanges(self, exchanges: Iterable[LmExchange]) -> None:
        with self._lock, self._conn:
            for ex in exchanges:
                payload = json.dumps(
                    {
                        "messages": list(ex.messages),
                        "response": ex.response,
                        "latency_s": ex.latency_s,
                        "prompt_tokens": ex.prompt_tokens,
                        "completion_tokens": ex.completion_tokens,
                    },
                    sort_keys=True,
                )
                self._conn.execute(
                    "INSERT OR IGNORE INTO exchanges VALUES (?, ?)", (ex.exchange_id, payload)
                )

    # -- annotations ---------------------------------------------------

    def save_annotation(self, record: AnnotationRecord | CellTypeSummary) -> int:
        """Persist a record or summary; rewriting a key appends a new version."""
        if isinstance(record, AnnotationRecord):
            self._require_cluster(record.cluster_id)
            with self._lock, self._conn:
                (version,) = self._conn.execute(
                    "SELECT COALESCE(MAX(version), 0) + 1 FROM annotations "
                    "WHERE cluster_id = ? AND marker_type = ?",
                    (record.cluster_id, record.marker_type.value),
                ).fetchone()
                cur = self._conn.execute(
                    "INSERT INTO annotations (cluster_id, marker_type, version, payload, created_at) "
                    "VALUES (?, ?, ?, ?, ?)",
                    (
                        record.cluster_id,
                        record.marker_type.value,
                        version,
                        json.dumps(record.to_dict(), sort_keys=True),
                        record.created_at,
                    ),
                )
                return int(cur.lastrowid)
        if isinstance(record, CellTypeSummary):
            self._require_cluster(record.cluster_id)
            with self._lock, self._conn:
                (version,) = self._conn.execute(
                    "SELECT COALESCE(MAX(version), 0) + 1 FROM summaries WHERE cluster_id = ?",
                    (record.cluster_id,),
                ).fetchone()
                cur = self._conn.execute(
                    "INSERT INTO summaries (cluster_id, version, payload, created_at) "
                    "VALUES (?, ?, ?, ?)",
                    (
                        record.cluster_id,
                        version,
                        json.dumps(record.to_dict(), sort_keys=True),
                        record.created_at,
                    ),
                )
                return int(cur.lastrowid)
        raise ValidationError(f"cannot persist object of type {type(record).__name__}")

    def latest_annotation(
        self, cluster_id: str, marker_type: MarkerType
    ) -> AnnotationRecord | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT payload FROM annotations WHERE cluster_id = ? AND marker_type = ? "
                "ORDER BY version DESC LIMIT 1",
                (cluster_id, marker_type.value),
            ).fetchone()
        return AnnotationRecord.from_dict(json.loads(row[0])) if row else None

    def annotation_version_count(self, cluster_id: str, marker_type: MarkerType) -> int:
        with self._lock:
            (n,) = self._conn.execute(
                "SELECT COUNT(*) FROM annotations WHERE cluster_id = ? AND marker_type = ?",
                (cluster_id, marker_type.value),
            ).fetchone()
        return int(n)

    def latest_summary(self, cluster_id: str) -> CellTypeSummary | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT payload FROM summaries WHERE cluster_id = ? ORDER BY version DESC LIMIT 1",
                (cluster_id,),
            ).fetchone()
        return CellTypeSummary.from_dict(json.loads(row[0])) if row else None

    # -- submissions ---------------------------------------------------

    def submit_edit(
        self,
        cluster_id: str,
        target: str,
        field_name: str,
        proposed_text: str,
        author: str,
        contact: str | None = None,
    ) -> CommunitySubmission:
        """Store an expert edit alongside (never replacing) the original."""
        if not proposed_text.strip():
            raise ValidationError("proposed_text must not be empty")
        if not author.strip():
            raise ValidationError("author must not be empty")
        self._require_cluster(cluster_id)
        if target == SUMMARY_TARGET:
            allowed = _SUMMARY_EDIT_FIELDS
        else:
            marker = _parse_marker_type(target)
            with self._lock:
                row = self._conn.execute(
                    "SELECT 1 FROM gene_sets WHERE cluster_id = ? AND marker_type = ?",
                    (cluster_id, marker.value),
                ).fetchone()
            if row is None:
                raise NotFoundError(
                    f"cluster {cluster_id!r} has no {marker.value} gene set"
                )
            allowed = _GENESET_EDIT_FIELDS
        if field_name not in allowed:
            raise ValidationError(
                f"unknown field {field_name!r} for target {target!r}; "
                f"legal fields: {', '.join(allowed)}"
            )
        with self._lock, self._conn:
            (count,) = self._conn.execute("SELECT COUNT(*) FROM submissions").fetchone()
            submission = CommunitySubmission(
                submission_id=f"S{count + 1:06d}",
                cluster_id=cluster_id,
                target=target,
                field_name=field_name,
                proposed_text=proposed_text,
                author=author,
                contact=contact,
                submitted_at=self.clock(),
                status=SubmissionStatus.PENDING,
            )
            self._conn.execute(
                "INSERT INTO submissions VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    submission.submission_id,
                    submission.cluster_id,
                    submission.target,
                    submission.field_name,
                    submission.proposed_text,
                    submission.author,
                    submission.contact,
                    submission.submitted_at,
                    submission.status.value,
                ),
            )
        return submission

    def list_submissions(self, cluster_id: str) -> list[CommunitySubmission]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT submission_id, cluster_id, target, field_name, proposed_text, "
                "author, contact, submitted_at, status FROM submissions "
                "WHERE cluster_id = ? ORDER BY submitted_at, submission_id",
                (cluster_id,),
            ).fetchall()
        return [
            CommunitySubmission(
                r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], SubmissionStatus(r[8])
            )
            for r in rows
        ]

    # -- views ----------------------------------------------------------

    def get_cluster(self, cluster_id: str) -> CellCluster:
        with self._lock:
            row = self._conn.execute(
                "SELECT cluster_id, class_label, subclass_label, supertype_label, "
                "nt_type_label, anatomical_location FROM clusters WHERE cluster_id = ?",
                (cluster_id,),
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown cluster {cluster_id!r}")
        cluster = CellCluster(*row)
        with self._lock:
            for mt, genes in self._conn.execute(
                "SELECT marker_type, genes FROM gene_sets WHERE cluster_id = ?",
                (cluster_id,),
            ):
                cluster.marker_sets[MarkerType(mt)] = MarkerGeneSet(
                    cluster_id, MarkerType(mt), tuple(json.loads(genes))
                )
        return cluster

    def known_pmids(self) -> frozenset[int]:
        with self._lock:
            rows = self._conn.execute("SELECT pmid FROM abstracts").fetchall()
        return frozenset(r[0] for r in rows)

    def get_cluster_view(self, cluster_id: str) -> dict:
        """Three-section composite: cluster info, summary, per-set annotations,
        plus every community submission for the cluster."""
        cluster = self.get_cluster(cluster_id)
        known = self.known_pmids()
        summary = self.latest_summary(cluster_id)
        gene_sets = []
        for marker_type in MarkerType:
            gene_set = cluster.marker_sets.get(marker_type)
            if gene_set is None:
                continue
            record = self.latest_annotation(cluster_id, marker_type)
            pmids = sorted(record.all_cited_pmids()) if record else []
            gene_sets.append(
                {
                    "marker_type": marker_type.value,
                    "genes": list(gene_set.genes),
                    "annotation": record.to_dict() if record else None,
                    "pmids": [{"pmid": p, "known": p in known} for p in pmids],
                }
            )
        return {
            "cluster": {
                "cluster_id": cluster.cluster_id,
                "class_label": cluster.class_label,
                "subclass_label": cluster.subclass_label,
                "supertype_label": cluster.supertype_label,
                "nt_type_label": cluster.nt_type_label,
                "anatomical_location": cluster.anatomical_location,
                "atlas_link": self.atlas_link_template.format(cluster_id=cluster.cluster_id),
            },
            "summary": summary.to_dict() if summary else None,
            "gene_sets": gene_sets,
            "submissions": [s.to_dict() for s in self.list_submissions(cluster_id)],
        }

    # -- search ----------------------------------------------------------

    def _load_rows(self) -> list[dict]:
        with self._lock:
            raw = self._conn.execute(
                "SELECT g.cluster_id, g.marker_type, g.genes, c.class_label, "
                "c.subclass_label, c.supertype_label, c.nt_type_label "
                "FROM gene_sets g JOIN clusters c ON c.cluster_id = g.cluster_id"
            ).fetchall()
            latest: dict[tuple[str, str], dict] = {}
            for cluster_id, marker_type, payload in self._conn.execute(
                "SELECT cluster_id, marker_type, payload FROM annotations "
                "ORDER BY version"
            ):
                latest[(cluster_id, marker_type)] = json.loads(payload)
            go_names = dict(self._conn.execute("SELECT go_id, name FROM go_names"))

        rows = []
        for cluster_id, marker_type, genes_json, class_label, subclass, supertype, nt in raw:
            genes = json.loads(genes_json)
            record = latest.get((cluster_id, marker_type))
            texts: list[str] = []
            go_ids: set[str] = set()
            pmids: set[int] = set()
            sources: list[str] = []
            if record:
                texts.append(record["initial_narrative"])
                sources.append("initial")
                go_ids.update(t for t, _ in record["initial_go_terms"])
                for variant in ("top_pm", "top_gene"):
                    refined = record["refined"].get(variant)
                    if refined:
                        texts.append(refined["summary"])
                        sources.append(variant)
                        go_ids.update(t for t, _ in refined["go_terms"])
                        pmids.update(refined["cited_pmids"])
            rows.append(
                {
                    "cluster_id": cluster_id,
                    "marker_type": marker_type,
                    "genes": genes,
                    "genes_lower": {g.lower() for g in genes},
                    "class_label": class_label,
                    "subclass_label": subclass,
                    "supertype_label": supertype,
                    "nt_type_label": nt,
                    "annotation_text": " ".join(texts),
                    "go_ids": go_ids,
                    "go_name_text": " ".join(go_names.get(g, "") for g in sorted(go_ids)),
                    "pmids": pmids,
                    "sources": sources,
                }
            )
        rows.sort(key=lambda r: (r["cluster_id"], _MARKER_ORDER_SQL[r["marker_type"]]))
        return rows

    @staticmethod
    def _row_matches(row: dict, field_name: str, value: str) -> bool:
        value = value.strip()
        if field_name == "cluster_id":
            return row["cluster_id"] == value
        if field_name in ("gene", "genes"):
            return value.lower() in row["genes_lower"]
        if field_name == "marker_type":
            return row["marker_type"] == _parse_marker_type(value).value
        if field_name in ("class_label", "subclass_label", "supertype_label"):
            return value.lower() in row[field_name].lower()
        if field_name in ("nt_type", "nt_type_label"):
            return value.lower() in row["nt_type_label"].lower()
        if field_name == "go_term":
            if _GO_ID.match(value):
                return value in row["go_ids"]
            return value.lower() in row["go_name_text"].lower()
        if field_name == "pmid":
            try:
                return int(value) in row["pmids"]
            except ValueError:
                raise ValidationError(f"pmid predicate must be an integer, got {value!r}") from None
        if field_name == "annotation":
            return value.lower() in row["annotation_text"].lower()
        raise ValidationError(f"unknown search field {field_name!r}")

    def search(self, query: SearchQuery) -> SearchPage:
        """Deterministically ordered gene-set rows matching every predicate."""
        query.validate()
        rows = self._load_rows()

        predicates: list[tuple[str, str]] = []
        if query.mode is SearchMode.SIMPLE:
            if query.simple_field is not None:
                predicates.append((query.simple_field, query.simple_value or ""))
        else:
            predicates.extend((k, v) for k, v in sorted(query.advanced.items()) if v)

        matches = []
        for row in rows:
            if all(self._row_matches(row, f, v) for f, v in predicates):
                if self._passes_filters(row, query.filters):
                    matches.append(row)

        rollups = {
            "classes": len({r["class_label"] for r in matches}),
            "subclasses": len({r["subclass_label"] for r in matches}),
            "supertypes": len({r["supertype_label"] for r in matches}),
            "clusters": len({r["cluster_id"] for r in matches}),
        }
        offset = (query.page - 1) * query.page_size
        page_rows = matches[offset : offset + query.page_size]
        items = [
            {
                "cluster_id": r["cluster_id"],
                "marker_type": r["marker_type"],
                "genes": r["genes"],
                "class_label": r["class_label"],
                "subclass_label": r["subclass_label"],
                "supertype_label": r["supertype_label"],
                "nt_type_label": r["nt_type_label"],
                "annotated": bool(r["sources"]),
                "sources": r["sources"],
            }
            for r in page_rows
        ]
        return SearchPage(items, len(matches), query.page, query.page_size, rollups)

    @staticmethod
    def _passes_filters(row: dict, filters: Mapping[str, str]) -> bool:
        for key, value in filters.items():
            if not value:
                continue
            if key == "marker_type":
                if row["marker_type"] != _parse_marker_type(value).value:
                    return False
            elif key == "source":
                if value not in row["sources"]:
                    return False
            elif row[key] != value:
                return False
        return True

    # -- stats and interchange -------------------------------------------

    def stats(self) -> dict:
        with self._lock:
            (clusters,) = self._conn.execute("SELECT COUNT(*) FROM clusters").fetchone()
            per_type = dict(
                self._conn.execute(
                    "SELECT marker_type, COUNT(*) FROM gene_sets GROUP BY marker_type"
                ).fetchall()
            )
            (annotated,) = self._conn.execute(
                "SELECT COUNT(DISTINCT cluster_id || '/' || marker_type) FROM annotations"
            ).fetchone()
            (summarized,) = self._conn.execute(
                "SELECT COUNT(DISTINCT cluster_id) FROM summaries"
            ).fetchone()
            (submissions,) = self._conn.execute("SELECT COUNT(*) FROM submissions").fetchone()
        gene_sets = {m.value: per_type.get(m.value, 0) for m in MarkerType}
        gene_sets["total"] = sum(per_type.values())
        return {
            "clusters": clusters,
            "gene_sets": gene_sets,
            "annotated_gene_sets": annotated,
            "summarized_clusters": summarized,
            "submissions": submissions,
        }

    _EXPORT_TABLES = {
        "clusters": ("clusters", ("cluster_id", "class_label", "subclass_label", "supertype_label", "nt_type_label", "anatomical_location"), "cluster_id"),
        "gene_sets": ("gene_sets", ("cluster_id", "marker_type", "genes"), "cluster_id, marker_type"),
        "annotations": ("annotations", ("cluster_id", "marker_type", "version", "payload", "created_at"), "cluster_id, marker_type, version"),
        "summaries": ("summaries", ("cluster_id", "version", "payload", "created_at"), "cluster_id, version"),
        "submissions": ("submissions", ("submission_id", "cluster_id", "target", "field_name", "proposed_text", "author", "contact", "submitted_at", "status"), "submission_id"),
        "abstracts": ("abstracts", ("pmid", "title", "body", "linked_genes"), "pmid"),
        "genes": ("genes", ("gene_id", "symbol", "tax_id", "synonyms"), "gene_id"),
        "gene_pmids": ("gene_pmids", ("gene_id", "pmid"), "gene_id, pmid"),
        "go_names": ("go_names", ("go_id", "name"), "go_id"),
        "exchanges": ("exchanges", ("exchange_id", "payload"), "exchange_id"),
    }

    _JSON_COLUMNS = {"genes", "linked_genes", "synonyms", "payload"}

    def export_jsonl(self, out_dir: str | Path) -> dict[str, int]:
        """Write one JSONL file per entity type; returns line counts."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        counts: dict[str, int] = {}
        for name, (table, columns, order) in self._EXPORT_TABLES.items():
            with self._lock:
                rows = self._conn.execute(
                    f"SELECT {', '.join(columns)} FROM {table} ORDER BY {order}"
                ).fetchall()
            path = out / f"{name}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                for row in rows:
                    obj = {}
                    for col, value in zip(columns, row):
                        obj[col] = json.loads(value) if col in self._JSON_COLUMNS and value is not None else value
                    fh.write(json.dumps(obj, sort_keys=True) + "\n")
            counts[name] = len(rows)
        return counts

    def import_jsonl(self, in_dir: str | Path) -> dict[str, int]:
        src = Path(in_dir)
        counts: dict[str, int] = {}
        for name, (table, columns, _order) in self._EXPORT_TABLES.items():
            path = src / f"{name}.jsonl"
            if not path.exists():
                continue
            n = 0
            with open(path, encoding="utf-8") as fh, self._lock, self._conn:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    values = [
                        json.dumps(obj[c], sort_keys=True) if c in self._JSON_COLUMNS else obj[c]
                        for c in columns
                    ]
                    placeholders = ", ".join("?" for _ in columns)
                    self._conn.execute(
                        f"INSERT OR REPLACE INTO {table} ({', '.join(columns)}) VALUES ({placeholders})",
                        values,
                    )
                    n += 1
            counts[name] = n
        return counts

    # -- corpus reconstruction --------------------------------------------

    def load_cluster_registry(self) -> ClusterRegistry:
        registry = ClusterRegistry()
        with self._lock:
            ids = [r[0] for r in self._conn.execute("SELECT cluster_id FROM clusters ORDER BY cluster_id")]
        for cluster_id in ids:
            registry.add(self.get_cluster(cluster_id))
        return registry

    def load_corpus(self, primary_tax: int | None = None) -> CorpusStore:
        with self._lock:
            gene_rows = self._conn.execute(
                "SELECT gene_id, symbol, tax_id, synonyms FROM genes"
            ).fetchall()
            link_rows = self._conn.execute(
                "SELECT gene_id, pmid FROM gene_pmids ORDER BY gene_id, pmid"
            ).fetchall()
            abstract_rows = self._conn.execute(
                "SELECT pmid, title, body, linked_genes FROM abstracts"
            ).fetchall()
        registry = GeneRegistry(
            [GeneRecord(g, s, t, tuple(json.loads(syn))) for g, s, t, syn in gene_rows]
        )
        links = PubmedLinks()
        per_gene: dict[int, list[int]] = {}
        for gene_id, pmid in link_rows:
            per_gene.setdefault(gene_id, []).append(pmid)
        links.update({g: tuple(p) for g, p in per_gene.items()})
        abstracts = AbstractStore()
        for pmid, title, body, linked in abstract_rows:
            abstracts[pmid] = AbstractRecord(pmid, title, body, frozenset(json.loads(linked)))
        kwargs = {"primary_tax": primary_tax} if primary_tax is not None else {}
        return CorpusStore(registry, links, abstracts, **kwargs)

    # -- helpers -----------------------------------------------------------

    def _require_cluster(self, cluster_id: str) -> None:
        with self._lock:
            row = self._conn.execute(
                "SELECT 1 FROM clusters WHERE cluster_id = ?", (cluster_id,)
            ).fetchone()
        if row is None:
            raise IntegrityError(f"unknown cluster {cluster_id!r}")
