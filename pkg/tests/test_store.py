from __future__ import annotations

import itertools
import json
import random

import pytest

from bcaid import agents
from bcaid.agents import AnnotationRecord, CellTypeSummary, RefinedAnnotation, Variant
from bcaid.corpus import CellCluster, MarkerGeneSet, MarkerType
from bcaid.retrieval import EvidenceSet, ScoredAbstract
from bcaid.store import (
    AnnotationStore,
    IntegrityError,
    NotFoundError,
    SearchMode,
    SearchQuery,
    SubmissionStatus,
    ValidationError,
)

from conftest import FIXED_CLOCK, build_corpus_store, build_cluster_registry, run_pipeline


def make_record(cluster_id: str, marker: MarkerType, text="Initial narrative.",
                cited=(11111111,), go=(("GO:0000001", 0.5),)) -> AnnotationRecord:
    refined = {
        variant: RefinedAnnotation(variant, f"{text} ({variant.value}). Second sentence.",
                                   tuple(cited), tuple(go), exchange_ids=("e1",))
        for variant in (Variant.TOP_PM, Variant.TOP_GENE)
    }
    evidence = EvidenceSet(
        tuple(ScoredAbstract(p, 0.5) for p in cited),
        tuple(ScoredAbstract(p, 0.5, via_gene="G1") for p in cited),
        "digest",
    )
    return AnnotationRecord(cluster_id, marker, text, tuple(go), refined, evidence,
                            "2026-01-01T00:00:00Z", ("e0",))


def make_summary(cluster_id: str, brief="Brief text. More text.") -> CellTypeSummary:
    return CellTypeSummary(cluster_id, brief, "Detailed text.", (("G1", 11111111),),
                           "somewhere", "GABA", (MarkerType.TF,), "2026-01-01T00:00:00Z", ("e2",))


def simple_cluster(cluster_id: str, **kwargs) -> CellCluster:
    defaults = dict(class_label="01 Class", subclass_label="Sub", supertype_label="Super",
                    nt_type_label="GABA", anatomical_location="somewhere")
    defaults.update(kwargs)
    return CellCluster(cluster_id, **defaults)


@pytest.fixture()
def db() -> AnnotationStore:
    store = AnnotationStore(clock=FIXED_CLOCK)
    cluster = simple_cluster("c1")
    store.add_cluster(cluster)
    store.add_gene_set(MarkerGeneSet("c1", MarkerType.TF, ("G1", "G2")))
    return store


@pytest.fixture()
def populated() -> AnnotationStore:
    """Store holding the full three-cluster mock pipeline output."""
    store = AnnotationStore(clock=FIXED_CLOCK)
    registry = build_cluster_registry()
    store.add_clusters(registry)
    corpus = build_corpus_store()
    store.add_abstracts(corpus.abstracts.values())
    for result in run_pipeline():
        for record in result.records:
            store.save_annotation(record)
        if result.summary:
            store.save_annotation(result.summary)
        store.save_exchanges(result.exchanges)
    return store


class TestSaveAnnotation:
    def test_write_then_read_equality(self, db):
        record = make_record("c1", MarkerType.TF)
        db.save_annotation(record)
        loaded = db.latest_annotation("c1", MarkerType.TF)
        assert loaded.to_dict() == record.to_dict()

    def test_versioning_keeps_priors_and_returns_latest(self, db):
        first = make_record("c1", MarkerType.TF, text="first version")
        second = make_record("c1", MarkerType.TF, text="second version")
        db.save_annotation(first)
        db.save_annotation(second)
        assert db.annotation_version_count("c1", MarkerType.TF) == 2
        assert db.latest_annotation("c1", MarkerType.TF).initial_narrative == "second version"

    def test_unknown_cluster_is_referential_integrity_error(self, db):
        with pytest.raises(IntegrityError, match="ghost"):
            db.save_annotation(make_record("ghost", MarkerType.TF))

    def test_summary_round_trip(self, db):
        summary = make_summary("c1")
        db.save_annotation(summary)
        assert db.latest_summary("c1").to_dict() == summary.to_dict()

    def test_thousand_writes_export_tally(self, db, tmp_path):
        # Oracle: the export file's line count.
        for i in range(1000):
            db.save_annotation(make_record("c1", MarkerType.TF, text=f"v{i}"))
        counts = db.export_jsonl(tmp_path)
        assert counts["annotations"] == 1000
        lines = (tmp_path / "annotations.jsonl").read_text().splitlines()
        assert len(lines) == 1000

    def test_unsupported_type_rejected(self, db):
        with pytest.raises(ValidationError):
            db.save_annotation({"not": "a record"})


class TestSubmissions:
    def test_valid_draft_gets_pending_status_and_server_timestamp(self, db):
        before = "2026-01-01T00:00:00Z"
        submission = db.submit_edit("c1", "tf", "initial", "Better text.", "Dr. A")
        assert submission.status is SubmissionStatus.PENDING
        assert submission.submitted_at == before  # fixed test clock
        assert submission.submission_id == "S000001"

    def test_two_submissions_ordered_by_time(self):
        times = iter(["2026-01-01T00:00:00Z", "2026-01-01T00:00:01Z"])
        store = AnnotationStore(clock=lambda: next(times))
        store.add_cluster(simple_cluster("c1"))
        store.add_gene_set(MarkerGeneSet("c1", MarkerType.TF, ("G1",)))
        first = store.submit_edit("c1", "tf", "initial", "one", "A")
        second = store.submit_edit("c1", "tf", "initial", "two", "B")
        listed = store.list_submissions("c1")
        assert [s.submission_id for s in listed] == [first.submission_id, second.submission_id]
        assert listed[0].submitted_at <= listed[1].submitted_at

    def test_unknown_field_name_is_validation_error(self, db):
        with pytest.raises(ValidationError, match="legal fields"):
            db.submit_edit("c1", "tf", "nonexistent_field", "text", "A")

    def test_empty_text_rejected(self, db):
        with pytest.raises(ValidationError, match="proposed_text"):
            db.submit_edit("c1", "tf", "initial", "   ", "A")

    def test_missing_target_rejected(self, db):
        with pytest.raises(NotFoundError):
            db.submit_edit("c1", "merfish", "initial", "text", "A")
        with pytest.raises(IntegrityError):
            db.submit_edit("nope", "tf", "initial", "text", "A")

    def test_summary_target_fields(self, db):
        submission = db.submit_edit("c1", "summary", "brief", "text", "A")
        assert submission.target == "summary"
        with pytest.raises(ValidationError):
            db.submit_edit("c1", "summary", "initial", "text", "A")

    def test_original_annotation_untouched_by_submission(self, db):
        record = make_record("c1", MarkerType.TF)
        db.save_annotation(record)
        db.submit_edit("c1", "tf", "initial", "expert rewrite", "A")
        assert db.latest_annotation("c1", MarkerType.TF).to_dict() == record.to_dict()
        assert db.annotation_version_count("c1", MarkerType.TF) == 1


class TestClusterView:
    def test_all_four_marker_sets_present(self, populated):
        view = populated.get_cluster_view("1571")
        assert len(view["gene_sets"]) == 4
        assert {b["marker_type"] for b in view["gene_sets"]} == {
            "cluster_combo", "merfish", "tf", "top20_deg"
        }
        assert view["summary"] is not None

    def test_cluster_without_summary_still_shows_sets(self, db):
        db.save_annotation(make_record("c1", MarkerType.TF))
        view = db.get_cluster_view("c1")
        assert view["summary"] is None
        assert len(view["gene_sets"]) == 1

    def test_unknown_cluster_not_found(self, db):
        with pytest.raises(NotFoundError):
            db.get_cluster_view("missing")

    def test_every_pmid_resolves_or_is_flagged_external(self, populated):
        # Join check: flags must agree with the ingested abstract table.
        known = populated.known_pmids()
        for cluster_id in ("1571", "2042", "3001"):
            view = populated.get_cluster_view(cluster_id)
            for block in view["gene_sets"]:
                for entry in block["pmids"]:
                    assert entry["known"] == (entry["pmid"] in known)

    def test_external_pmid_flagged(self, db):
        db.save_annotation(make_record("c1", MarkerType.TF, cited=(55555555,)))
        view = db.get_cluster_view("c1")
        assert view["gene_sets"][0]["pmids"] == [{"pmid": 55555555, "known": False}]

    def test_submissions_included_in_view(self, db):
        db.submit_edit("c1", "tf", "initial", "text", "A")
        view = db.get_cluster_view("c1")
        assert len(view["submissions"]) == 1


def brute_force_rows(store: AnnotationStore) -> list[dict]:
    """Independent linear scan used as the search oracle."""
    query = SearchQuery(page=1, page_size=90)
    out = []
    page = store.search(query)
    out.extend(page.items)
    total_pages = -(-page.total // 90)
    for p in range(2, total_pages + 1):
        out.extend(store.search(SearchQuery(page=p, page_size=90)).items)
    return out


class TestSearch:
    def test_nonexistent_cluster_id_gives_empty_page(self, populated):
        page = populated.search(
            SearchQuery(simple_field="cluster_id", simple_value="9999")
        )
        assert page.items == [] and page.total == 0

    def test_simple_gene_search(self, populated):
        page = populated.search(SearchQuery(simple_field="genes", simple_value="Slc6a3"))
        # cluster_combo, merfish and top20_deg of cluster 1571 all carry Slc6a3
        assert page.total == 3
        assert all(r["cluster_id"] == "1571" for r in page.items)
        assert all("Slc6a3" in r["genes"] for r in page.items)

    def test_gene_search_is_case_insensitive(self, populated):
        a = populated.search(SearchQuery(simple_field="genes", simple_value="slc6a3"))
        b = populated.search(SearchQuery(simple_field="genes", simple_value="SLC6A3"))
        assert a.total == b.total == 3

    def test_unknown_field_lists_legal_fields(self, populated):
        with pytest.raises(ValidationError, match="legal fields"):
            populated.search(SearchQuery(simple_field="bogus", simple_value="x"))

    def test_invalid_page_size_rejected(self, populated):
        with pytest.raises(ValidationError, match="page_size"):
            populated.search(SearchQuery(page_size=25))

    def test_advanced_conjunction_matches_linear_scan_oracle(self):
        # 30-row synthetic store; oracle filters the raw rows independently.
        store = AnnotationStore(clock=FIXED_CLOCK)
        rng = random.Random(10)
        genes_pool = ["Drd1", "Drd2", "Gad1", "Foxa2", "Slc6a3", "Penk"]
        inserted = []
        for i in range(10):
            cid = f"{i:04d}"
            store.add_cluster(simple_cluster(cid, class_label=f"{i % 3:02d} Class",
                                             nt_type_label=["GABA", "Glut", "Dopa"][i % 3]))
            for marker in (MarkerType.CLUSTER_COMBO, MarkerType.MERFISH, MarkerType.TF):
                genes = tuple(rng.sample(genes_pool, 3))
                store.add_gene_set(MarkerGeneSet(cid, marker, genes))
                inserted.append({"cluster_id": cid, "marker_type": marker.value,
                                 "genes": genes})
        query = SearchQuery(
            mode=SearchMode.ADVANCED,
            advanced={"gene": "Drd1", "marker_type": "tf"},
            page_size=90,
        )
        result = store.search(query)
        expected = [
            r for r in inserted
            if "Drd1" in r["genes"] and r["marker_type"] == "tf"
        ]
        got = [(r["cluster_id"], r["marker_type"]) for r in result.items]
        assert got == sorted((r["cluster_id"], r["marker_type"]) for r in expected)
        assert result.total == len(expected)

    def test_annotation_keyword_search(self, populated):
        page = populated.search(
            SearchQuery(mode=SearchMode.ADVANCED,
                        advanced={"annotation": "Basal Ganglia"}, page_size=90)
        )
        assert page.total > 0
        assert {r["cluster_id"] for r in page.items} == {"2042"}
        # keyword is case-insensitive substring
        lower = populated.search(
            SearchQuery(mode=SearchMode.ADVANCED,
                        advanced={"annotation": "basal ganglia"}, page_size=90)
        )
        assert lower.total == page.total

    def test_pmid_predicate(self, populated):
        record = populated.latest_annotation("2042", MarkerType.CLUSTER_COMBO)
        cited = sorted(record.all_cited_pmids())[0]
        page = populated.search(
            SearchQuery(mode=SearchMode.ADVANCED, advanced={"pmid": str(cited)},
                        page_size=90)
        )
        assert page.total >= 1
        assert any(
            r["cluster_id"] == "2042" and r["marker_type"] == "cluster_combo"
            for r in page.items
        )

    def test_go_term_predicate_exact_id(self, populated):
        any_row = populated.search(SearchQuery(page_size=90)).items[0]
        record = populated.latest_annotation(
            any_row["cluster_id"], MarkerType(any_row["marker_type"])
        )
        go_id = record.initial_go_terms[0][0]
        page = populated.search(
            SearchQuery(mode=SearchMode.ADVANCED, advanced={"go_term": go_id}, page_size=90)
        )
        assert any(r["cluster_id"] == any_row["cluster_id"] for r in page.items)

    def test_filters_are_exact(self, populated):
        page = populated.search(
            SearchQuery(filters={"marker_type": "tf"}, page_size=90)
        )
        assert page.total == 3
        assert all(r["marker_type"] == "tf" for r in page.items)

    def test_pagination_concatenation_equals_full_result(self, populated):
        full = populated.search(SearchQuery(page_size=90)).items
        paged = []
        page_no = 1
        while True:
            page = populated.search(SearchQuery(page=page_no, page_size=20))
            paged.extend(page.items)
            if not page.items:
                break
            page_no += 1
        assert paged == full
        keys = [(r["cluster_id"], r["marker_type"]) for r in paged]
        assert len(keys) == len(set(keys))  # no duplicates, no gaps

    def test_repeated_queries_identical(self, populated):
        q = SearchQuery(simple_field="nt_type_label", simple_value="GABA")
        assert populated.search(q) == populated.search(q)

    def test_rollups_match_brute_force(self, populated):
        page = populated.search(
            SearchQuery(mode=SearchMode.ADVANCED, advanced={"annotation": "Basal Ganglia"},
                        page_size=90)
        )
        rows = page.items
        assert page.rollups == {
            "classes": len({r["class_label"] for r in rows}),
            "subclasses": len({r["subclass_label"] for r in rows}),
            "supertypes": len({r["supertype_label"] for r in rows}),
            "clusters": len({r["cluster_id"] for r in rows}),
        }


class TestInterchange:
    def test_export_import_round_trip(self, populated, tmp_path):
        populated.submit_edit("1571", "tf", "initial", "community text", "Dr. B")
        counts = populated.export_jsonl(tmp_path / "dump")
        clone = AnnotationStore()
        imported = clone.import_jsonl(tmp_path / "dump")
        assert imported == counts
        assert clone.stats() == populated.stats()
        assert (
            clone.get_cluster_view("1571") == populated.get_cluster_view("1571")
        )

    def test_export_is_deterministic(self, populated, tmp_path):
        populated.export_jsonl(tmp_path / "a")
        populated.export_jsonl(tmp_path / "b")
        for name in ("clusters", "gene_sets", "annotations", "summaries"):
            assert (tmp_path / "a" / f"{name}.jsonl").read_bytes() == (
                tmp_path / "b" / f"{name}.jsonl"
            ).read_bytes()

    def test_stats_counts(self, populated):
        stats = populated.stats()
        assert stats["clusters"] == 3
        assert stats["gene_sets"]["total"] == 10
        assert stats["gene_sets"]["top20_deg"] == 2
        assert stats["annotated_gene_sets"] == 10
        assert stats["summarized_clusters"] == 3
