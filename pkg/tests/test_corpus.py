from __future__ import annotations

import json
import math
import random

import numpy as np
import pytest

from bcaid import corpus
from bcaid.corpus import (
    ATLAS_CLUSTERS,
    ATLAS_DEG_CLUSTERS,
    AtlasIngestError,
    ExpressionMatrix,
    MarkerGeneSet,
    MarkerType,
    gene_set_total,
    ingest_abstracts,
    ingest_atlas,
    parse_expression_csv,
    parse_gene2pubmed,
    parse_gene_info,
    parse_gmt,
    serialize_gmt,
    top_k_degs,
)

from conftest import read_fixture


GENE_INFO_3ROWS = """\
#tax_id\tGeneID\tSymbol\tLocusTag\tSynonyms
10090\t1\tSlc6a3\t-\tDat1
10090\t2\tTh\t-\t-
9606\t3\tTH\t-\t-
"""


class TestGeneInfo:
    def test_tax_filter_keeps_matching_rows(self):
        registry = parse_gene_info(GENE_INFO_3ROWS.splitlines(), {10090})
        assert len(registry) == 2

    def test_synonym_resolves_to_canonical_symbol(self):
        registry = parse_gene_info(GENE_INFO_3ROWS.splitlines(), {10090})
        record = registry.resolve("Dat1", 10090)
        assert record is not None and record.symbol == "Slc6a3"

    def test_official_symbol_beats_synonym(self):
        rows = GENE_INFO_3ROWS + "10090\t4\tDat1\t-\t-\n"
        registry = parse_gene_info(rows.splitlines(), {10090})
        assert registry.resolve("Dat1", 10090).gene_id == 4

    def test_duplicate_symbol_across_taxa_disambiguated(self):
        registry = parse_gene_info(GENE_INFO_3ROWS.splitlines())
        assert registry.resolve("Th", 10090).gene_id == 2
        assert registry.resolve("th", 9606).gene_id == 3
        # ambiguous without a tax filter
        assert registry.resolve("Th") is None

    def test_non_integer_gene_id_rejected_with_count(self):
        rows = GENE_INFO_3ROWS + "10090\tnot-a-number\tBad\t-\t-\n"
        registry = parse_gene_info(rows.splitlines())
        assert registry.rejected == 1
        assert len(registry) == 3

    def test_fixture_registry(self):
        with open("tests/fixtures/gene_info.tsv", encoding="utf-8") as fh:
            registry = parse_gene_info(fh)
        assert registry.resolve("slc6a3", 10090).gene_id == 101
        assert registry.resolve("SATB2", 9606).gene_id == 23314
        assert registry.resolve("Satb2", 10090).gene_id == 102


class TestGene2Pubmed:
    def test_empty_stream(self):
        assert parse_gene2pubmed([]) == {}

    def test_tally_with_duplicates(self):
        rows = [
            "#tax_id\tGeneID\tPubMed_ID",
            "10090\t1\t30",
            "10090\t1\t10",
            "10090\t1\t30",  # duplicate
            "10090\t2\t20",
            "10090\t2\t40",
        ]
        links = parse_gene2pubmed(rows)
        assert set(links) == {1, 2}
        assert links[1] == (10, 30)  # sorted ascending, deduplicated
        assert sum(len(v) for v in links.values()) == 5 - 1

    def test_filter_excluding_everything(self):
        rows = ["10090\t1\t30", "9606\t2\t40"]
        assert parse_gene2pubmed(rows, {7227}) == {}

    def test_malformed_rows_counted(self):
        links = parse_gene2pubmed(["10090\t1\t30", "garbage line", "10090\tx\t2"])
        assert links.rejected == 2


class TestIngestAbstracts:
    def test_linked_genes_inverted_from_map(self):
        lines = [json.dumps({"pmid": 2, "title": "t", "abstract": "b"})]
        store = ingest_abstracts(lines, {7: (2,), 8: (2, 3)})
        assert store[2].linked_genes == frozenset({7, 8})

    def test_unknown_pmid_has_no_links(self):
        lines = [json.dumps({"pmid": 99, "title": "t", "abstract": "b"})]
        store = ingest_abstracts(lines, {7: (2,)})
        assert store[99].linked_genes == frozenset()

    def test_duplicate_pmid_keeps_first(self):
        lines = [
            json.dumps({"pmid": 5, "title": "first", "abstract": "b"}),
            json.dumps({"pmid": 5, "title": "second", "abstract": "b"}),
        ]
        store = ingest_abstracts(lines, {})
        assert store[5].title == "first"

    def test_unparsable_lines_skipped_and_counted(self):
        lines = ["not json", json.dumps({"pmid": 1, "title": "t", "abstract": "b"}), "{}"]
        store = ingest_abstracts(lines, {})
        assert store.skipped == 2
        assert len(store) == 1

    def test_join_count_oracle_on_100_line_fixture(self):
        # Oracle: count (gene, pmid) pairs whose pmid has an ingested abstract.
        rng = random.Random(11)
        links = {g: tuple(sorted(rng.sample(range(1000, 1200), rng.randint(1, 6))))
                 for g in range(1, 41)}
        pmids = rng.sample(range(1000, 1250), 100)
        lines = [json.dumps({"pmid": p, "title": f"t{p}", "abstract": "body"}) for p in pmids]
        store = ingest_abstracts(lines, links)
        expected = sum(
            1 for g, ps in links.items() for p in ps if p in set(pmids)
        )
        total_links = sum(len(a.linked_genes) for a in store.values())
        assert total_links == expected

    def test_link_consistency_invariant(self):
        # g in linked_genes(a)  <=>  a.pmid in map[g]
        rng = random.Random(3)
        links = {g: tuple(sorted(rng.sample(range(100, 140), 4))) for g in range(1, 11)}
        lines = [json.dumps({"pmid": p, "title": "t", "abstract": "b"}) for p in range(100, 140)]
        store = ingest_abstracts(lines, links)
        for record in store.values():
            for g in links:
                assert (g in record.linked_genes) == (record.pmid in links[g])


class TestGmt:
    def test_duplicate_genes_removed_preserving_order(self):
        sets = parse_gmt("s1\tdesc\tB\tA\tB\tC\n")
        assert sets[0].genes == ("B", "A", "C")

    def test_empty_file(self):
        assert parse_gmt("") == []

    def test_short_line_rejected_with_line_number(self):
        with pytest.raises(corpus.GmtParseError, match="line 2"):
            parse_gmt("ok\tdesc\tA\nbad\tonly-desc\n")

    def test_round_trip_identity_on_20_line_fixture(self):
        rng = random.Random(5)
        lines = []
        for i in range(20):
            genes = [f"G{rng.randint(1, 50)}" for _ in range(rng.randint(1, 8))]
            seen, ordered = set(), []
            for g in genes:
                if g not in seen:
                    seen.add(g)
                    ordered.append(g)
            lines.append("\t".join([f"set{i}", f"https://example.org/{i}", *ordered]))
        text = "\n".join(lines) + "\n"
        first = parse_gmt(text)
        assert parse_gmt(serialize_gmt(first)) == first

    def test_fixture_parses(self):
        sets = parse_gmt(read_fixture("sets.gmt"), species=10090)
        assert len(sets) == 5
        assert all(s.species == 10090 for s in sets)


class TestIngestAtlas:
    def test_three_cluster_fixture(self):
        registry = ingest_atlas(
            read_fixture("atlas_metadata.csv"), read_fixture("atlas_markers.csv")
        )
        assert len(registry) == 3
        # 1571 and 2042 carry all three provided types; 3001's merfish cell is empty
        assert registry.marker_set_count() == 8
        assert MarkerType.MERFISH not in registry.clusters["3001"].marker_sets
        assert len(registry.clusters["2042"].marker_sets) == 3

    def test_nine_sets_when_all_types_present(self):
        metadata = (
            "cluster_id,class_label,subclass_label,supertype_label,nt_type_label,anatomical_location\n"
            "a,c1,s1,t1,GABA,here\nb,c1,s1,t1,GABA,there\nc,c2,s2,t2,Glut,everywhere\n"
        )
        markers = "cluster_id,cluster_combo,merfish,tf\na,G1 G2,G3,G4\nb,G1,G2,G3\nc,G9,G8,G7\n"
        registry = ingest_atlas(metadata, markers)
        assert registry.marker_set_count() == 9

    def test_duplicate_cluster_id_is_hard_error(self):
        metadata = (
            "cluster_id,class_label,subclass_label,supertype_label,nt_type_label,anatomical_location\n"
            "a,c,s,t,GABA,x\na,c,s,t,GABA,y\n"
        )
        with pytest.raises(AtlasIngestError, match="duplicate"):
            ingest_atlas(metadata)

    def test_missing_marker_column_leaves_set_absent(self):
        metadata = (
            "cluster_id,class_label,subclass_label,supertype_label,nt_type_label,anatomical_location\n"
            "a,c,s,t,GABA,x\n"
        )
        registry = ingest_atlas(metadata, "cluster_id,cluster_combo\na,G1 G2\n")
        sets = registry.clusters["a"].marker_sets
        assert set(sets) == {MarkerType.CLUSTER_COMBO}

    def test_marker_genes_deduplicated(self):
        metadata = (
            "cluster_id,class_label,subclass_label,supertype_label,nt_type_label,anatomical_location\n"
            "a,c,s,t,GABA,x\n"
        )
        registry = ingest_atlas(metadata, "cluster_id,tf\na,G1 G2 G1\n")
        assert registry.clusters["a"].marker_sets[MarkerType.TF].genes == ("G1", "G2")

    def test_full_scale_manifest_arithmetic(self):
        assert gene_set_total(ATLAS_CLUSTERS, ATLAS_DEG_CLUSTERS) == 21_275
        assert 3 * 5322 + 5309 == 21_275


class TestTopKDegs:
    @staticmethod
    def matrix(genes, clusters, values) -> ExpressionMatrix:
        return ExpressionMatrix(tuple(genes), tuple(clusters), np.asarray(values, float))

    def test_k_zero(self):
        m = self.matrix(["A", "B"], ["c1", "c2"], [[1, 2], [3, 4]])
        assert top_k_degs(m, "c1", 0) == []

    def test_fold_change_sign(self):
        m = self.matrix(["A", "B"], ["c1", "c2"], [[5.0, 1.0], [1.0, 5.0]])
        assert top_k_degs(m, "c1", 1) == ["A"]
        assert top_k_degs(m, "c2", 1) == ["B"]

    def test_single_cluster_matrix_is_error(self):
        m = self.matrix(["A"], ["c1"], [[1.0]])
        with pytest.raises(ValueError, match="2 clusters"):
            top_k_degs(m, "c1", 1)

    def test_matches_brute_force_oracle(self):
        # Oracle: recompute every score from scratch and sort exhaustively.
        rng = random.Random(17)
        genes = [f"g{i:02d}" for i in range(30)]
        clusters = ["c1", "c2", "c3", "c4"]
        values = [[rng.uniform(0, 10) for _ in clusters] for _ in genes]
        m = self.matrix(genes, clusters, values)
        for target in clusters:
            t = clusters.index(target)
            scores = {}
            for gi, gene in enumerate(genes):
                rest = [values[gi][c] for c in range(len(clusters)) if c != t]
                rest_mean = sum(rest) / len(rest)
                scores[gene] = math.log2((values[gi][t] + 1) / (rest_mean + 1))
            expected = [g for g, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]
            assert top_k_degs(m, target, 30) == expected
            assert top_k_degs(m, target, 7) == expected[:7]

    def test_prefix_property(self):
        m = parse_expression_csv(read_fixture("expression.csv"))
        full = top_k_degs(m, "1571", len(m.genes))
        for k in range(len(full) + 1):
            assert top_k_degs(m, "1571", k) == full[:k]

    def test_ties_break_by_ascending_symbol(self):
        m = self.matrix(["B", "A"], ["c1", "c2"], [[2.0, 1.0], [2.0, 1.0]])
        assert top_k_degs(m, "c1", 2) == ["A", "B"]


class TestTop20Generation:
    def test_skips_clusters_without_expression_support(self, cluster_registry):
        assert MarkerType.TOP20_DEG in cluster_registry.clusters["1571"].marker_sets
        assert MarkerType.TOP20_DEG in cluster_registry.clusters["2042"].marker_sets
        assert MarkerType.TOP20_DEG not in cluster_registry.clusters["3001"].marker_sets
        assert cluster_registry.marker_set_count(MarkerType.TOP20_DEG) == 2

    def test_marker_counts_after_full_ingest(self):
        metadata = (
            "cluster_id,class_label,subclass_label,supertype_label,nt_type_label,anatomical_location\n"
            "a,c,s,t,GABA,x\nb,c,s,t,GABA,y\n"
        )
        markers = "cluster_id,cluster_combo,merfish,tf\na,G1,G2,G3\nb,G4,G5,G6\n"
        registry = ingest_atlas(metadata, markers)
        expr = parse_expression_csv("gene,a,b\nG1,5,0\nG4,0,5\n")
        corpus.generate_top20_sets(registry, expr, k=2)
        n = len(registry)
        for marker_type in (MarkerType.CLUSTER_COMBO, MarkerType.MERFISH, MarkerType.TF,
                            MarkerType.TOP20_DEG):
            assert registry.marker_set_count(marker_type) == n
        assert registry.marker_set_count() == gene_set_total(n, n)


class TestCorpusStore:
    def test_pmids_for_gene_requires_ingested_abstract(self, corpus_store):
        assert corpus_store.pmids_for_gene("Slc6a3") == (11111111, 11111112)
        assert corpus_store.pmids_for_gene("Gm1992") == ()
        assert corpus_store.pmids_for_gene("NotAGene") == ()

    def test_synonym_resolution_flows_through(self, corpus_store):
        assert corpus_store.pmids_for_gene("Dat1") == (11111111, 11111112)
