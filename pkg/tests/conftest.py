from __future__ import annotations

from pathlib import Path

import pytest

from bcaid import agents, corpus, gateways, ontology

FIXTURES = Path(__file__).parent / "fixtures"

FIXED_CLOCK = lambda: "2026-01-01T00:00:00Z"  # noqa: E731


def read_fixture(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def mini_graph() -> ontology.OntologyGraph:
    return ontology.parse_obo(read_fixture("mini.obo"))


def build_corpus_store() -> corpus.CorpusStore:
    with open(FIXTURES / "gene_info.tsv", encoding="utf-8") as fh:
        registry = corpus.parse_gene_info(fh)
    with open(FIXTURES / "gene2pubmed.tsv", encoding="utf-8") as fh:
        links = corpus.parse_gene2pubmed(fh)
    with open(FIXTURES / "abstracts.jsonl", encoding="utf-8") as fh:
        abstracts = corpus.ingest_abstracts(fh, links)
    return corpus.CorpusStore(registry, links, abstracts)


@pytest.fixture(scope="session")
def corpus_store() -> corpus.CorpusStore:
    return build_corpus_store()


def build_cluster_registry() -> corpus.ClusterRegistry:
    registry = corpus.ingest_atlas(
        read_fixture("atlas_metadata.csv"), read_fixture("atlas_markers.csv")
    )
    expression = corpus.parse_expression_csv(read_fixture("expression.csv"))
    # k=4 keeps each fixture cluster's DEG set to its own enriched genes
    corpus.generate_top20_sets(registry, expression, k=4)
    return registry


@pytest.fixture()
def cluster_registry() -> corpus.ClusterRegistry:
    return build_cluster_registry()


def build_go_index(graph: ontology.OntologyGraph) -> agents.VerbalizedGoIndex:
    embedder = gateways.HashedEmbeddingGateway()
    verbalizations = ontology.verbalize_graph(graph)
    return agents.VerbalizedGoIndex.build(verbalizations, embedder, graph)


@pytest.fixture(scope="session")
def go_index(mini_graph) -> agents.VerbalizedGoIndex:
    return build_go_index(mini_graph)


def run_pipeline(clock=FIXED_CLOCK, lm=None) -> list[agents.ClusterResult]:
    """Full mock pipeline over the three-cluster fixture."""
    graph = ontology.parse_obo(read_fixture("mini.obo"))
    store = build_corpus_store()
    registry = build_cluster_registry()
    embedder = gateways.HashedEmbeddingGateway()
    index = build_go_index(graph)
    config = agents.PipelineConfig(clock=clock)
    return list(
        agents.annotate_pipeline(
            registry, store, index, lm or gateways.CannedLmGateway(), embedder, config
        )
    )


@pytest.fixture(scope="session")
def pipeline_results() -> list[agents.ClusterResult]:
    return run_pipeline()
