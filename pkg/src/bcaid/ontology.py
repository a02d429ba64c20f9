"""Gene Ontology graph: OBO parsing, distance queries, verbalization, BP sampling.

The graph is built from ``is_a`` and (optionally) ``part_of`` relations and is
immutable after construction, so it can be shared freely across threads.
Distances are undirected hop counts over those edges.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

logger = logging.getLogger(__name__)

GO_ID_PATTERN = re.compile(r"^GO:[0-9]{7}$")
_GO_ACCESSION = re.compile(r"\(?\bGO:[0-9]{7}\b\)?")


class Namespace(Enum):
    BIOLOGICAL_PROCESS = "biological_process"
    MOLECULAR_FUNCTION = "molecular_function"
    CELLULAR_COMPONENT = "cellular_component"


class Relation(Enum):
    IS_A = "is_a"
    PART_OF = "part_of"


class VerbalizationSource(Enum):
    LM_GENERATED = "lm_generated"
    TEMPLATE = "template"


class OboParseError(ValueError):
    """Malformed OBO content; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TermNotFoundError(KeyError):
    def __init__(self, term_id: str):
        self.term_id = term_id
        super().__init__(f"unknown GO term: {term_id}")


class SampleCapacityError(ValueError):
    """Asked for more BP terms than the graph holds."""


@dataclass(frozen=True)
class GoTerm:
    id: str
    name: str
    namespace: Namespace
    definition: str = ""
    parents: tuple[tuple[str, Relation], ...] = ()
    obsolete: bool = False


@dataclass(frozen=True)
class VerbalizedTerm:
    term_id: str
    narration: str
    source: VerbalizationSource


class OntologyGraph:
    """Immutable term map plus undirected adjacency over parent relations."""

    def __init__(
        self,
        terms: Mapping[str, GoTerm],
        adjacency: Mapping[str, frozenset[str]],
        warnings: tuple[str, ...] = (),
    ):
        self.terms: dict[str, GoTerm] = dict(terms)
        self.adjacency: dict[str, frozenset[str]] = dict(adjacency)
        self.warnings = warnings
        self._by_namespace: dict[Namespace, tuple[str, ...]] = {}
        for ns in Namespace:
            self._by_namespace[ns] = tuple(
                sorted(t.id for t in self.terms.values() if t.namespace is ns)
            )

    def __contains__(self, term_id: str) -> bool:
        return term_id in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def namespace_ids(self, namespace: Namespace, include_obsolete: bool = False) -> tuple[str, ...]:
        ids = self._by_namespace[namespace]
        if include_obsolete:
            return ids
        return tuple(i for i in ids if not self.terms[i].obsolete)

    def bp_ids(self) -> tuple[str, ...]:
        """Non-obsolete Biological Process accessions, sorted."""
        return self.namespace_ids(Namespace.BIOLOGICAL_PROCESS)

    def degree(self, term_id: str) -> int:
        return len(self.adjacency.get(term_id, frozenset()))

    def edge_count(self) -> int:
        return sum(len(n) for n in self.adjacency.values()) // 2


_NS_ALIASES = {ns.value: ns for ns in Namespace}


def parse_obo(text: str, include_part_of: bool = True) -> OntologyGraph:
    """Parse OBO 1.2 flat-file content into an :class:`OntologyGraph`.

    Obsolete terms are kept in the term map but contribute no edges.
    Edges whose target is not defined in the file are dropped with a
    recorded warning. ``include_part_of=False`` restricts the graph to
    ``is_a`` edges only.
    """
    terms: dict[str, GoTerm] = {}
    warnings: list[str] = []

    stanza: dict[str, object] | None = None
    stanza_line = 0

    def close_stanza() -> None:
        if stanza is None:
            return
        term_id = stanza.get("id")
        if not term_id:
            raise OboParseError("[Term] stanza missing id", stanza_line)
        if not GO_ID_PATTERN.match(str(term_id)):
            raise OboParseError(f"malformed term id {term_id!r}", stanza_line)
        obsolete = bool(stanza.get("obsolete"))
        parents: tuple[tuple[str, Relation], ...] = ()
        if not obsolete:
            parents = tuple(stanza.get("parents", ()))  # type: ignore[arg-type]
        term = GoTerm(
            id=str(term_id),
            name=str(stanza.get("name", "")),
            namespace=stanza.get("namespace", Namespace.BIOLOGICAL_PROCESS),  # type: ignore[arg-type]
            definition=str(stanza.get("definition", "")),
            parents=parents,
            obsolete=obsolete,
        )
        if term.id in terms:
            raise OboParseError(f"duplicate term id {term.id}", stanza_line)
        terms[term.id] = term

    lines = text.splitlines()
    in_term = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line.startswith("["):
            close_stanza()
            stanza = None
            in_term = line == "[Term]"
            if in_term:
                stanza = {"parents": []}
                stanza_line = lineno
            continue
        if not in_term or not line or line.startswith("!"):
            continue
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.split("!", 1)[0].strip()
        assert stanza is not None
        if key == "id":
            stanza["id"] = value
        elif key == "name":
            stanza["name"] = value
        elif key == "namespace":
            ns = _NS_ALIASES.get(value)
            if ns is None:
                raise OboParseError(f"unknown namespace {value!r}", lineno)
            stanza["namespace"] = ns
        elif key == "def":
            m = re.match(r'"(.*)"', value)
            stanza["definition"] = m.group(1) if m else value
        elif key == "is_a":
            stanza["parents"].append((value, Relation.IS_A))  # type: ignore[union-attr]
        elif key == "relationship":
            rel, _, target = value.partition(" ")
            if rel == "part_of" and include_part_of:
                stanza["parents"].append((target.strip(), Relation.PART_OF))  # type: ignore[union-attr]
        elif key == "is_obsolete":
            stanza["obsolete"] = value == "true"
    close_stanza()

    adjacency: dict[str, set[str]] = {term_id: set() for term_id in terms}
    directed: dict[str, list[str]] = {term_id: [] for term_id in terms}
    for term in terms.values():
        if term.obsolete:
            continue
        for target, _relation in term.parents:
            if target == term.id:
                warnings.append(f"self-referential edge on {term.id} dropped")
                continue
            if target not in terms:
                warnings.append(f"dangling edge {term.id} -> {target} dropped")
                continue
            if terms[target].obsolete:
                warnings.append(f"edge {term.id} -> obsolete {target} dropped")
                continue
            adjacency[term.id].add(target)
            adjacency[target].add(term.id)
            directed[term.id].append(target)

    _check_acyclic(directed)
    frozen = {k: frozenset(v) for k, v in adjacency.items()}
    return OntologyGraph(terms, frozen, tuple(warnings))


def _check_acyclic(directed: Mapping[str, list[str]]) -> None:
    indegree = {node: 0 for node in directed}
    for node in directed:
        for target in directed[node]:
            indegree[target] += 1
    queue = [n for n, d in indegree.items() if d == 0]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for target in directed[node]:
            indegree[target] -= 1
            if indegree[target] == 0:
                queue.append(target)
    if seen != len(directed):
        raise OboParseError("parent relation contains a cycle")


def term_distance(
    graph: OntologyGraph, a: str, b: str, max_hops: int
) -> int | None:
    """Shortest undirected hop count between two terms, capped at ``max_hops``.

    Returns ``None`` when the terms are farther apart than the cap (or
    disconnected). Implemented as a bidirectional breadth-first search so
    only the small neighbourhood within the cap is ever visited.
    """
    for term_id in (a, b):
        if term_id not in graph.terms:
            raise TermNotFoundError(term_id)
    if max_hops < 0:
        raise ValueError("max_hops must be >= 0")
    if a == b:
        return 0
    if max_hops == 0:
        return None

    adj = graph.adjacency
    dist_a: dict[str, int] = {a: 0}
    dist_b: dict[str, int] = {b: 0}
    frontier_a, frontier_b = [a], [b]
    depth_a = depth_b = 0
    best: int | None = None

    while frontier_a and frontier_b and depth_a + depth_b < max_hops:
        if len(frontier_a) <= len(frontier_b):
            frontier_a, meet = _expand_level(adj, frontier_a, dist_a, dist_b, depth_a)
            depth_a += 1
        else:
            frontier_b, meet = _expand_level(adj, frontier_b, dist_b, dist_a, depth_b)
            depth_b += 1
        if meet is not None and (best is None or meet < best):
            best = meet
        if best is not None and best <= depth_a + depth_b:
            break

    if best is not None and best <= max_hops:
        return best
    return None


def _expand_level(
    adj: Mapping[str, frozenset[str]],
    frontier: list[str],
    dist_this: dict[str, int],
    dist_other: dict[str, int],
    depth: int,
) -> tuple[list[str], int | None]:
    nxt: list[str] = []
    meet: int | None = None
    for node in frontier:
        for neighbor in adj.get(node, frozenset()):
            if neighbor in dist_this:
                continue
            dist_this[neighbor] = depth + 1
            if neighbor in dist_other:
                total = depth + 1 + dist_other[neighbor]
                if meet is None or total < meet:
                    meet = total
            nxt.append(neighbor)
    return nxt, meet


HIGHLY_RELEVANT_RADIUS = 3


def is_highly_relevant(
    graph: OntologyGraph, predicted: str, truth: str, radius: int = HIGHLY_RELEVANT_RADIUS
) -> bool:
    """True when the predicted term sits within ``radius`` edges of the truth."""
    return term_distance(graph, predicted, truth, radius) is not None


def sample_bp_terms(graph: OntologyGraph, n: int, seed: int) -> list[str]:
    """Uniformly sample ``n`` distinct non-obsolete Biological Process terms."""
    population = graph.bp_ids()
    if n > len(population):
        raise SampleCapacityError(
            f"requested {n} BP terms but only {len(population)} available"
        )
    rng = random.Random(seed)
    return rng.sample(population, n)


VERBALIZATION_TEMPLATE = "Genes in this set are involved in {name}: {definition}"


def _scrub_accessions(text: str) -> str:
    cleaned = _GO_ACCESSION.sub("", text)
    return re.sub(r"\s{2,}", " ", cleaned).strip()


def verbalize_term(term: GoTerm, gateway=None) -> VerbalizedTerm:
    """Turn a GO term into a one/two-sentence natural-language narration.

    With a language-model gateway the narration comes from the model; without
    one (or when the gateway keeps failing) a deterministic template is used.
    Narrations never contain raw GO accessions.
    """
    if term.obsolete:
        raise ValueError(f"cannot verbalize obsolete term {term.id}")
    if gateway is not None:
        from . import prompts  # local import: prompts pulls in nothing heavy

        messages = prompts.render("verbalize", name=term.name, definition=term.definition)
        try:
            exchange = gateway.complete(messages)
            narration = _scrub_accessions(exchange.response)
            if narration:
                return VerbalizedTerm(term.id, narration, VerbalizationSource.LM_GENERATED)
            logger.warning("empty verbalization for %s; falling back to template", term.id)
        except Exception as exc:  # gateway exhausted its retries
            logger.warning("verbalization gateway failed for %s (%s); using template", term.id, exc)
    narration = _scrub_accessions(
        VERBALIZATION_TEMPLATE.format(name=term.name, definition=term.definition)
    )
    return VerbalizedTerm(term.id, narration, VerbalizationSource.TEMPLATE)


def verbalize_graph(
    graph: OntologyGraph,
    gateway=None,
    namespace: Namespace | None = None,
) -> dict[str, VerbalizedTerm]:
    """Verbalize every non-obsolete term (optionally one namespace)."""
    out: dict[str, VerbalizedTerm] = {}
    for term_id in sorted(graph.terms):
        term = graph.terms[term_id]
        if term.obsolete:
            continue
        if namespace is not None and term.namespace is not namespace:
            continue
        out[term_id] = verbalize_term(term, gateway)
    return out


def write_verbalizations(verbalizations: Mapping[str, VerbalizedTerm], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for term_id in sorted(verbalizations):
            v = verbalizations[term_id]
            fh.write(
                json.dumps(
                    {"term_id": v.term_id, "narration": v.narration, "source": v.source.value},
                    sort_keys=True,
                )
                + "\n"
            )


def read_verbalizations(path) -> dict[str, VerbalizedTerm]:
    out: dict[str, VerbalizedTerm] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[obj["term_id"]] = VerbalizedTerm(
                obj["term_id"], obj["narration"], VerbalizationSource(obj["source"])
            )
    return out
