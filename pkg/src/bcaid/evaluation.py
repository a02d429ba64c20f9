"""Measurement apparatus: ROUGE metrics, GO-topology hit rates, the random
Biological-Process baseline with a one-sample t-test, hypergeometric
over-representation with BH correction, and word-frequency tables.

All operations are pure; baseline trials derive per-trial seeds
(``seed + trial index``) so parallel and serial runs agree bit-for-bit.
"""

from __future__ import annotations

import math
import random
import re
import statistics
import sys
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from scipy.special import betainc

from .ontology import OntologyGraph, TermNotFoundError, is_highly_relevant

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop empties."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class RougeMode(Enum):
    N1 = "rouge1"
    N2 = "rouge2"
    L = "rougeL"


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _lcs_length(xs: Sequence[str], ys: Sequence[str]) -> int:
    if not xs or not ys:
        return 0
    dp = [0] * (len(ys) + 1)
    for x in xs:
        prev = 0
        for j, y in enumerate(ys, start=1):
            tmp = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = tmp
    return dp[len(ys)]


def rouge(candidate: str, reference: str, mode: RougeMode) -> RougeScore:
    """Clipped n-gram overlap (N1/N2) or token LCS (L), as F1 with P/R.

    Empty candidate or reference yields all zeros.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    if mode is RougeMode.L:
        lcs = _lcs_length(cand, ref)
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        return RougeScore(precision, recall, _f1(precision, recall))
    n = 1 if mode is RougeMode.N1 else 2
    cand_grams = _ngrams(cand, n)
    ref_grams = _ngrams(ref, n)
    cand_total = sum(cand_grams.values())
    ref_total = sum(ref_grams.values())
    if cand_total == 0 or ref_total == 0:
        return RougeScore(0.0, 0.0, 0.0)
    overlap = sum(min(c, ref_grams[g]) for g, c in cand_grams.items())
    precision = overlap / cand_total
    recall = overlap / ref_total
    return RougeScore(precision, recall, _f1(precision, recall))


@dataclass(frozen=True)
class TopoEvalReport:
    hits: tuple[bool, ...]
    accuracy: float
    k: int
    radius: int
    n_sets: int

    def to_dict(self) -> dict:
        return {
            "hits": list(self.hits),
            "accuracy": self.accuracy,
            "k": self.k,
            "radius": self.radius,
            "n_sets": self.n_sets,
        }


def topo_hit_rate(
    predictions: Sequence[Sequence[str]],
    truths: Sequence[str],
    graph: OntologyGraph,
    radius: int = 3,
) -> TopoEvalReport:
    """Fraction of sets where any predicted term is within ``radius`` edges
    of the ground truth."""
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must be aligned by index")
    hits: list[bool] = []
    for index, (preds, truth) in enumerate(zip(predictions, truths)):
        if truth not in graph.terms:
            raise TermNotFoundError(f"{truth} (truth of set {index})")
        hit = False
        for pred in preds:
            if pred not in graph.terms:
                raise TermNotFoundError(f"{pred} (prediction of set {index})")
            if is_highly_relevant(graph, pred, truth, radius):
                hit = True
                break
        hits.append(hit)
    n_sets = len(hits)
    accuracy = sum(hits) / n_sets if n_sets else 0.0
    k = max((len(p) for p in predictions), default=0)
    return TopoEvalReport(tuple(hits), accuracy, k, radius, n_sets)


def student_t_sf(t: float, df: int) -> float:
    """Upper-tail P(T > t) for Student's t, via the regularized incomplete
    beta function."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isnan(t):
        raise ValueError("t statistic is NaN")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = df / (df + t * t)
    tail = 0.5 * float(betainc(0.5 * df, 0.5, x))
    return tail if t >= 0 else 1.0 - tail


@dataclass(frozen=True)
class BaselineReport:
    trial_accuracies: tuple[float, ...]
    mean: float
    stdev: float
    observed: float
    t_statistic: float
    p_value: float
    seed: int
    n_random: int

    def to_dict(self) -> dict:
        return {
            "trial_accuracies": list(self.trial_accuracies),
            "mean": self.mean,
            "stdev": self.stdev,
            "observed": self.observed,
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "seed": self.seed,
            "n_random": self.n_random,
            "trials": len(self.trial_accuracies),
        }


def random_baseline(
    base_predictions: Sequence[Sequence[str]],
    truths: Sequence[str],
    graph: OntologyGraph,
    observed: float,
    n_random: int = 10,
    trials: int = 1000,
    seed: int = 0,
    radius: int = 3,
) -> BaselineReport:
    """Random-BP control: per trial each set keeps its base predictions and
    gains ``n_random`` fresh Biological-Process samples; the one-sided
    t-test asks whether ``observed`` exceeds the trial mean.

    ``observed`` is the accuracy of the full prediction sets being defended
    (measured separately with :func:`topo_hit_rate`).
    """
    if trials <= 1:
        raise ValueError("trials must be > 1 for a t-test")
    population = graph.bp_ids()
    if not population:
        raise ValueError("ontology has no non-obsolete Biological Process terms")
    if n_random > len(population):
        raise ValueError("n_random exceeds the BP population")

    accuracies: list[float] = []
    for trial in range(trials):
        rng = random.Random(seed + trial)
        trial_predictions = []
        for base in base_predictions:
            sampled = rng.sample(population, n_random)
            merged = list(base)
            merged.extend(s for s in sampled if s not in set(base))
            trial_predictions.append(merged)
        report = topo_hit_rate(trial_predictions, truths, graph, radius)
        accuracies.append(report.accuracy)

    mean = statistics.fmean(accuracies)
    stdev = statistics.stdev(accuracies)
    if stdev == 0.0:
        t = 0.0 if observed == mean else math.copysign(math.inf, observed - mean)
    else:
        t = (observed - mean) / (stdev / math.sqrt(trials))
    p = max(student_t_sf(t, trials - 1), sys.float_info.min)
    return BaselineReport(
        tuple(accuracies), mean, stdev, observed, t, p, seed, n_random
    )


def hypergeom_sf(k: int, population: int, successes: int, draws: int) -> float:
    """Exact upper tail P(X >= k) of the hypergeometric distribution."""
    if not (0 <= successes <= population and 0 <= draws <= population):
        raise ValueError("invalid hypergeometric parameters")
    if k <= 0:
        return 1.0
    upper = min(successes, draws)
    if k > upper:
        return 0.0
    total = math.comb(population, draws)
    tail = sum(
        math.comb(successes, i) * math.comb(population - successes, draws - i)
        for i in range(k, upper + 1)
    )
    return tail / total


def bh_adjust(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg adjustment, preserving input order."""
    m = len(p_values)
    if m == 0:
        return []
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 1.0
    for rank in range(m, 0, -1):
        index = order[rank - 1]
        running = min(running, p_values[index] * m / rank)
        adjusted[index] = min(running, 1.0)
    return adjusted


@dataclass(frozen=True)
class EnrichmentResult:
    term: str
    p_value: float
    adjusted_p: float
    contributing_genes: tuple[str, ...]
    background_size: int
    term_size: int

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "p_value": self.p_value,
            "adjusted_p": self.adjusted_p,
            "contributing_genes": list(self.contributing_genes),
            "background_size": self.background_size,
            "term_size": self.term_size,
        }


def ora_enrich(
    query_genes: Sequence[str],
    library: Mapping[str, Iterable[str]],
    background: Iterable[str],
) -> list[EnrichmentResult]:
    """Over-representation analysis via the hypergeometric upper tail.

    Matching is case-insensitive. Results are BH-adjusted and sorted by
    ascending p value, ties by term label.
    """
    background_norm = {g.lower() for g in background}
    if not background_norm:
        raise ValueError("background gene list is empty")
    if not library:
        raise ValueError("term library is empty")
    query_norm: dict[str, str] = {}
    for g in query_genes:
        query_norm.setdefault(g.lower(), g)
    missing = sorted(g for g in query_norm if g not in background_norm)
    if missing:
        raise ValueError(f"query genes missing from background: {', '.join(missing)}")

    population = len(background_norm)
    draws = len(query_norm)
    rows: list[tuple[str, float, tuple[str, ...], int]] = []
    for term in sorted(library):
        term_genes = {g.lower() for g in library[term]} & background_norm
        overlap = sorted(g for g in query_norm if g in term_genes)
        p = hypergeom_sf(len(overlap), population, len(term_genes), draws)
        rows.append((term, p, tuple(query_norm[g] for g in overlap), len(term_genes)))

    adjusted = bh_adjust([r[1] for r in rows])
    results = [
        EnrichmentResult(term, p, adj, contributing, population, term_size)
        for (term, p, contributing, term_size), adj in zip(rows, adjusted)
    ]
    results.sort(key=lambda r: (r.p_value, r.term))
    return results


def contributing_gene_histogram(
    per_set_results: Sequence[Sequence[EnrichmentResult]],
    thresholds: Sequence[int] = (0, 1, 2),
) -> dict[int, int]:
    """Count gene sets whose best (lowest-p) term's contributing-gene count
    exceeds each threshold."""
    counts = {t: 0 for t in thresholds}
    for results in per_set_results:
        best = len(results[0].contributing_genes) if results else 0
        for t in thresholds:
            if best > t:
                counts[t] += 1
    return counts


# Standard English stopwords (function words only; domain terms stay).
STOPWORDS = frozenset(
    """
    a about above after again against all also am an and any are aren as at
    be because been before being below between both but by can cannot could
    did do does doing down during each few for from further had has have
    having he her here hers herself him himself his how i if in into is it
    its itself just me more most my myself no nor not now of off on once
    only or other our ours ourselves out over own same she should so some
    such than that the their theirs them themselves then there these they
    this those through to too under until up very was we were what when
    where which while who whom why will with would you your yours yourself
    yourselves
    """.split()
)


def word_frequencies(
    texts: Sequence[str], extra_stopwords: Iterable[str] = ()
) -> list[tuple[str, int]]:
    """Ranked (token, count) list over the corpus, stopwords removed.

    Tokens shorter than three characters are dropped; ranking is by
    descending count, then ascending token.
    """
    stop = STOPWORDS | {w.lower() for w in extra_stopwords}
    counts: Counter = Counter()
    for text in texts:
        for token in tokenize(text):
            if len(token) >= 3 and token not in stop:
                counts[token] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
