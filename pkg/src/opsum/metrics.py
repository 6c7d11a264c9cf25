"""ROUGE-family metrics and the best-matching-review baseline.

All metrics operate on pre-tokenized sequences and return precision/recall/F1
triples. Nothing here stems, lowercases, or filters stopwords — callers pass
tokens exactly as the tokenizer produced them.

The skip-bigram variant (``su4``) pools unigrams together with ordered token
pairs that have at most four intervening tokens (so adjacent tokens have gap
zero, and plain bigrams are the gap<=0 special case). The IDF-weighted score
counts review tokens with multiplicity against the *set* of summary tokens;
the multiset reading of the weighted overlap is deliberate and documented
because the score is only ever used to rank reviews, never reported.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from .corpus import IdfTable
from .errors import ConfigError, DataError

VARIANTS = ("rouge-1", "rouge-2", "rouge-l", "rouge-su4")
REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MetricScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "MetricScore":
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        return cls(precision, recall, f1)

    @classmethod
    def zero(cls) -> "MetricScore":
        return cls(0.0, 0.0, 0.0)


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _skip_units(tokens, max_gap: int) -> Counter:
    """Unigrams pooled with ordered pairs at most `max_gap` tokens apart."""
    units = Counter((t,) for t in tokens)
    for i in range(len(tokens)):
        for j in range(i + 1, min(i + 2 + max_gap, len(tokens))):
            units[(tokens[i], tokens[j])] += 1
    return units


def _clipped_overlap_score(cand_units: Counter, ref_units: Counter) -> MetricScore:
    cand_total = sum(cand_units.values())
    ref_total = sum(ref_units.values())
    if cand_total == 0 or ref_total == 0:
        return MetricScore.zero()
    overlap = sum((cand_units & ref_units).values())
    return MetricScore.from_pr(overlap / cand_total, overlap / ref_total)


def _lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(candidate, reference, variant: str) -> MetricScore:
    """Score `candidate` against `reference` under one ROUGE variant.

    variant is one of "1", "2", "l", "su4" (a "rouge-" prefix is accepted).
    Empty sequences never raise; any side without scorable units yields zeros.
    """
    key = str(variant).lower().removeprefix("rouge-").removeprefix("rouge")
    candidate = list(candidate)
    reference = list(reference)
    if key in ("1", "2"):
        n = int(key)
        return _clipped_overlap_score(_ngrams(candidate, n), _ngrams(reference, n))
    if key == "l":
        if not candidate or not reference:
            return MetricScore.zero()
        lcs = _lcs_length(candidate, reference)
        return MetricScore.from_pr(lcs / len(candidate), lcs / len(reference))
    if key == "su4":
        return _clipped_overlap_score(_skip_units(candidate, 4), _skip_units(reference, 4))
    raise ConfigError(f"unknown rouge variant {variant!r}")


def idf_weighted_rouge1_f1(review, summary, idf: IdfTable) -> float:
    """Rank score: IDF mass of review tokens that also appear in the summary.

    overlap = sum over review tokens (with multiplicity) of idf(w) when w is
    in the summary's token set; P = overlap/|review|, R = overlap/|summary|.
    The asymmetry (weighted numerator over raw lengths) is intentional — the
    value only orders candidate reviews, it is never reported as a metric.
    """
    review = list(review)
    summary = list(summary)
    if not review or not summary:
        return 0.0
    summary_types = set(summary)
    overlap = sum(idf.lookup(w) for w in review if w in summary_types)
    p = overlap / len(review)
    r = overlap / len(summary)
    return MetricScore.from_pr(p, r).f1


def oracle(reviews, gold) -> int:
    """Index of the review whose mean ROUGE-1/2/L F1 against `gold` is highest.

    Ties break toward the lowest index.
    """
    reviews = list(reviews)
    if not reviews:
        raise DataError("oracle needs at least one review")
    best_idx, best = 0, -1.0
    for i, review in enumerate(reviews):
        mean_f1 = (
            rouge(review, gold, "1").f1 + rouge(review, gold, "2").f1 + rouge(review, gold, "l").f1
        ) / 3.0
        if mean_f1 > best:
            best_idx, best = i, mean_f1
    return best_idx


@dataclass
class MetricReport:
    """Per-instance scores plus their arithmetic mean, for each variant."""

    per_instance: list[dict[str, MetricScore]]
    average: dict[str, MetricScore]

    def to_json(self) -> str:
        def enc(s: MetricScore):
            return {"precision": s.precision, "recall": s.recall, "f1": s.f1}

        payload = {
            "version": REPORT_SCHEMA_VERSION,
            "n_instances": len(self.per_instance),
            "average": {v: enc(s) for v, s in self.average.items()},
            "per_instance": [{v: enc(s) for v, s in inst.items()} for inst in self.per_instance],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        lines = [f"{'metric':<12}{'precision':>10}{'recall':>10}{'f1':>10}"]
        for v in VARIANTS:
            if v not in self.average:
                continue
            s = self.average[v]
            lines.append(f"{v:<12}{s.precision:>10.4f}{s.recall:>10.4f}{s.f1:>10.4f}")
        return "\n".join(lines) + "\n"


def score_corpus(candidates, references, variants=VARIANTS) -> MetricReport:
    """Score aligned candidate/reference lists and average the results."""
    candidates = list(candidates)
    references = list(references)
    if len(candidates) != len(references):
        raise DataError(
            f"candidate/reference count mismatch: {len(candidates)} vs {len(references)}"
        )
    if not candidates:
        raise DataError("nothing to score")
    per_instance = [
        {v: rouge(c, r, v) for v in variants} for c, r in zip(candidates, references)
    ]
    n = len(per_instance)
    average = {}
    for v in variants:
        average[v] = MetricScore(
            sum(inst[v].precision for inst in per_instance) / n,
            sum(inst[v].recall for inst in per_instance) / n,
            sum(inst[v].f1 for inst in per_instance) / n,
        )
    return MetricReport(per_instance, average)
