"""Synthetic training pairs: candidate filtering, segment and document noise.

A pair starts from a corpus review that reads like a summary (the filter
enforces that).  Its segment-noisy versions corrupt the text itself —
replace tokens using the bidirectional LM, drop chunks, and rebuild the
remainder against a randomly drawn template review's chunk-label
sequence.  Its document-noisy versions are genuine sibling reviews of
the same product, ranked by IDF-weighted unigram-overlap F1 against the
candidate.  Every pair records the candidate id and an rng seed so it
can be regenerated bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .chunking import ChunkInventory, Chunker, default_chunker
from .corpus import N_RESERVED, Corpus, IdfTable, Review
from .errors import ConfigError, DataError, NumericError
from .langmodel import BiLM, nucleus_sample
from .metrics import idf_weighted_rouge1_f1
from .topics import LdaModel

DATASET_SCHEMA_VERSION = 1
FIRST_PERSON = frozenset({"i", "me", "my", "mine", "myself"})
LDA_INFER_ITERATIONS = 25
_SEED_BOUND = 2 ** 63


@dataclass
class SummaryFilter:
    """Constraints a review must satisfy to act as a candidate summary."""

    max_nonalnum_exclusive: int = 3
    forbid_first_person: bool = True
    min_tokens: int = 20
    max_tokens: int = 30

    def validate(self) -> "SummaryFilter":
        if self.min_tokens > self.max_tokens:
            raise ConfigError("min_tokens must not exceed max_tokens")
        if self.min_tokens < 1 or self.max_nonalnum_exclusive < 0:
            raise ConfigError("filter bounds must be nonnegative (min_tokens >= 1)")
        return self

    def rejection_reasons(self, review: Review) -> list[str]:
        reasons = []
        symbols = sum(1 for ch in review.text if not ch.isalnum() and not ch.isspace())
        if symbols >= self.max_nonalnum_exclusive:
            reasons.append("nonalnum")
        if self.forbid_first_person and FIRST_PERSON.intersection(review.tokens):
            reasons.append("first_person")
        if not self.min_tokens <= len(review.tokens) <= self.max_tokens:
            reasons.append("length")
        return reasons

    def admits(self, review: Review) -> bool:
        return not self.rejection_reasons(review)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SummaryFilter":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown summary filter keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class NoiseConfig:
    p_replace_token: float = 0.8
    p_remove_chunk: float = 0.4
    p_nucleus: float = 0.9
    review_count_mean: float = 8.0
    review_count_std: float = 2.0

    def validate(self) -> "NoiseConfig":
        for name in ("p_replace_token", "p_remove_chunk"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.p_nucleus <= 1.0:
            raise ConfigError("p_nucleus must lie in (0, 1]")
        if self.review_count_std < 0:
            raise ConfigError("review_count_std must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown noise config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class SyntheticPair:
    summary: list[str]
    segment_noisy: list[list[str]]
    document_noisy: list[list[str]]
    candidate_id: str
    seed: int
    p_z: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.segment_noisy)
        if n < 1 or len(self.document_noisy) != n:
            raise DataError(
                f"pair needs equally many noisy versions on both sides, "
                f"got {n} segment vs {len(self.document_noisy)} document"
            )

    @property
    def review_count(self) -> int:
        return len(self.segment_noisy)

    def to_json_dict(self) -> dict:
        return {
            "version": DATASET_SCHEMA_VERSION,
            "summary": list(self.summary),
            "segment_noisy": [list(t) for t in self.segment_noisy],
            "document_noisy": [list(t) for t in self.document_noisy],
            "candidate_id": self.candidate_id,
            "seed": self.seed,
            "p_z": None if self.p_z is None else [float(x) for x in self.p_z],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SyntheticPair":
        if d.get("version") != DATASET_SCHEMA_VERSION:
            raise DataError(f"unsupported pair schema version {d.get('version')!r}")
        missing = {"summary", "segment_noisy", "document_noisy",
                   "candidate_id", "seed"} - set(d)
        if missing:
            raise DataError(f"pair record missing fields: {sorted(missing)}")
        p_z = d.get("p_z")
        return cls(
            summary=list(d["summary"]),
            segment_noisy=[list(t) for t in d["segment_noisy"]],
            document_noisy=[list(t) for t in d["document_noisy"]],
            candidate_id=d["candidate_id"],
            seed=int(d["seed"]),
            p_z=None if p_z is None else np.asarray(p_z, dtype=np.float64),
        )


def save_dataset(path, pairs: Sequence[SyntheticPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            f.write(json.dumps(pair.to_json_dict()) + "\n")


def load_dataset(path) -> list[SyntheticPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            pairs.append(SyntheticPair.from_json_dict(record))
    return pairs


# -- candidate sampling ---------------------------------------------------------


def _filter_failure(corpus: Corpus, filt: SummaryFilter) -> DataError:
    counts: dict[str, int] = {"nonalnum": 0, "first_person": 0, "length": 0}
    for r in corpus.reviews:
        for reason in filt.rejection_reasons(r):
            counts[reason] += 1
    total = max(1, len(corpus))
    rates = ", ".join(f"{k}={v}/{total}" for k, v in counts.items())
    return DataError(f"no review passes the summary filter (rejections: {rates})")


def sample_candidate_summary(corpus: Corpus, filt: SummaryFilter, rng) -> Review:
    """Uniform draw from the reviews admitted by the filter."""
    passing = [r for r in corpus.reviews if filt.admits(r)]
    if not passing:
        raise _filter_failure(corpus, filt)
    return passing[int(rng.integers(len(passing)))]


# -- segment noise ----------------------------------------------------------------


def token_alter(y: Sequence[str], bilm: BiLM, p_replace: float, p_nucleus: float,
                rng, stats: dict | None = None) -> list[str]:
    """Independently replace each token with a nucleus sample from the BiLM.

    All position distributions are conditioned on the *original* y, so
    positions can be processed in any order with identical results.  The
    replace decision is drawn before the (expensive) distribution is
    computed; either way each position consumes rng draws in a fixed
    pattern, keeping regeneration deterministic.
    """
    y = list(y)
    if not y:
        raise DataError("cannot token-alter an empty summary")
    out = []
    for position, token in enumerate(y):
        if rng.random() >= p_replace:
            out.append(token)
            continue
        dist = bilm.predict_distribution(y, position).copy()
        dist[:N_RESERVED] = 0.0   # never inject padding/sentinel tokens
        total = dist.sum()
        if total <= 0:
            raise NumericError("BiLM put all mass on reserved tokens")
        wid = nucleus_sample(dist / total, p_nucleus, rng)
        out.append(bilm.vocab.token(wid))
        if stats is not None:
            stats["replaced"] = stats.get("replaced", 0) + 1
    return out


def chunk_alter(y: Sequence[str], inventory: ChunkInventory, template_review,
                p_remove: float, rng, chunker: Chunker | None = None,
                stats: dict | None = None) -> list[str]:
    """Drop chunks of y, then rebuild along the template's chunk-label sequence.

    Each template slot is filled by a without-replacement draw from y's
    surviving chunks of the same label when possible, otherwise by a
    uniform draw from the corpus-wide inventory.  Slots whose label exists
    nowhere are skipped (counted into `stats["skipped_slots"]`).
    """
    chunker = chunker or default_chunker()
    template_tokens = getattr(template_review, "tokens", template_review)
    survivors: dict[str, list] = {}
    for piece in chunker.chunk(list(y)):
        if rng.random() >= p_remove:
            survivors.setdefault(piece.label, []).append(piece)
    out: list[str] = []
    for slot in chunker.chunk(list(template_tokens)):
        bucket = survivors.get(slot.label)
        if bucket:
            piece = bucket.pop(int(rng.integers(len(bucket))))
        elif slot.label in inventory.labels():
            piece = inventory.sample(slot.label, rng)
        else:
            if stats is not None:
                stats["skipped_slots"] = stats.get("skipped_slots", 0) + 1
            continue
        if stats is not None:
            stats["slots"] = stats.get("slots", 0) + 1
            stats.setdefault("filled_labels", []).append(slot.label)
        out.extend(piece.tokens)
    return out


@dataclass
class NoiseDeps:
    """Everything pair generation needs besides the candidate itself."""

    corpus: Corpus
    bilm: BiLM
    inventory: ChunkInventory
    idf: IdfTable
    lda: LdaModel | None = None
    chunker: Chunker | None = None
    lda_iterations: int = LDA_INFER_ITERATIONS


def segment_noise(y: Sequence[str], n: int, deps: NoiseDeps, config: NoiseConfig,
                  rng, stats: dict | None = None) -> list[list[str]]:
    """N independent corrupted rewrites of y, each on its own rng sub-stream."""
    if n < 1:
        raise ConfigError("review count must be >= 1")
    reviews = deps.corpus.reviews
    if not reviews:
        raise DataError("empty corpus: cannot draw template reviews")
    out = []
    for _ in range(n):
        child = np.random.default_rng(int(rng.integers(_SEED_BOUND)))
        altered = token_alter(y, deps.bilm, config.p_replace_token,
                              config.p_nucleus, child, stats)
        template = reviews[int(child.integers(len(reviews)))]
        rebuilt = chunk_alter(altered, deps.inventory, template,
                              config.p_remove_chunk, child,
                              chunker=deps.chunker, stats=stats)
        # a template whose every slot was skipped yields nothing; keep the
        # token-altered text rather than emit an empty pseudo-review
        out.append(rebuilt if rebuilt else altered)
    return out


# -- document noise ----------------------------------------------------------------


def document_noise(y: Review, corpus: Corpus, n: int, idf: IdfTable) -> list[Review]:
    """The n same-product reviews most similar to y, best first.

    y itself is excluded from the pool (it is the target; leaking it
    verbatim would make the pair trivial).  Short pools pad by cycling
    through the selected reviews.
    """
    if n < 1:
        raise ConfigError("review count must be >= 1")
    pool = [r for r in corpus.by_product.get(y.product_id, ())
            if r.review_id != y.review_id]
    if not pool:
        raise DataError(
            f"review {y.review_id!r} has no same-product partners for document noise"
        )
    ranked = sorted(
        pool,
        key=lambda r: (-idf_weighted_rouge1_f1(r.tokens, y.tokens, idf), r.review_id),
    )
    selected = ranked[:n]
    return [selected[i % len(selected)] for i in range(n)]


def sample_review_count(config: NoiseConfig, rng) -> int:
    draw = rng.normal(config.review_count_mean, config.review_count_std)
    return max(1, int(np.rint(draw)))


# -- dataset assembly ----------------------------------------------------------------


def generate_pair(candidate: Review, deps: NoiseDeps, config: NoiseConfig,
                  seed: int) -> SyntheticPair:
    """Regenerate the full pair for a candidate from its recorded seed."""
    rng = np.random.default_rng(seed)
    n = sample_review_count(config, rng)
    segment = segment_noise(candidate.tokens, n, deps, config, rng)
    document = [r.tokens for r in document_noise(candidate, deps.corpus, n, deps.idf)]
    p_z = None
    if deps.lda is not None:
        p_z = deps.lda.infer(candidate.tokens, deps.lda_iterations, rng)
    return SyntheticPair(
        summary=list(candidate.tokens),
        segment_noisy=segment,
        document_noisy=[list(t) for t in document],
        candidate_id=candidate.review_id,
        seed=seed,
        p_z=p_z,
    )


def build_synthetic_dataset(corpus: Corpus, deps: NoiseDeps, config: NoiseConfig,
                            filt: SummaryFilter, count: int, master_seed: int = 0,
                            max_retries: int = 100) -> list[SyntheticPair]:
    """Draw `count` pairs; candidates without same-product partners are re-drawn.

    Candidate choices and per-pair seeds both come sequentially off the
    master stream, so a rerun with the same master seed rebuilds the
    identical dataset.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    config.validate()
    filt.validate()
    passing = [r for r in corpus.reviews if filt.admits(r)]
    if not passing:
        raise _filter_failure(corpus, filt)
    master = np.random.default_rng(master_seed)
    pairs = []
    for index in range(count):
        for _attempt in range(max_retries):
            candidate = passing[int(master.integers(len(passing)))]
            seed = int(master.integers(_SEED_BOUND))
            try:
                pairs.append(generate_pair(candidate, deps, config, seed))
                break
            except DataError:
                continue
        else:
            raise DataError(
                f"could not generate pair {index}: {max_retries} candidates in a row "
                f"lack same-product partners (filtered pool {len(passing)} reviews)"
            )
    return pairs
