"""Bidirectional interpolated n-gram language model and nucleus sampling.

The model gives a full-vocabulary distribution for any position in a token
sequence: a forward n-gram model scores the token given its left context, a
backward model (the same construction trained on reversed sequences) scores
it given its right context, and the two are multiplied and renormalized.
Add-k smoothing plus interpolation across orders keeps every conditional
strictly positive, so the product never collapses to zero.

Binary file layout (all integers little-endian):

    magic   4 bytes     b"OPLM"
    u32     format version (currently 1)
    u32     order
    f64     add_k
    u32     vocab_size
    32 B    sha256 of the vocabulary id->token table
    f64[order]          interpolation weights, low order first
    two directional blocks (forward, then backward), each:
        u64[vocab_size] unigram counts
        per order n = 2..order:
            u64 number of contexts
            per context, sorted by context ids:
                u32[n-1] context ids
                u32      number of continuations
                per continuation, sorted by id: u32 id, u64 count
"""

from __future__ import annotations

import struct
from collections import Counter

import numpy as np

from .corpus import BOS_ID, EOS_ID, Vocabulary
from .errors import ConfigError, DataError, NumericError

LM_MAGIC = b"OPLM"
LM_FORMAT_VERSION = 1
DEFAULT_ORDER = 3
DEFAULT_ADD_K = 0.1
DEFAULT_NUCLEUS_P = 0.9


class _DirectionalNgram:
    """One direction of the model: interpolated add-k n-gram over token ids."""

    def __init__(self, order: int, vocab_size: int, add_k: float, weights: np.ndarray):
        self.order = order
        self.vocab_size = vocab_size
        self.add_k = add_k
        self.weights = weights
        self.unigram = np.zeros(vocab_size, dtype=np.uint64)
        # tables[n-2]: context tuple of n-1 ids -> Counter of continuation ids
        self.tables: list[dict[tuple[int, ...], Counter]] = [dict() for _ in range(order - 1)]

    def observe(self, ids: list[int]) -> None:
        padded = [BOS_ID] * (self.order - 1) + ids + [EOS_ID]
        for t in range(self.order - 1, len(padded)):
            target = padded[t]
            self.unigram[target] += 1
            for n in range(2, self.order + 1):
                ctx = tuple(padded[t - n + 1 : t])
                table = self.tables[n - 2]
                bucket = table.get(ctx)
                if bucket is None:
                    bucket = table[ctx] = Counter()
                bucket[target] += 1

    def distribution(self, context: list[int]) -> np.ndarray:
        """Interpolated p(w | context) over the whole vocabulary, float64."""
        k, v = self.add_k, self.vocab_size
        total = float(self.unigram.sum())
        out = self.weights[0] * (self.unigram.astype(np.float64) + k) / (total + k * v)
        for n in range(2, self.order + 1):
            ctx = tuple(context[len(context) - (n - 1) :])
            bucket = self.tables[n - 2].get(ctx)
            ctx_total = float(sum(bucket.values())) if bucket else 0.0
            denom = ctx_total + k * v
            layer = np.full(v, k / denom, dtype=np.float64)
            if bucket:
                for wid, cnt in bucket.items():
                    layer[wid] += cnt / denom
            out += self.weights[n - 1] * layer
        return out


class BiLM:
    """Forward + backward interpolated n-gram models over one vocabulary."""

    def __init__(self, vocab: Vocabulary, order: int, add_k: float, weights: np.ndarray):
        self.vocab = vocab
        self.order = order
        self.add_k = add_k
        self.weights = weights
        self.forward = _DirectionalNgram(order, len(vocab), add_k, weights)
        self.backward = _DirectionalNgram(order, len(vocab), add_k, weights)

    # -- training ---------------------------------------------------------

    @classmethod
    def train(cls, corpus, vocab: Vocabulary, order: int = DEFAULT_ORDER,
              add_k: float = DEFAULT_ADD_K, weights=None) -> "BiLM":
        if order < 1:
            raise ConfigError(f"order must be >= 1, got {order}")
        if add_k <= 0:
            raise ConfigError(f"add_k must be positive, got {add_k}")
        if weights is None:
            w = np.full(order, 1.0 / order, dtype=np.float64)
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (order,) or (w <= 0).any():
                raise ConfigError("weights must be positive, one per order")
            w = w / w.sum()
        lm = cls(vocab, order, add_k, w)
        for review in corpus.reviews:
            ids = vocab.encode(review.tokens)
            lm.forward.observe(ids)
            lm.backward.observe(ids[::-1])
        return lm

    # -- querying ---------------------------------------------------------

    def _fwd_context(self, ids: list[int], position: int) -> list[int]:
        left = ids[max(0, position - (self.order - 1)) : position]
        return [BOS_ID] * (self.order - 1 - len(left)) + left

    def _bwd_context(self, ids: list[int], position: int) -> list[int]:
        right = ids[position + 1 : position + self.order]
        ctx = list(reversed(right))
        return [BOS_ID] * (self.order - 1 - len(ctx)) + ctx

    def predict_distribution(self, tokens, position: int) -> np.ndarray:
        """p(w) ∝ p_fwd(w | left) · p_bwd(w | right), over the full vocabulary."""
        tokens = list(tokens)
        if not 0 <= position < len(tokens):
            raise ConfigError(f"position {position} out of range for {len(tokens)} tokens")
        ids = self.vocab.encode(tokens)
        p = self.forward.distribution(self._fwd_context(ids, position))
        p *= self.backward.distribution(self._bwd_context(ids, position))
        total = p.sum()
        if not np.isfinite(total) or total <= 0:
            raise NumericError("degenerate position distribution")
        return p / total

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(LM_MAGIC)
            f.write(struct.pack("<II", LM_FORMAT_VERSION, self.order))
            f.write(struct.pack("<d", self.add_k))
            f.write(struct.pack("<I", len(self.vocab)))
            f.write(self.vocab.content_hash())
            f.write(self.weights.astype("<f8").tobytes())
            for direction in (self.forward, self.backward):
                f.write(direction.unigram.astype("<u8").tobytes())
                for table in direction.tables:
                    f.write(struct.pack("<Q", len(table)))
                    for ctx in sorted(table):
                        bucket = table[ctx]
                        f.write(struct.pack(f"<{len(ctx)}I", *ctx))
                        f.write(struct.pack("<I", len(bucket)))
                        for wid in sorted(bucket):
                            f.write(struct.pack("<IQ", wid, bucket[wid]))

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "BiLM":
        with open(path, "rb") as f:
            blob = f.read()
        off = 0

        def take(fmt):
            nonlocal off
            size = struct.calcsize(fmt)
            vals = struct.unpack_from(fmt, blob, off)
            off += size
            return vals

        if blob[:4] != LM_MAGIC:
            raise DataError("not a language model file")
        off = 4
        version, order = take("<II")
        if version != LM_FORMAT_VERSION:
            raise DataError(f"unsupported language model format version {version}")
        (add_k,) = take("<d")
        (vocab_size,) = take("<I")
        stored_hash = blob[off : off + 32]
        off += 32
        if vocab_size != len(vocab) or stored_hash != vocab.content_hash():
            raise DataError("language model was trained with a different vocabulary")
        weights = np.frombuffer(blob, dtype="<f8", count=order, offset=off).copy()
        off += 8 * order
        lm = cls(vocab, order, add_k, weights)
        for direction in (lm.forward, lm.backward):
            direction.unigram = np.frombuffer(
                blob, dtype="<u8", count=vocab_size, offset=off
            ).copy()
            off += 8 * vocab_size
            for n in range(2, order + 1):
                (n_contexts,) = take("<Q")
                table = direction.tables[n - 2]
                for _ in range(n_contexts):
                    ctx = take(f"<{n - 1}I")
                    (n_cont,) = take("<I")
                    bucket = Counter()
                    for _ in range(n_cont):
                        wid, cnt = take("<IQ")
                        bucket[wid] = cnt
                    table[ctx] = bucket
        if off != len(blob):
            raise DataError("trailing bytes in language model file")
        return lm


def train_bilm(corpus, vocab: Vocabulary, order: int = DEFAULT_ORDER, **kwargs) -> BiLM:
    return BiLM.train(corpus, vocab, order, **kwargs)


def predict_distribution(bilm: BiLM, tokens, position: int) -> np.ndarray:
    return bilm.predict_distribution(tokens, position)


def nucleus_support(distribution: np.ndarray, p_nucleus: float) -> np.ndarray:
    """Ids of the smallest descending-probability prefix with mass >= p_nucleus."""
    if not 0.0 < p_nucleus <= 1.0:
        raise ConfigError(f"p_nucleus must be in (0, 1], got {p_nucleus}")
    dist = np.asarray(distribution, dtype=np.float64)
    if abs(dist.sum() - 1.0) > 1e-6 or (dist < 0).any():
        raise NumericError("nucleus sampling requires a normalized distribution")
    order = np.argsort(-dist, kind="stable")
    cum = np.cumsum(dist[order])
    cutoff = int(np.searchsorted(cum, p_nucleus - 1e-12)) + 1
    return order[:cutoff]


def nucleus_sample(distribution: np.ndarray, p_nucleus: float, rng) -> int:
    """Top-p sample: truncate to the nucleus, renormalize, draw one id."""
    support = nucleus_support(distribution, p_nucleus)
    probs = np.asarray(distribution, dtype=np.float64)[support]
    probs /= probs.sum()
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return int(support[min(idx, len(support) - 1)])
