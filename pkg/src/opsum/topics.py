"""Latent topic model trained by collapsed Gibbs sampling.

Supplies the "true" category distribution for a text: the summarizer's
discriminator head is trained to match these inferred topic proportions.
Reserved ids (pad/unk/markers) never participate; unknown tokens are skipped,
and a document with no usable tokens gets the uniform distribution.

Binary file layout (little-endian):

    magic   4 bytes  b"OPLD"
    u32     format version (currently 1)
    u32     K (topic count)
    f64     alpha, f64 beta
    u32     vocab_size (full vocabulary, reserved ids included)
    32 B    sha256 of the vocabulary id->token table
    u64[K * (vocab_size - 4)]  topic-word counts, row-major
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .corpus import N_RESERVED, Vocabulary
from .errors import ConfigError, DataError

LDA_MAGIC = b"OPLD"
LDA_FORMAT_VERSION = 1
DEFAULT_BETA = 0.01
# 50 suits a movie-review-sized corpus; ~100 works better for a large,
# many-domain business-review corpus. Always overridable from the CLI.
DEFAULT_TOPIC_COUNT = 50

_gammaln = np.vectorize(math.lgamma, otypes=[np.float64])


def _draw(probs: np.ndarray, rng) -> int:
    """Sample an index from unnormalized weights with one uniform draw."""
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(idx, len(probs) - 1)


class LdaModel:
    """Collapsed-Gibbs LDA over the non-reserved part of a Vocabulary."""

    def __init__(self, vocab: Vocabulary, k: int, alpha: float | None = None,
                 beta: float = DEFAULT_BETA):
        if k < 2:
            raise ConfigError(f"topic count must be >= 2, got {k}")
        self.vocab = vocab
        self.k = k
        self.alpha = 50.0 / k if alpha is None else alpha
        self.beta = beta
        self.n_words = len(vocab) - N_RESERVED
        self.topic_word = np.zeros((k, self.n_words), dtype=np.int64)
        self.topic_total = np.zeros(k, dtype=np.int64)
        # populated by fit(); retained so sweeps can be continued
        self._docs: list[np.ndarray] = []
        self._assign: list[np.ndarray] = []
        self._doc_topic: np.ndarray | None = None
        self.ll_history: list[float] = []

    # -- training ---------------------------------------------------------

    def _encode(self, tokens) -> np.ndarray:
        ids = [self.vocab.lookup(t) for t in tokens]
        return np.array([i - N_RESERVED for i in ids if i >= N_RESERVED], dtype=np.int64)

    def fit(self, corpus, iterations: int, rng) -> "LdaModel":
        self._docs = [self._encode(r.tokens) for r in corpus.reviews]
        self._doc_topic = np.zeros((len(self._docs), self.k), dtype=np.int64)
        self._assign = []
        for d, doc in enumerate(self._docs):
            z = rng.integers(0, self.k, size=len(doc))
            self._assign.append(z)
            for w, t in zip(doc, z):
                self._doc_topic[d, t] += 1
                self.topic_word[t, w] += 1
                self.topic_total[t] += 1
        for _ in range(iterations):
            self.sweep(rng)
            self.ll_history.append(self.joint_loglik())
        return self

    def sweep(self, rng) -> None:
        """One full collapsed Gibbs pass over every retained token."""
        beta_v = self.beta * self.n_words
        for d, doc in enumerate(self._docs):
            z = self._assign[d]
            nd = self._doc_topic[d]
            for i in range(len(doc)):
                w, old = doc[i], z[i]
                nd[old] -= 1
                self.topic_word[old, w] -= 1
                self.topic_total[old] -= 1
                probs = (nd + self.alpha) * (self.topic_word[:, w] + self.beta) / (
                    self.topic_total + beta_v
                )
                new = _draw(probs, rng)
                z[i] = new
                nd[new] += 1
                self.topic_word[new, w] += 1
                self.topic_total[new] += 1

    def assigned_tokens(self) -> int:
        return int(self.topic_total.sum())

    # -- quantities -------------------------------------------------------

    @property
    def phi(self) -> np.ndarray:
        """Smoothed topic-word distributions, one row per topic."""
        num = self.topic_word + self.beta
        return num / num.sum(axis=1, keepdims=True)

    def joint_loglik(self) -> float:
        """log p(w | z) + log p(z) from the current count state."""
        beta, alpha, v, k = self.beta, self.alpha, self.n_words, self.k
        ll = k * (math.lgamma(v * beta) - v * math.lgamma(beta))
        ll += float(np.sum(_gammaln(self.topic_word + beta)))
        ll -= float(np.sum(_gammaln(self.topic_total + v * beta)))
        nd = self._doc_topic
        ll += nd.shape[0] * (math.lgamma(k * alpha) - k * math.lgamma(alpha))
        ll += float(np.sum(_gammaln(nd + alpha)))
        ll -= float(np.sum(_gammaln(nd.sum(axis=1) + k * alpha)))
        return ll

    # -- inference --------------------------------------------------------

    def infer(self, tokens, iterations: int, rng) -> np.ndarray:
        """Fold-in Gibbs with topic-word counts frozen; smoothed proportions."""
        doc = self._encode(tokens)
        if len(doc) == 0:
            return np.full(self.k, 1.0 / self.k)
        phi = self.phi
        nd = np.zeros(self.k, dtype=np.int64)
        z = rng.integers(0, self.k, size=len(doc))
        for t in z:
            nd[t] += 1
        for _ in range(iterations):
            for i, w in enumerate(doc):
                nd[z[i]] -= 1
                probs = (nd + self.alpha) * phi[:, w]
                z[i] = _draw(probs, rng)
                nd[z[i]] += 1
        theta = (nd + self.alpha) / (len(doc) + self.k * self.alpha)
        return theta

    def heldout_loglik(self, token_seqs, iterations: int, rng) -> float:
        """Mean per-token log p(w) over documents under folded-in proportions."""
        phi = self.phi
        total, n_tokens = 0.0, 0
        for tokens in token_seqs:
            doc = self._encode(tokens)
            if len(doc) == 0:
                continue
            theta = self.infer(tokens, iterations, rng)
            total += float(np.sum(np.log(theta @ phi[:, doc])))
            n_tokens += len(doc)
        if n_tokens == 0:
            raise DataError("no scorable tokens in held-out set")
        return total / n_tokens

    def top_words(self, n: int = 10) -> str:
        lines = []
        for t in range(self.k):
            order = np.argsort(-self.topic_word[t], kind="stable")[:n]
            words = [self.vocab.token(int(i) + N_RESERVED) for i in order]
            lines.append(f"topic {t}: " + " ".join(words))
        return "\n".join(lines) + "\n"

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(LDA_MAGIC)
            f.write(struct.pack("<II", LDA_FORMAT_VERSION, self.k))
            f.write(struct.pack("<dd", self.alpha, self.beta))
            f.write(struct.pack("<I", len(self.vocab)))
            f.write(self.vocab.content_hash())
            f.write(self.topic_word.astype("<u8").tobytes())

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "LdaModel":
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != LDA_MAGIC:
            raise DataError("not a topic model file")
        version, k = struct.unpack_from("<II", blob, 4)
        if version != LDA_FORMAT_VERSION:
            raise DataError(f"unsupported topic model format version {version}")
        alpha, beta = struct.unpack_from("<dd", blob, 12)
        (vocab_size,) = struct.unpack_from("<I", blob, 28)
        stored_hash = blob[32:64]
        if vocab_size != len(vocab) or stored_hash != vocab.content_hash():
            raise DataError("topic model was trained with a different vocabulary")
        model = cls(vocab, k, alpha, beta)
        counts = np.frombuffer(blob, dtype="<u8", offset=64)
        if counts.size != k * model.n_words:
            raise DataError("topic model file has wrong count-table size")
        model.topic_word = counts.reshape(k, model.n_words).astype(np.int64)
        model.topic_total = model.topic_word.sum(axis=1)
        return model


def train_lda(corpus, vocab: Vocabulary, k: int, iterations: int, rng,
              alpha: float | None = None, beta: float = DEFAULT_BETA) -> LdaModel:
    return LdaModel(vocab, k, alpha, beta).fit(corpus, iterations, rng)


def infer_topics(model: LdaModel, tokens, iterations: int, rng) -> np.ndarray:
    return model.infer(tokens, iterations, rng)
