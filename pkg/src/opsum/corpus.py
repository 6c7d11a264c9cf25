"""Review corpus: tokenization, vocabulary, document frequencies, on-disk formats.

The corpus file is JSON Lines with one review per line; vocabulary and IDF
tables are plain JSON with an explicit schema version. Everything here is
deterministic: the same input file always produces byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError, DataError

# Lowercase, split punctuation into standalone tokens, collapse whitespace.
TOKENIZER_ID = "lowercase-punct-split-v1"
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
N_RESERVED = len(RESERVED_TOKENS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

VOCAB_SCHEMA_VERSION = 1
IDF_SCHEMA_VERSION = 1
CORPUS_FIELDS = {"product_id", "review_id", "text", "category"}


def tokenize(text: str) -> list[str]:
    """Lowercase `text` and split it into word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Review:
    product_id: str
    review_id: str
    text: str
    category: str | None = None
    tokens: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        self.tokens = tuple(tokenize(self.text))


class Corpus:
    """Immutable collection of reviews with a product index."""

    def __init__(self, reviews: list[Review]):
        if not reviews:
            raise DataError("corpus is empty")
        seen = set()
        for r in reviews:
            if r.review_id in seen:
                raise DataError(f"duplicate review_id {r.review_id!r}")
            seen.add(r.review_id)
        self.reviews = list(reviews)
        self.by_product: dict[str, list[Review]] = {}
        for r in self.reviews:
            self.by_product.setdefault(r.product_id, []).append(r)
        self._by_id = {r.review_id: r for r in self.reviews}

    def __len__(self):
        return len(self.reviews)

    def get(self, review_id: str) -> Review:
        try:
            return self._by_id[review_id]
        except KeyError:
            raise DataError(f"unknown review_id {review_id!r}") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.reviews:
                rec = {"product_id": r.product_id, "review_id": r.review_id, "text": r.text}
                if r.category is not None:
                    rec["category"] = r.category
                f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Corpus":
        reviews = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({e})") from None
                unknown = set(rec) - CORPUS_FIELDS
                if unknown:
                    raise DataError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
                for key in ("product_id", "review_id", "text"):
                    if key not in rec:
                        raise DataError(f"{path}:{lineno}: missing field {key!r}")
                reviews.append(
                    Review(rec["product_id"], rec["review_id"], rec["text"], rec.get("category"))
                )
        return cls(reviews)


class Vocabulary:
    """Dense token<->id bijection with fixed reserved ids.

    Ids 0..3 are PAD, UNK, BOS, EOS; remaining tokens are ordered by
    descending corpus count with lexicographic tie-breaking, so an identical
    corpus always yields a bit-identical vocabulary.
    """

    def __init__(self, tokens: list[str], counts: dict[str, int], max_size: int):
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.counts = dict(counts)
        self.max_size = max_size

    def __len__(self):
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def content_hash(self) -> bytes:
        """sha256 over the id->token table; pins artifacts to one vocabulary."""
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).digest()

    def encode(self, tokens) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        payload = {
            "version": VOCAB_SCHEMA_VERSION,
            "tokenizer": TOKENIZER_ID,
            "max_size": self.max_size,
            "tokens": self.id_to_token[len(RESERVED_TOKENS):],
            "counts": {t: self.counts[t] for t in self.id_to_token[len(RESERVED_TOKENS):]},
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        if payload.get("version") != VOCAB_SCHEMA_VERSION:
            raise DataError(f"unsupported vocabulary version {payload.get('version')!r}")
        return cls(payload["tokens"], payload["counts"], payload["max_size"])


def build_vocab(corpus: Corpus, max_size: int = 50_000) -> Vocabulary:
    """Count all corpus tokens and keep the `max_size` most frequent ones."""
    if max_size < len(RESERVED_TOKENS) + 1:
        raise ConfigError(f"max_size must be at least {len(RESERVED_TOKENS) + 1}, got {max_size}")
    counts = Counter()
    for r in corpus.reviews:
        counts.update(r.tokens)
    budget = max_size - len(RESERVED_TOKENS)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
    return Vocabulary([t for t, _ in ordered], dict(ordered), max_size)


class IdfTable:
    """Smoothed inverse document frequencies over reviews.

    idf(w) = ln((1 + D) / (1 + df(w))) where df counts reviews containing w
    at least once. Unseen tokens score ln(1 + D).
    """

    def __init__(self, idf: dict[str, float], doc_count: int):
        self.idf = dict(idf)
        self.doc_count = doc_count
        self._default = math.log(1.0 + doc_count)

    def lookup(self, token: str) -> float:
        return self.idf.get(token, self._default)

    def save(self, path) -> None:
        payload = {"version": IDF_SCHEMA_VERSION, "doc_count": self.doc_count, "idf": self.idf}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "IdfTable":
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        if payload.get("version") != IDF_SCHEMA_VERSION:
            raise DataError(f"unsupported idf version {payload.get('version')!r}")
        return cls(payload["idf"], payload["doc_count"])


def compute_idf(corpus: Corpus) -> IdfTable:
    df = Counter()
    for r in corpus.reviews:
        df.update(set(r.tokens))
    d = len(corpus.reviews)
    idf = {t: math.log((1.0 + d) / (1.0 + n)) for t, n in sorted(df.items())}
    return IdfTable(idf, d)
