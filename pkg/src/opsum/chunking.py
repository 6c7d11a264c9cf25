"""Shallow parser: lexicon+suffix POS tagger and a regular chunk grammar.

Everything is rule-driven from two plain-text fixtures shipped inside the
package (``data/chunker_lexicon.txt`` and ``data/chunk_grammar.txt``), so the
chunker needs no trained model and is bit-for-bit deterministic. Output labels
come from a closed set: NP, VP, PP, ADJP, ADVP, and O for tokens no grammar
rule claims. The label set is intentionally smaller than what a trained
chunker would emit (no SBAR/PRT/INTJ); a stronger tagger can be swapped in by
constructing ``Chunker`` with different rules.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .errors import DataError

TAGSET = ("DET", "NOUN", "VERB", "ADJ", "ADV", "PRON", "PREP", "CONJ", "NUM", "PUNCT")
TAG_CODE = {
    "DET": "D",
    "NOUN": "N",
    "VERB": "V",
    "ADJ": "A",
    "ADV": "R",
    "PRON": "P",
    "PREP": "E",
    "CONJ": "C",
    "NUM": "M",
    "PUNCT": "U",
}
CHUNK_LABELS = ("NP", "VP", "PP", "ADJP", "ADVP", "O")

_ATOM_RE = re.compile(r"^([A-Z]+)([?*+]?)$")

# suffix fallbacks, applied only when the token is not in the lexicon
_NOUN_SUFFIXES = ("ness", "ment", "tion", "sion", "ship", "ism")
_ADJ_SUFFIXES = ("ous", "ful", "less", "able", "ible", "ive", "ish")


@dataclass(frozen=True)
class Chunk:
    tokens: tuple[str, ...]
    label: str

    def __post_init__(self):
        if not self.tokens:
            raise DataError("chunk must contain at least one token")
        if self.label not in CHUNK_LABELS:
            raise DataError(f"unknown chunk label {self.label!r}")


def _read_packaged(name: str) -> str:
    return resources.files("opsum").joinpath(f"data/{name}").read_text(encoding="utf-8")


def load_lexicon(text: str | None = None) -> dict[str, str]:
    if text is None:
        text = _read_packaged("chunker_lexicon.txt")
    lexicon: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"lexicon line {lineno}: expected 'token TAG', got {line!r}")
        token, tag = parts
        if tag not in TAGSET:
            raise DataError(f"lexicon line {lineno}: unknown tag {tag!r}")
        if token in lexicon:
            raise DataError(f"lexicon line {lineno}: duplicate token {token!r}")
        lexicon[token] = tag
    return lexicon


def load_grammar(text: str | None = None) -> list[tuple[str, re.Pattern]]:
    """Parse grammar rules into (label, compiled tag-code regex) in file order."""
    if text is None:
        text = _read_packaged("chunk_grammar.txt")
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        label, _, pattern = line.partition(":")
        label = label.strip()
        if label not in CHUNK_LABELS or label == "O":
            raise DataError(f"grammar line {lineno}: bad label {label!r}")
        code_pattern = []
        for atom in pattern.split():
            m = _ATOM_RE.match(atom)
            if not m or m.group(1) not in TAG_CODE:
                raise DataError(f"grammar line {lineno}: bad atom {atom!r}")
            code_pattern.append(TAG_CODE[m.group(1)] + m.group(2))
        if not code_pattern:
            raise DataError(f"grammar line {lineno}: empty pattern")
        rules.append((label, re.compile("".join(code_pattern))))
    if not rules:
        raise DataError("grammar defines no rules")
    return rules


class Chunker:
    """Deterministic tagger + chunker over the packaged rule fixtures."""

    def __init__(self, lexicon: dict[str, str] | None = None, rules=None):
        self.lexicon = load_lexicon() if lexicon is None else dict(lexicon)
        self.rules = load_grammar() if rules is None else list(rules)

    def pos_tag(self, tokens) -> list[str]:
        return [self._tag_one(t) for t in tokens]

    def _tag_one(self, token: str) -> str:
        tag = self.lexicon.get(token)
        if tag is not None:
            return tag
        if token.isdigit():
            return "NUM"
        if not any(c.isalnum() for c in token):
            return "PUNCT"
        if token.endswith("ly") and len(token) > 3:
            return "ADV"
        if (token.endswith("ing") and len(token) > 4) or (token.endswith("ed") and len(token) > 3):
            return "VERB"
        if token.endswith(_NOUN_SUFFIXES):
            return "NOUN"
        if token.endswith(_ADJ_SUFFIXES):
            return "ADJ"
        return "NOUN"

    def chunk(self, tokens) -> list[Chunk]:
        """Partition `tokens` into labeled chunks, in order, covering everything."""
        tokens = list(tokens)
        tags = self.pos_tag(tokens)
        codes = "".join(TAG_CODE[t] for t in tags)
        chunks: list[Chunk] = []
        i = 0
        while i < len(tokens):
            best_len, best_label = 0, ""
            for label, pattern in self.rules:
                m = pattern.match(codes, i)
                if m is not None and m.end() - i > best_len:
                    best_len, best_label = m.end() - i, label
            if best_len == 0:
                chunks.append(Chunk((tokens[i],), "O"))
                i += 1
            else:
                chunks.append(Chunk(tuple(tokens[i : i + best_len]), best_label))
                i += best_len
        return chunks


_DEFAULT: Chunker | None = None


def default_chunker() -> Chunker:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Chunker()
    return _DEFAULT


def pos_tag(tokens) -> list[str]:
    return default_chunker().pos_tag(tokens)


def chunk(tokens) -> list[Chunk]:
    return default_chunker().chunk(tokens)


class ChunkInventory:
    """All chunks of a corpus, grouped by label, with source review ids."""

    def __init__(self):
        self.by_label: dict[str, list[Chunk]] = {}
        self.source_ids: dict[str, list[str]] = {}

    def add(self, ch: Chunk, review_id: str) -> None:
        self.by_label.setdefault(ch.label, []).append(ch)
        self.source_ids.setdefault(ch.label, []).append(review_id)

    def labels(self) -> list[str]:
        return sorted(self.by_label)

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_label.values())

    def sample(self, label: str, rng) -> Chunk:
        """Uniformly sample one chunk with this label; absent label is an error."""
        pool = self.by_label.get(label)
        if not pool:
            raise DataError(f"no chunks with label {label!r} in inventory")
        return pool[int(rng.integers(len(pool)))]


def build_chunk_inventory(corpus, chunker: Chunker | None = None) -> ChunkInventory:
    chunker = chunker or default_chunker()
    inv = ChunkInventory()
    for review in corpus.reviews:
        for ch in chunker.chunk(review.tokens):
            inv.add(ch, review.review_id)
    return inv
