"""Inference: length-normalized beam search and the summarize entry point.

Hypotheses are ranked by mean per-token log-probability — cumulative
log-prob divided by length (an exponent `alpha` generalizes this; 1 is
plain division).  Finished hypotheses compete with active ones for the
same beam slots, so a beam of 1 degenerates to greedy argmax decoding.
At test time the genuine review set feeds both the segment path and the
document path, mirroring how synthetic pairs were built.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .corpus import BOS_ID, EOS_ID, PAD_ID, Vocabulary
from .errors import ConfigError, NumericError

DEFAULT_BEAM_SIZE = 5
DEFAULT_MAX_LEN = 30     # summary-length bound for the short-review domain


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)   # generated ids, ext ids included
    logprob: float = 0.0
    state: object = None
    finished: bool = False

    def score(self, alpha: float = 1.0) -> float:
        """Length-normalized score; length counts the terminator too."""
        return self.logprob / max(1, len(self.tokens)) ** alpha


def beam_search(model, prepared, beam_size: int = DEFAULT_BEAM_SIZE,
                max_len: int = DEFAULT_MAX_LEN, alpha: float = 1.0) -> list[int]:
    """Decode one input; returns generated ids without the terminator.

    `model` needs three methods: encode_pair(tape, prepared),
    init_state(tape, encoded) and decode_step(tape, prev_id, state,
    encoded) returning an object with `.p` (1, ext_size) and `.state` —
    the summarizer provides them, and tests inject scripted stand-ins.
    """
    if beam_size < 1:
        raise ConfigError("beam_size must be >= 1")
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    tp = Tape(record=False)
    enc = model.encode_pair(tp, prepared)
    active = [Hypothesis(state=model.init_state(tp, enc))]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        if not active:
            break
        children: list[Hypothesis] = []
        for hyp in active:
            prev = hyp.tokens[-1] if hyp.tokens else BOS_ID
            step = model.decode_step(tp, prev, hyp.state, enc)
            probs = step.p.data[0].astype(np.float64).copy()
            probs[PAD_ID] = 0.0
            probs[BOS_ID] = 0.0
            order = np.argsort(-probs, kind="stable")[:beam_size]
            for wid in order:
                if probs[wid] <= 0.0:
                    break      # sorted, so the rest are zero too
                children.append(Hypothesis(
                    tokens=hyp.tokens + [int(wid)],
                    logprob=hyp.logprob + float(np.log(probs[wid])),
                    state=step.state,
                    finished=int(wid) == EOS_ID,
                ))
        if not children:
            raise NumericError("no expandable hypotheses: all mass on reserved tokens")
        children.sort(key=lambda h: (-h.score(alpha), h.tokens))
        active = []
        for hyp in children[:beam_size]:   # finished and active share the slots
            if hyp.finished:
                finished.append(hyp)
            else:
                active.append(hyp)
        finished.sort(key=lambda h: (-h.score(alpha), h.tokens))
        del finished[beam_size:]

    pool = finished + active
    best = min(pool, key=lambda h: (-h.score(alpha), h.tokens))
    tokens = best.tokens
    return tokens[:-1] if tokens and tokens[-1] == EOS_ID else tokens


def ids_to_tokens(vocab: Vocabulary, ext_tokens: list[str], ids: list[int]) -> list[str]:
    """Map generated ids back to strings; ids past |V| index the copy list."""
    out = []
    for wid in ids:
        if wid < len(vocab):
            out.append(vocab.token(wid))
        else:
            out.append(ext_tokens[wid - len(vocab)])
    return out


def detokenize(tokens: list[str]) -> str:
    text = " ".join(tokens)
    text = re.sub(r"\s+([.,!?;:])", r"\1", text)
    text = re.sub(r"\s*'\s*", "'", text)
    return text


def summarize(model, reviews: list[list[str]], beam_size: int = DEFAULT_BEAM_SIZE,
              max_len: int = DEFAULT_MAX_LEN, alpha: float = 1.0) -> str:
    """Generate one summary from genuine (tokenized) reviews of a product."""
    prepared = model.prepare_inference(reviews)
    ids = beam_search(model, prepared, beam_size, max_len, alpha)
    return detokenize(ids_to_tokens(model.vocab, prepared.ext_tokens, ids))
