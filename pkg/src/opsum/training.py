"""Losses, optimizer, LM pretraining, coverage phase, and the training loop.

The generation loss is teacher-forced negative log-likelihood over the
target tokens (extended-vocabulary ids where a token was copied).  When the
category discriminator is enabled, its KL term is added with no extra
weighting: total = gen + disc.  The "l2 constraint" is realized as a
per-row max-norm projection applied to weight matrices after each Adam
update; global gradient-norm clipping is available behind the same knob
via ``constraint_mode="clip"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import BOS_ID, EOS_ID, Corpus
from .errors import ConfigError, DataError, NumericError
from .model import DenoisingSummarizer, PreparedPair

PROB_FLOOR = 1e-12
_BIAS_SUFFIXES = ("_b", "_b1", "_b2")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    l2_maxnorm: float = 3.0
    batch_size: int = 8
    epochs: int = 5
    patience: int = 3
    seed: int = 0
    coverage_phase: bool = False     # run an extra coverage pass after base training
    coverage_weight: float = 1.0
    constraint_mode: str = "maxnorm"  # "maxnorm" (row projection) or "clip" (grad norm)

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2_maxnorm <= 0:
            raise ConfigError("l2_maxnorm must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, epochs and patience must be >= 1")
        if self.coverage_weight < 0:
            raise ConfigError("coverage_weight must be >= 0")
        if self.constraint_mode not in ("maxnorm", "clip"):
            raise ConfigError(f"unknown constraint_mode {self.constraint_mode!r}")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d).validate()


# -- optimizer ----------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self._v = {n: np.zeros_like(t.data) for n, t in self.params.items()}

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self._m[name], self._v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def _is_bias(name: str) -> bool:
    return name.endswith(_BIAS_SUFFIXES)


def apply_weight_constraint(params: dict[str, Tensor], maxnorm: float) -> None:
    """Rescale weight-matrix rows whose L2 norm exceeds `maxnorm`.

    Bias vectors are exempt: the LSTM forget-gate biases start at 1.0 and a
    row projection would immediately crush them.
    """
    for name, p in params.items():
        if p.data.ndim != 2 or _is_bias(name):
            continue
        norms = np.sqrt((p.data.astype(np.float64) ** 2).sum(axis=1))
        over = norms > maxnorm
        if over.any():
            scale = np.ones_like(norms)
            scale[over] = maxnorm / norms[over]
            p.data *= scale[:, None].astype(p.data.dtype)


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most `max_norm`."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= factor
    return norm


# -- losses --------------------------------------------------------------------


def loss_gen(tp: Tape, distributions: Sequence[Tensor], target_ids: Sequence[int],
             counters: dict | None = None) -> Tensor:
    """Negative log-likelihood of one target sequence, -sum_t log p(w_t).

    The mean over a batch is taken by `train_step`.  Probabilities below
    PROB_FLOOR are clamped (and counted into `counters["clamped"]`).
    """
    if len(distributions) != len(target_ids):
        raise DataError(
            f"{len(distributions)} distributions for {len(target_ids)} target tokens"
        )
    if not target_ids:
        raise DataError("empty target sequence")
    total = None
    for dist, wid in zip(distributions, target_ids):
        if not 0 <= wid < dist.shape[1]:
            raise DataError(f"target id {wid} outside distribution of {dist.shape[1]}")
        if counters is not None and dist.data[0, wid] < PROB_FLOOR:
            counters["clamped"] = counters.get("clamped", 0) + 1
        picked = tp.clip_min(tp.narrow(dist, 1, wid, 1), PROB_FLOOR)
        term = tp.log(picked)
        total = term if total is None else tp.add(total, term)
    return tp.mul_scalar(tp.sum(total), -1.0)


def loss_disc(tp: Tape, p_z: np.ndarray, q_z: Tensor) -> Tensor:
    """KL(p || q) where p is the reference topic mixture and q the prediction."""
    p = np.asarray(p_z, dtype=np.float64).reshape(q_z.shape)
    if p.min() < 0 or abs(p.sum() - 1.0) > 1e-6:
        raise DataError("reference topic mixture is not a distribution")
    entropy = float(np.sum(p * np.log(np.maximum(p, PROB_FLOOR))))
    cross = tp.sum(
        tp.mul(tp.const(p.astype(q_z.dtype)), tp.log(tp.clip_min(q_z, PROB_FLOOR)))
    )
    return tp.add_scalar(tp.mul_scalar(cross, -1.0), entropy)


def pair_loss(tp: Tape, model: DenoisingSummarizer, prepared: PreparedPair,
              training: bool = True, rng=None, coverage_weight: float = 0.0,
              counters: dict | None = None):
    """Forward one pair; returns (total, gen, disc, coverage) loss tensors."""
    res = model.forward(tp, prepared, training, rng)
    gen = loss_gen(tp, res.distributions, prepared.target_ext_ids, counters)
    total = gen
    disc = None
    if res.q_z is not None and prepared.p_z is not None:
        disc = loss_disc(tp, prepared.p_z, res.q_z)
        total = tp.add(total, disc)
    coverage = None
    if model.config.use_coverage and coverage_weight > 0:
        terms = [
            tp.sum(tp.minimum(att, cov))
            for att, cov in zip(res.att_doc, res.coverages)
            if att is not None and cov is not None
        ]
        if terms:
            coverage = terms[0]
            for t in terms[1:]:
                coverage = tp.add(coverage, t)
            coverage = tp.mul_scalar(coverage, coverage_weight)
            total = tp.add(total, coverage)
    return total, gen, disc, coverage


# -- the update ------------------------------------------------------------------


@dataclass
class StepStats:
    loss: float
    loss_gen: float
    loss_disc: float
    coverage: float
    grad_norm: float
    clamped: int = 0

    def log_line(self, step: int, lr: float) -> str:
        return json.dumps({
            "step": step,
            "loss_gen": round(self.loss_gen, 6),
            "loss_disc": round(self.loss_disc, 6),
            "lr": lr,
            "grad_norm": round(self.grad_norm, 6),
        })


def train_step(model: DenoisingSummarizer, batch: Sequence[PreparedPair],
               optimizer: Adam, cfg: TrainConfig, rng=None) -> StepStats:
    """One optimizer update on a batch; loss is the batch mean of gen + disc."""
    if not batch:
        raise DataError("empty batch")
    tp = Tape()
    model.zero_grads()
    counters: dict = {}
    total = None
    gen_sum = disc_sum = cov_sum = 0.0
    disc_count = 0
    for prepared in batch:
        t, gen, disc, cov = pair_loss(
            tp, model, prepared, training=True, rng=rng,
            coverage_weight=cfg.coverage_weight, counters=counters,
        )
        total = t if total is None else tp.add(total, t)
        gen_sum += gen.item()
        if disc is not None:
            disc_sum += disc.item()
            disc_count += 1
        if cov is not None:
            cov_sum += cov.item()
    total = tp.mul_scalar(total, 1.0 / len(batch))
    loss_value = total.item()
    if not math.isfinite(loss_value):
        raise NumericError(
            f"non-finite training loss {loss_value} "
            f"(gen={gen_sum / len(batch)}, disc={disc_sum / max(1, disc_count)})"
        )
    tp.backward(total)
    if cfg.constraint_mode == "clip":
        grad_norm = clip_gradients(model.params, cfg.l2_maxnorm)
    else:
        grad_norm = global_grad_norm(model.params)
    optimizer.step()
    if cfg.constraint_mode == "maxnorm":
        apply_weight_constraint(model.params, cfg.l2_maxnorm)
    n = len(batch)
    return StepStats(
        loss=loss_value,
        loss_gen=gen_sum / n,
        loss_disc=disc_sum / disc_count if disc_count else 0.0,
        coverage=cov_sum / n,
        grad_norm=grad_norm,
        clamped=counters.get("clamped", 0),
    )


# -- language-model pretraining ---------------------------------------------------


@dataclass
class PretrainReport:
    perplexity: float          # held-out per-token perplexity of the fwd encoder LM
    uniform_perplexity: float  # = |V|, the no-learning reference point
    reviews_trained: int
    reviews_heldout: int


def _lm_nll(model: DenoisingSummarizer, tp: Tape, prefix: str,
            ids: list[int], scratch_w: Tensor, scratch_b: Tensor) -> Tensor:
    """Mean next-token NLL of one sequence under the `prefix` LSTM cell."""
    inputs = np.asarray([[BOS_ID] + ids], dtype=np.int64)
    targets = ids + [EOS_ID]
    steps = len(targets)
    mask = np.ones((1, steps), dtype=np.float64)
    states = model._run_lstm(tp, prefix, inputs, mask, False, None)
    h = tp.concat(states, axis=0)                     # (T, H_cell)
    logits = tp.add(tp.matmul(h, scratch_w), scratch_b)
    probs = tp.softmax(logits, axis=-1)
    onehot = np.zeros((steps, model.config.vocab_size), dtype=model.dtype)
    onehot[np.arange(steps), targets] = 1.0
    picked = tp.sum(tp.mul(tp.log(tp.clip_min(probs, PROB_FLOOR)), tp.const(onehot)))
    return tp.mul_scalar(picked, -1.0 / steps)


def pretrain_lm(model: DenoisingSummarizer, corpus: Corpus, epochs: int = 1,
                learning_rate: float = 0.001, seed: int = 0,
                holdout_fraction: float = 0.1) -> PretrainReport:
    """Warm-start the four LSTM cells with a next-token objective.

    Each cell (both encoder directions and both decoders) is trained as a
    small language model over the corpus text, sharing the embedding table
    but using a throwaway output projection.  The backward encoder sees
    reversed sequences.  Returns held-out perplexity of the forward
    encoder cell; anything below |V| beats the uniform baseline.
    """
    seqs = [list(model.vocab.encode(r.tokens)) for r in corpus.reviews if r.tokens]
    if not seqs:
        raise DataError("no non-empty reviews to pretrain on")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(seqs))
    n_held = max(1, int(round(holdout_fraction * len(seqs)))) if len(seqs) > 1 else 1
    held = [seqs[i] for i in order[:n_held]]
    train = [seqs[i] for i in order[n_held:]] or held

    v, h_enc = model.config.vocab_size, model.config.hidden_dim
    h_dec = 2 * h_enc
    cells = [("enc_fwd", h_enc, False), ("enc_bwd", h_enc, True),
             ("dec_seg", h_dec, False), ("dec_doc", h_dec, False)]
    fwd_scratch = None
    for prefix, width, reverse in cells:
        scratch_w = ad.param(ad.glorot_init(rng, width, v, dtype=model.dtype), "lm_w")
        scratch_b = ad.param(np.zeros((1, v), dtype=model.dtype), "lm_b")
        cell_params = {name: model.params[name]
                       for name in ("emb", f"{prefix}_wx", f"{prefix}_wh", f"{prefix}_b")}
        cell_params.update({"lm_w": scratch_w, "lm_b": scratch_b})
        optimizer = Adam(cell_params, lr=learning_rate)
        for _ in range(epochs):
            for ids in train:
                tp = Tape()
                ad.zero_grads(cell_params.values())
                nll = _lm_nll(model, tp, prefix,
                              ids[::-1] if reverse else ids, scratch_w, scratch_b)
                tp.backward(nll)
                optimizer.step()
        if prefix == "enc_fwd":
            fwd_scratch = (scratch_w, scratch_b)

    scratch_w, scratch_b = fwd_scratch
    tp = Tape(record=False)
    nlls = [_lm_nll(model, tp, "enc_fwd", ids, scratch_w, scratch_b).item()
            for ids in held]
    return PretrainReport(
        perplexity=float(math.exp(np.mean(nlls))),
        uniform_perplexity=float(v),
        reviews_trained=len(train),
        reviews_heldout=len(held),
    )


# -- early stopping & orchestration -----------------------------------------------


def should_stop(history: Sequence[float], patience: int) -> bool:
    """True once the best dev score is `patience` evaluations old.

    Ties do not count as improvement, so a flat history with patience 2
    stops right after the third evaluation.
    """
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    if not history:
        return False
    best = int(np.argmax(history))   # first occurrence wins
    return len(history) - 1 - best >= patience


def snapshot_params(model: DenoisingSummarizer) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in model.params.items()}


def restore_params(model: DenoisingSummarizer, snapshot: dict[str, np.ndarray]) -> None:
    for name, t in model.params.items():
        t.data[...] = snapshot[name]


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_gen_losses: list[float] = field(default_factory=list)
    dev_scores: list[float] = field(default_factory=list)
    best_dev: float | None = None
    steps: int = 0
    stopped_early: bool = False


def train_model(model: DenoisingSummarizer, pairs: Sequence, cfg: TrainConfig,
                dev_scorer: Callable[[DenoisingSummarizer], float] | None = None,
                log_path=None, checkpoint_path=None) -> TrainResult:
    """Run the full loop: shuffle, batch, update, evaluate, early-stop.

    `dev_scorer` is called after every epoch with the live model and must
    return a higher-is-better score; the best-scoring parameters are
    restored before returning.  Without a scorer, training runs all epochs.
    """
    cfg.validate()
    if not pairs:
        raise DataError("no training pairs")
    prepared = [p if isinstance(p, PreparedPair) else model.prepare_pair(p)
                for p in pairs]
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    best_snapshot = None
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for _epoch in range(cfg.epochs):
            order = rng.permutation(len(prepared))
            losses, gens = [], []
            for start in range(0, len(order), cfg.batch_size):
                batch = [prepared[i] for i in order[start:start + cfg.batch_size]]
                stats = train_step(model, batch, optimizer, cfg, rng=rng)
                result.steps += 1
                losses.append(stats.loss)
                gens.append(stats.loss_gen)
                if log:
                    log.write(stats.log_line(result.steps, cfg.learning_rate) + "\n")
            result.epoch_losses.append(float(np.mean(losses)))
            result.epoch_gen_losses.append(float(np.mean(gens)))
            if dev_scorer is not None:
                score = float(dev_scorer(model))
                result.dev_scores.append(score)
                if result.best_dev is None or score > result.best_dev:
                    result.best_dev = score
                    best_snapshot = snapshot_params(model)
                    if checkpoint_path is not None:
                        model.save(checkpoint_path)
                if should_stop(result.dev_scores, cfg.patience):
                    result.stopped_early = True
                    break
    finally:
        if log:
            log.close()
    if best_snapshot is not None:
        restore_params(model, best_snapshot)
    return result


def coverage_phase(model: DenoisingSummarizer, pairs: Sequence, cfg: TrainConfig,
                   epochs: int = 1, log_path=None) -> TrainResult:
    """Fine-tune with the coverage penalty enabled on the document decoder."""
    model.config.use_coverage = True
    phase_cfg = replace(cfg, epochs=epochs, seed=cfg.seed + 1)
    return train_model(model, pairs, phase_cfg, log_path=log_path)
