"""Denoising encoder-decoder summarizer with dual noise streams.

Architecture sketch (one synthetic pair):

    N segment-noisy inputs  --BiLSTM-->  {d_j}  --denoise-->  {d̂_j}  --fuse-->  s0_seg
    N document-noisy inputs --BiLSTM-->  {d_j}  --denoise-->  {d̂_j}  --fuse-->  s0_doc

Two attention decoders run in lockstep, one per stream, each initialized from
its fused encoding. The document-stream decoder may copy source tokens
(generation/copy mixture over a per-instance extended vocabulary); a learned
gate mixes the two decoders' word distributions every step. A small MLP over
the two fused encodings predicts a topic distribution that is trained to
match the topic model's inference on the clean summary.

Per-review encoding d_j is the concatenation of the forward LSTM's last state
and the backward LSTM's first-position state; per-token states h_k
concatenate both directions at k. The denoiser computes the stream mean q and
a tanh-bounded correction c_j = tanh(W_d [d_j; q] + b_d), giving
d̂_j = d_j + c_j. Fusion scores every d̂_j, softmax-normalizes across the
review index j separately per dimension (so s0 = Σ_j d̂_j ⊙ α_j is a
per-dimension convex combination), and sums.

Everything runs one pair at a time; reviews inside a stream are batched with
length masks. Checkpoints pair the binary parameter file with a JSON sidecar
carrying the config and the vocabulary hash.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Vocabulary
from .errors import ConfigError, DataError

SIDECAR_VERSION = 1


@dataclass
class ModelConfig:
    embedding_dim: int = 300
    hidden_dim: int = 256
    vocab_size: int = 50_000
    topic_count: int = 50
    dropout: float = 0.1
    explicit_denoising: bool = True
    partial_copy: bool = True
    discriminator: bool = True
    use_segment_noise: bool = True
    use_document_noise: bool = True
    use_coverage: bool = False

    def validate(self) -> "ModelConfig":
        for name in ("embedding_dim", "hidden_dim", "vocab_size", "topic_count"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (self.use_segment_noise or self.use_document_noise):
            raise ConfigError("at least one noise stream must be enabled")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class PreparedPair:
    """A synthetic pair lowered to ids, ready for the network."""

    seg_ids: list[list[int]]          # N segment-noisy reviews, regular ids
    doc_ids: list[list[int]]          # N document-noisy reviews, regular ids
    source_ext_ids: np.ndarray        # extended id per document-stream token
    ext_tokens: list[str]             # OOV source tokens, in first-seen order
    target_ext_ids: list[int]         # y + EOS, extended ids
    p_z: np.ndarray | None            # topic distribution of y (may be absent)


@dataclass
class EncodedInput:
    h_seg: Tensor | None              # (S_seg, 2H) token states, segment stream
    h_doc: Tensor | None              # (S_doc, 2H) token states, document stream
    s0_seg: Tensor                    # (1, 2H) fused encoding (zeros if ablated)
    s0_doc: Tensor
    source_ext_ids: np.ndarray
    ext_size: int


@dataclass
class DecoderState:
    h_seg: Tensor
    c_seg: Tensor
    h_doc: Tensor
    c_doc: Tensor
    coverage: Tensor | None = None    # (1, S_doc) running attention sum


@dataclass
class StepResult:
    state: DecoderState
    p: Tensor                         # (1, ext_size) mixed word distribution
    gate: Tensor                      # (1, 1) λ
    att_seg: Tensor | None            # (1, S_seg)
    att_doc: Tensor | None            # (1, S_doc)


@dataclass
class ForwardResult:
    distributions: list[Tensor]       # one (1, ext_size) per target position
    q_z: Tensor | None                # (1, K) discriminator output
    att_doc: list[Tensor]             # document attention per step
    coverages: list[Tensor]           # coverage state per step (pre-update)
    ext_size: int


class DenoisingSummarizer:
    """The summarization network; owns parameters and all sub-block math."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, rng,
                 dtype=ad.DEFAULT_DTYPE):
        config.validate()
        if len(vocab) != config.vocab_size:
            raise ConfigError(
                f"vocab size {len(vocab)} does not match config {config.vocab_size}"
            )
        self.config = config
        self.vocab = vocab
        self.dtype = dtype
        e, h, v, k = config.embedding_dim, config.hidden_dim, config.vocab_size, config.topic_count
        d = 2 * h          # review encoding width and decoder state width
        a = 2 * h          # additive-attention inner width
        p: dict[str, Tensor] = {}

        def uni(name, shape):
            p[name] = ad.param(ad.uniform_init(rng, shape, dtype=dtype), name)

        def glorot(name, fan_in, fan_out):
            p[name] = ad.param(ad.glorot_init(rng, fan_in, fan_out, dtype=dtype), name)

        def zeros(name, shape):
            p[name] = ad.param(np.zeros(shape, dtype=dtype), name)

        uni("emb", (v, e))
        for enc in ("enc_fwd", "enc_bwd"):
            uni(f"{enc}_wx", (e, 4 * h))
            uni(f"{enc}_wh", (h, 4 * h))
            zeros(f"{enc}_b", (1, 4 * h))
            p[f"{enc}_b"].data[:, h : 2 * h] = 1.0   # forget-gate bias
        for stream in ("seg", "doc"):
            glorot(f"den_{stream}_w", 2 * d, d)
            zeros(f"den_{stream}_b", (1, d))
            glorot(f"fus_{stream}_w", d, d)
            zeros(f"fus_{stream}_b", (1, d))
            uni(f"dec_{stream}_wx", (e, 4 * d))
            uni(f"dec_{stream}_wh", (d, 4 * d))
            zeros(f"dec_{stream}_b", (1, 4 * d))
            p[f"dec_{stream}_b"].data[:, d : 2 * d] = 1.0
            glorot(f"att_{stream}_enc", d, a)
            glorot(f"att_{stream}_dec", d, a)
            zeros(f"att_{stream}_b", (1, a))
            glorot(f"att_{stream}_v", a, 1)
            glorot(f"out_{stream}_w", 2 * d, d)
            zeros(f"out_{stream}_b", (1, d))
            glorot(f"proj_{stream}_w", d, v)
            zeros(f"proj_{stream}_b", (1, v))
        zeros("att_doc_cov", (1, a))
        glorot("copy_w", 2 * d + e, 1)
        zeros("copy_b", (1, 1))
        glorot("gate_w", e + 2 * d, 1)
        zeros("gate_b", (1, 1))
        glorot("disc_w1", 2 * d, h)
        zeros("disc_b1", (1, h))
        glorot("disc_w2", h, k)
        zeros("disc_b2", (1, k))
        self.params = p

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grads(self) -> None:
        ad.zero_grads(self.params.values())

    # -- low-level blocks -----------------------------------------------------

    def _lstm_step(self, tp: Tape, prefix: str, x: Tensor, h: Tensor, c: Tensor):
        width = h.shape[1]
        gates = tp.add(
            tp.add(tp.matmul(x, self.params[f"{prefix}_wx"]),
                   tp.matmul(h, self.params[f"{prefix}_wh"])),
            self.params[f"{prefix}_b"],
        )
        i = tp.sigmoid(tp.narrow(gates, 1, 0, width))
        f = tp.sigmoid(tp.narrow(gates, 1, width, width))
        g = tp.tanh(tp.narrow(gates, 1, 2 * width, width))
        o = tp.sigmoid(tp.narrow(gates, 1, 3 * width, width))
        c_new = tp.add(tp.mul(f, c), tp.mul(i, g))
        h_new = tp.mul(o, tp.tanh(c_new))
        return h_new, c_new

    def _run_lstm(self, tp: Tape, prefix: str, ids: np.ndarray, mask: np.ndarray,
                  training: bool, rng) -> list[Tensor]:
        """Masked unidirectional pass over (N, L) ids; returns per-step h (N, H)."""
        n, length = ids.shape
        h_dim = self.params[f"{prefix}_wh"].shape[0]
        h = tp.const(np.zeros((n, h_dim), dtype=self.dtype))
        c = tp.const(np.zeros((n, h_dim), dtype=self.dtype))
        states = []
        for t in range(length):
            x = tp.take_rows(self.params["emb"], ids[:, t])
            if training and self.config.dropout > 0:
                x = tp.dropout(x, self.config.dropout, rng)
            h_new, c_new = self._lstm_step(tp, prefix, x, h, c)
            m = tp.const(mask[:, t : t + 1].astype(self.dtype))
            inv = tp.const(1.0 - mask[:, t : t + 1].astype(self.dtype))
            h = tp.add(tp.mul(m, h_new), tp.mul(inv, h))
            c = tp.add(tp.mul(m, c_new), tp.mul(inv, c))
            states.append(h)
        return states

    def encode_stream(self, tp: Tape, id_lists: list[list[int]], training: bool = False,
                      rng=None):
        """BiLSTM-encode N reviews: token states H (Σ lengths, 2H) and d (N, 2H)."""
        if not id_lists:
            raise DataError("cannot encode an empty review stream")
        lengths = [len(ids) for ids in id_lists]
        if min(lengths) == 0:
            raise DataError("cannot encode an empty review")
        n, l_max = len(id_lists), max(lengths)
        ids = np.full((n, l_max), PAD_ID, dtype=np.int64)
        rev = np.full((n, l_max), PAD_ID, dtype=np.int64)
        mask = np.zeros((n, l_max), dtype=np.float64)
        for j, seq in enumerate(id_lists):
            ids[j, : lengths[j]] = seq
            rev[j, : lengths[j]] = seq[::-1]
            mask[j, : lengths[j]] = 1.0
        fwd = self._run_lstm(tp, "enc_fwd", ids, mask, training, rng)
        bwd = self._run_lstm(tp, "enc_bwd", rev, mask, training, rng)
        fcat = tp.concat(fwd, axis=0)      # row (t, j) at t*n + j
        bcat = tp.concat(bwd, axis=0)
        fwd_idx, bwd_idx, last_idx = [], [], []
        for j, length in enumerate(lengths):
            last_idx.append((length - 1) * n + j)
            for pos in range(length):
                fwd_idx.append(pos * n + j)
                bwd_idx.append((length - 1 - pos) * n + j)
        h_states = tp.concat(
            [tp.take_rows(fcat, fwd_idx), tp.take_rows(bcat, bwd_idx)], axis=1
        )
        d = tp.concat(
            [tp.take_rows(fcat, last_idx), tp.take_rows(bcat, last_idx)], axis=1
        )
        return h_states, d

    def encode_review(self, tp: Tape, token_ids: list[int]):
        """Single-review convenience wrapper: H is (L, 2H), d is (1, 2H)."""
        return self.encode_stream(tp, [token_ids])

    def denoise(self, tp: Tape, d: Tensor, stream: str) -> Tensor:
        if not self.config.explicit_denoising:
            return d
        n = d.shape[0]
        q = tp.mean(d, axis=0, keepdims=True)
        q_rows = tp.mul(q, tp.const(np.ones((n, 1), dtype=self.dtype)))
        correction = tp.tanh(
            tp.add(
                tp.matmul(tp.concat([d, q_rows], axis=1), self.params[f"den_{stream}_w"]),
                self.params[f"den_{stream}_b"],
            )
        )
        return tp.add(d, correction)

    def fusion_weights(self, tp: Tape, d_hat: Tensor, stream: str) -> Tensor:
        """Per-dimension mixing weights α (N, 2H); each column sums to 1."""
        scores = tp.add(
            tp.matmul(d_hat, self.params[f"fus_{stream}_w"]),
            self.params[f"fus_{stream}_b"],
        )
        return tp.softmax(scores, axis=0)   # normalized over reviews, per dim

    def fuse(self, tp: Tape, d_hat: Tensor, stream: str) -> Tensor:
        alpha = self.fusion_weights(tp, d_hat, stream)
        return tp.sum(tp.mul(d_hat, alpha), axis=0, keepdims=True)

    def _attention(self, tp: Tape, stream: str, h: Tensor, h_states: Tensor,
                   coverage: Tensor | None):
        """Additive attention of decoder state h over h_states; (1, S) weights."""
        energy_in = tp.add(
            tp.matmul(h_states, self.params[f"att_{stream}_enc"]),
            tp.add(tp.matmul(h, self.params[f"att_{stream}_dec"]),
                   self.params[f"att_{stream}_b"]),
        )
        if coverage is not None:
            energy_in = tp.add(
                energy_in, tp.matmul(tp.transpose(coverage), self.params["att_doc_cov"])
            )
        scores = tp.transpose(tp.matmul(tp.tanh(energy_in), self.params[f"att_{stream}_v"]))
        weights = tp.softmax(scores, axis=-1)
        context = tp.matmul(weights, h_states)
        return weights, context

    def init_state(self, tp: Tape, enc: EncodedInput) -> DecoderState:
        d = 2 * self.config.hidden_dim
        zero = lambda: tp.const(np.zeros((1, d), dtype=self.dtype))
        coverage = None
        if self.config.use_coverage and enc.h_doc is not None:
            coverage = tp.const(np.zeros((1, enc.h_doc.shape[0]), dtype=self.dtype))
        return DecoderState(
            h_seg=enc.s0_seg, c_seg=zero(), h_doc=enc.s0_doc, c_doc=zero(),
            coverage=coverage,
        )

    def decode_step(self, tp: Tape, prev_id: int, state: DecoderState,
                    enc: EncodedInput, training: bool = False, rng=None) -> StepResult:
        cfg = self.config
        v = cfg.vocab_size
        embed_id = prev_id if prev_id < v else UNK_ID
        x = tp.take_rows(self.params["emb"], [embed_id])
        if training and cfg.dropout > 0:
            x = tp.dropout(x, cfg.dropout, rng)

        h_c, c_c = self._lstm_step(tp, "dec_seg", x, state.h_seg, state.c_seg)
        h_d, c_d = self._lstm_step(tp, "dec_doc", x, state.h_doc, state.c_doc)

        att_seg = att_doc = None
        if enc.h_seg is not None:
            att_seg, ctx_c = self._attention(tp, "seg", h_c, enc.h_seg, None)
        else:
            ctx_c = tp.const(np.zeros((1, 2 * cfg.hidden_dim), dtype=self.dtype))
        if enc.h_doc is not None:
            att_doc, ctx_d = self._attention(tp, "doc", h_d, enc.h_doc, state.coverage)
        else:
            ctx_d = tp.const(np.zeros((1, 2 * cfg.hidden_dim), dtype=self.dtype))

        def vocab_dist(stream, h, ctx):
            o = tp.tanh(
                tp.add(tp.matmul(tp.concat([h, ctx], axis=1), self.params[f"out_{stream}_w"]),
                       self.params[f"out_{stream}_b"])
            )
            if training and cfg.dropout > 0:
                o = tp.dropout(o, cfg.dropout, rng)
            logits = tp.add(tp.matmul(o, self.params[f"proj_{stream}_w"]),
                            self.params[f"proj_{stream}_b"])
            return tp.softmax(logits, axis=-1)

        p_seg = vocab_dist("seg", h_c, ctx_c)
        p_doc = vocab_dist("doc", h_d, ctx_d)

        def pad_to_ext(dist):
            if enc.ext_size == v:
                return dist
            filler = tp.const(np.zeros((1, enc.ext_size - v), dtype=self.dtype))
            return tp.concat([dist, filler], axis=1)

        if cfg.partial_copy and att_doc is not None:
            p_gen = tp.sigmoid(
                tp.add(tp.matmul(tp.concat([ctx_d, h_d, x], axis=1), self.params["copy_w"]),
                       self.params["copy_b"])
            )
            gen_part = pad_to_ext(tp.mul(p_doc, p_gen))
            copy_part = tp.scatter_cols(
                tp.mul(att_doc, tp.add_scalar(tp.mul_scalar(p_gen, -1.0), 1.0)),
                enc.source_ext_ids, enc.ext_size,
            )
            p_doc_ext = tp.add(gen_part, copy_part)
        else:
            p_doc_ext = pad_to_ext(p_doc)

        gate = tp.sigmoid(
            tp.add(tp.matmul(tp.concat([x, h_c, h_d], axis=1), self.params["gate_w"]),
                   self.params["gate_b"])
        )
        inv_gate = tp.add_scalar(tp.mul_scalar(gate, -1.0), 1.0)
        p = tp.add(tp.mul(pad_to_ext(p_seg), gate), tp.mul(p_doc_ext, inv_gate))

        new_cov = state.coverage
        if state.coverage is not None and att_doc is not None:
            new_cov = tp.add(state.coverage, att_doc)
        new_state = DecoderState(h_seg=h_c, c_seg=c_c, h_doc=h_d, c_doc=c_d,
                                 coverage=new_cov)
        return StepResult(state=new_state, p=p, gate=gate, att_seg=att_seg, att_doc=att_doc)

    def discriminate(self, tp: Tape, s_seg: Tensor, s_doc: Tensor) -> Tensor:
        hidden = tp.tanh(
            tp.add(tp.matmul(tp.concat([s_seg, s_doc], axis=1), self.params["disc_w1"]),
                   self.params["disc_b1"])
        )
        logits = tp.add(tp.matmul(hidden, self.params["disc_w2"]), self.params["disc_b2"])
        return tp.softmax(logits, axis=-1)

    # -- pair preparation -------------------------------------------------------

    def prepare_pair(self, pair) -> PreparedPair:
        """Lower a SyntheticPair (or compatible object) to id space."""
        seg_ids = [self.vocab.encode(toks) for toks in pair.segment_noisy]
        doc_ids = [self.vocab.encode(toks) for toks in pair.document_noisy]
        ext_tokens: list[str] = []
        ext_index: dict[str, int] = {}
        source_ext: list[int] = []
        for toks in pair.document_noisy:
            for tok in toks:
                wid = self.vocab.lookup(tok)
                if wid == UNK_ID and tok != self.vocab.token(UNK_ID):
                    if tok not in ext_index:
                        ext_index[tok] = self.config.vocab_size + len(ext_tokens)
                        ext_tokens.append(tok)
                    wid = ext_index[tok]
                source_ext.append(wid)
        target: list[int] = []
        for tok in list(pair.summary) + [self.vocab.token(EOS_ID)]:
            wid = self.vocab.lookup(tok)
            if wid == UNK_ID and tok in ext_index:
                wid = ext_index[tok]
            target.append(wid)
        p_z = getattr(pair, "p_z", None)
        return PreparedPair(
            seg_ids=seg_ids, doc_ids=doc_ids,
            source_ext_ids=np.asarray(source_ext, dtype=np.int64),
            ext_tokens=ext_tokens, target_ext_ids=target,
            p_z=None if p_z is None else np.asarray(p_z, dtype=np.float64),
        )

    def prepare_inference(self, reviews: list[list[str]]) -> PreparedPair:
        """At test time the same genuine reviews feed both noise paths."""
        if not reviews:
            raise DataError("summarize needs at least one review")

        class _Stub:
            summary = []
            segment_noisy = reviews
            document_noisy = reviews
            p_z = None

        prepared = self.prepare_pair(_Stub())
        prepared.target_ext_ids = []
        return prepared

    def encode_pair(self, tp: Tape, prepared: PreparedPair, training: bool = False,
                    rng=None) -> EncodedInput:
        cfg = self.config
        d = 2 * cfg.hidden_dim
        zeros = lambda: tp.const(np.zeros((1, d), dtype=self.dtype))
        h_seg = h_doc = None
        s0_seg, s0_doc = zeros(), zeros()
        if cfg.use_segment_noise:
            h_seg, d_seg = self.encode_stream(tp, prepared.seg_ids, training, rng)
            s0_seg = self.fuse(tp, self.denoise(tp, d_seg, "seg"), "seg")
        if cfg.use_document_noise:
            h_doc, d_doc = self.encode_stream(tp, prepared.doc_ids, training, rng)
            s0_doc = self.fuse(tp, self.denoise(tp, d_doc, "doc"), "doc")
        ext_size = cfg.vocab_size + len(prepared.ext_tokens)
        return EncodedInput(
            h_seg=h_seg, h_doc=h_doc, s0_seg=s0_seg, s0_doc=s0_doc,
            source_ext_ids=prepared.source_ext_ids, ext_size=ext_size,
        )

    def forward(self, tp: Tape, prepared: PreparedPair, training: bool = False,
                rng=None) -> ForwardResult:
        """Teacher-forced pass over the pair's target; returns per-step p(w_t)."""
        enc = self.encode_pair(tp, prepared, training, rng)
        state = self.init_state(tp, enc)
        dists, att_doc, coverages = [], [], []
        prev = BOS_ID
        for target_id in prepared.target_ext_ids:
            coverages.append(state.coverage)
            step = self.decode_step(tp, prev, state, enc, training, rng)
            dists.append(step.p)
            att_doc.append(step.att_doc)
            state = step.state
            prev = target_id
        q_z = None
        if self.config.discriminator:
            q_z = self.discriminate(tp, enc.s0_seg, enc.s0_doc)
        return ForwardResult(
            distributions=dists, q_z=q_z, att_doc=att_doc, coverages=coverages,
            ext_size=enc.ext_size,
        )

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        path = str(path)
        ad.save_arrays(path, {k: t.data for k, t in self.params.items()})
        sidecar = {
            "version": SIDECAR_VERSION,
            "config": self.config.to_dict(),
            "vocab_sha256": self.vocab.content_hash().hex(),
        }
        with open(path + ".json", "w", encoding="utf-8") as f:
            json.dump(sidecar, f, sort_keys=True, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path, vocab: Vocabulary, dtype=ad.DEFAULT_DTYPE) -> "DenoisingSummarizer":
        path = str(path)
        try:
            with open(path + ".json", "r", encoding="utf-8") as f:
                sidecar = json.load(f)
        except FileNotFoundError:
            raise DataError(f"missing checkpoint sidecar {path + '.json'}") from None
        if sidecar.get("version") != SIDECAR_VERSION:
            raise DataError("unsupported checkpoint sidecar version")
        if sidecar["vocab_sha256"] != vocab.content_hash().hex():
            raise DataError("checkpoint was trained with a different vocabulary")
        config = ModelConfig.from_dict(sidecar["config"])
        model = cls(config, vocab, np.random.default_rng(0), dtype=dtype)
        arrays = ad.load_arrays(path)
        if set(arrays) != set(model.params):
            raise DataError("checkpoint parameter names do not match the model")
        for name, arr in arrays.items():
            if arr.shape != model.params[name].data.shape:
                raise DataError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{arr.shape} vs {model.params[name].data.shape}"
                )
            model.params[name].data = arr.astype(dtype)
        return model
