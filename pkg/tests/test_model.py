import numpy as np
import pytest

from opsum.autodiff import Tape, gradcheck, param
from opsum.corpus import EOS_ID, UNK_ID, Corpus, Review, build_vocab
from opsum.errors import ConfigError, DataError
from opsum.model import DenoisingSummarizer, ModelConfig

BLOCK_TOL = 1e-6


def tiny_vocab(words=("the", "food", "was", "great", "bad", "here", "soup", "stale")):
    corpus = Corpus([Review("p", "r0", " ".join(words))])
    return build_vocab(corpus, max_size=4 + len(words))


def tiny_model(vocab, seed=0, dtype=np.float64, **overrides):
    cfg = ModelConfig(
        embedding_dim=5,
        hidden_dim=4,
        vocab_size=len(vocab),
        topic_count=3,
        dropout=0.0,
        **overrides,
    )
    return DenoisingSummarizer(cfg, vocab, np.random.default_rng(seed), dtype=dtype)


class FakePair:
    def __init__(self, summary, seg, doc, p_z=None):
        self.summary = summary
        self.segment_noisy = seg
        self.document_noisy = doc
        self.p_z = p_z


def std_pair():
    return FakePair(
        summary=["the", "food", "was", "great"],
        seg=[["the", "soup", "was"], ["great", "food", "here"]],
        doc=[["the", "food", "was", "stale"], ["was", "great", "here"]],
        p_z=np.array([0.6, 0.3, 0.1]),
    )


class TestConfig:
    def test_defaults_match_reference_scale(self):
        cfg = ModelConfig()
        assert cfg.embedding_dim == 300
        assert cfg.hidden_dim == 256
        assert cfg.vocab_size == 50_000
        assert cfg.dropout == 0.1

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ConfigError):
            ModelConfig(hidden_dim=0).validate()

    def test_rejects_no_streams(self):
        with pytest.raises(ConfigError):
            ModelConfig(use_segment_noise=False, use_document_noise=False).validate()

    def test_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"hidden_dim": 8, "bogus": 1})

    def test_vocab_size_must_match(self):
        vocab = tiny_vocab()
        with pytest.raises(ConfigError):
            DenoisingSummarizer(
                ModelConfig(vocab_size=999), vocab, np.random.default_rng(0)
            )


class TestEncoder:
    def test_shapes(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab)
        tp = Tape()
        h, d = model.encode_stream(tp, [vocab.encode(["the", "food", "was"])])
        assert h.shape == (3, 8)   # L x 2*hidden
        assert d.shape == (1, 8)

    def test_single_token_review(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab)
        tp = Tape()
        h, d = model.encode_review(tp, vocab.encode(["great"]))
        assert h.shape == (1, 8)
        np.testing.assert_allclose(h.data, d.data)   # d_j = h_1 when L = 1

    def test_ragged_stream_matches_solo_encoding(self):
        # masking must make batch encoding identical to one-by-one encoding
        vocab = tiny_vocab()
        model = tiny_model(vocab)
        seqs = [vocab.encode(["the", "food"]), vocab.encode(["great", "soup", "was", "bad"])]
        h_batch, d_batch = model.encode_stream(Tape(), seqs)
        h0, d0 = model.encode_review(Tape(), seqs[0])
        h1, d1 = model.encode_review(Tape(), seqs[1])
        np.testing.assert_allclose(h_batch.data[:2], h0.data, atol=1e-12)
        np.testing.assert_allclose(h_batch.data[2:], h1.data, atol=1e-12)
        np.testing.assert_allclose(d_batch.data[0], d0.data[0], atol=1e-12)
        np.testing.assert_allclose(d_batch.data[1], d1.data[0], atol=1e-12)

    def test_empty_review_rejected(self):
        model = tiny_model(tiny_vocab())
        with pytest.raises(DataError):
            model.encode_stream(Tape(), [[]])
        with pytest.raises(DataError):
            model.encode_stream(Tape(), [])

    def test_gradcheck_three_tokens(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab)
        ids = vocab.encode(["the", "food", "was"])
        weights_h = np.random.default_rng(1).standard_normal((3, 8))
        weights_d = np.random.default_rng(2).standard_normal((1, 8))

        def fn(tp):
            h, d = model.encode_stream(tp, [ids])
            return tp.add(
                tp.sum(tp.mul(h, tp.const(weights_h))),
                tp.sum(tp.mul(d, tp.const(weights_d))),
            )

        names = ["emb"] + [
            f"enc_{d}_{p}" for d in ("fwd", "bwd") for p in ("wx", "wh", "b")
        ]
        err = gradcheck(fn, [model.params[n] for n in names])
        assert err < BLOCK_TOL


class TestDenoiser:
    def test_correction_strictly_bounded(self):
        model = tiny_model(tiny_vocab(), seed=3)
        d = param(np.random.default_rng(0).standard_normal((4, 8)), "d")
        out = model.denoise(Tape(), d, "seg")
        assert (np.abs(out.data - d.data) < 1.0).all()

    def test_zero_weights_identity(self):
        model = tiny_model(tiny_vocab())
        model.params["den_seg_w"].data[:] = 0.0
        model.params["den_seg_b"].data[:] = 0.0
        d = param(np.random.default_rng(0).standard_normal((2, 8)), "d")
        out = model.denoise(Tape(), d, "seg")
        np.testing.assert_allclose(out.data, d.data)

    def test_ablated_is_identity(self):
        model = tiny_model(tiny_vocab(), explicit_denoising=False)
        d = param(np.random.default_rng(0).standard_normal((2, 8)), "d")
        assert model.denoise(Tape(), d, "seg") is d

    def test_gradcheck(self):
        model = tiny_model(tiny_vocab())
        d = param(np.random.default_rng(5).standard_normal((3, 8)), "d")
        w = np.random.default_rng(6).standard_normal((3, 8))

        def fn(tp):
            return tp.sum(tp.mul(model.denoise(tp, d, "doc"), tp.const(w)))

        err = gradcheck(fn, [d, model.params["den_doc_w"], model.params["den_doc_b"]])
        assert err < BLOCK_TOL


class TestFusion:
    def test_weights_columns_sum_to_one(self):
        model = tiny_model(tiny_vocab(), seed=7)
        d_hat = param(np.random.default_rng(1).standard_normal((5, 8)), "dh")
        alpha = model.fusion_weights(Tape(), d_hat, "seg")
        np.testing.assert_allclose(alpha.data.sum(axis=0), 1.0, atol=1e-6)

    def test_single_review_passthrough(self):
        model = tiny_model(tiny_vocab())
        d_hat = param(np.random.default_rng(2).standard_normal((1, 8)), "dh")
        alpha = model.fusion_weights(Tape(), d_hat, "seg")
        np.testing.assert_allclose(alpha.data, 1.0)
        s0 = model.fuse(Tape(), d_hat, "seg")
        np.testing.assert_allclose(s0.data, d_hat.data)

    def test_identical_encodings_fixed_point(self):
        model = tiny_model(tiny_vocab())
        row = np.random.default_rng(3).standard_normal((1, 8))
        d_hat = param(np.repeat(row, 4, axis=0), "dh")
        s0 = model.fuse(Tape(), d_hat, "seg")
        np.testing.assert_allclose(s0.data, row, atol=1e-12)

    def test_gradcheck(self):
        model = tiny_model(tiny_vocab())
        d_hat = param(np.random.default_rng(8).standard_normal((3, 8)), "dh")
        w = np.random.default_rng(9).standard_normal((1, 8))

        def fn(tp):
            return tp.sum(tp.mul(model.fuse(tp, d_hat, "doc"), tp.const(w)))

        err = gradcheck(fn, [d_hat, model.params["fus_doc_w"], model.params["fus_doc_b"]])
        assert err < BLOCK_TOL


def _encoded(model, pair, tp):
    return model.encode_pair(tp, model.prepare_pair(pair))


class TestDecodeStep:
    def test_distributions_valid(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab, seed=11)
        tp = Tape()
        prep = model.prepare_pair(std_pair())
        enc = model.encode_pair(tp, prep)
        state = model.init_state(tp, enc)
        step = model.decode_step(tp, 2, state, enc)
        assert np.isclose(step.att_seg.data.sum(), 1.0, atol=1e-6)
        assert np.isclose(step.att_doc.data.sum(), 1.0, atol=1e-6)
        assert np.isclose(step.p.data.sum(), 1.0, atol=1e-5)
        assert (step.p.data >= 0).all()
        assert 0.0 < step.gate.item() < 1.0

    def test_extended_vocabulary_gets_copy_mass(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab, seed=1)
        pair = FakePair(
            summary=["the", "weird"],
            seg=[["the", "food"]],
            doc=[["the", "weirdest", "weird", "food"]],
        )
        prep = model.prepare_pair(pair)
        assert prep.ext_tokens == ["weirdest", "weird"]
        tp = Tape()
        enc = model.encode_pair(tp, prep)
        step = model.decode_step(tp, 2, model.init_state(tp, enc), enc)
        assert step.p.shape == (1, len(vocab) + 2)
        assert (step.p.data[0, len(vocab):] > 0).all()   # copy mass on OOV slots

    def test_no_copy_when_ablated(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab, partial_copy=False)
        pair = FakePair(["the"], [["the", "food"]], [["weird", "food"]])
        prep = model.prepare_pair(pair)
        tp = Tape()
        enc = model.encode_pair(tp, prep)
        step = model.decode_step(tp, 2, model.init_state(tp, enc), enc)
        np.testing.assert_allclose(step.p.data[0, len(vocab):], 0.0)
        assert np.isclose(step.p.data.sum(), 1.0, atol=1e-5)

    def test_gradcheck(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab, seed=13)
        prep = model.prepare_pair(std_pair())
        w = None

        def fn(tp):
            nonlocal w
            enc = model.encode_pair(tp, prep)
            step = model.decode_step(tp, 2, model.init_state(tp, enc), enc)
            if w is None:
                w = np.random.default_rng(4).standard_normal(step.p.shape)
            return tp.add(tp.sum(tp.mul(step.p, tp.const(w))), tp.sum(step.gate))

        names = [
            "dec_seg_wx", "dec_doc_wh", "att_seg_v", "att_doc_enc", "out_doc_w",
            "proj_seg_w", "copy_w", "copy_b", "gate_w", "gate_b",
        ]
        err = gradcheck(fn, [model.params[n] for n in names])
        assert err < BLOCK_TOL


class TestDiscriminator:
    def test_normalized(self):
        model = tiny_model(tiny_vocab(), seed=17)
        s_c = param(np.random.default_rng(0).standard_normal((1, 8)), "sc")
        s_d = param(np.random.default_rng(1).standard_normal((1, 8)), "sd")
        q = model.discriminate(Tape(), s_c, s_d)
        assert q.shape == (1, 3)
        assert np.isclose(q.data.sum(), 1.0, atol=1e-6)

    def test_zero_weights_uniform(self):
        model = tiny_model(tiny_vocab())
        for name in ("disc_w1", "disc_b1", "disc_w2", "disc_b2"):
            model.params[name].data[:] = 0.0
        s = param(np.ones((1, 8)), "s")
        q = model.discriminate(Tape(), s, s)
        np.testing.assert_allclose(q.data, 1.0 / 3.0)

    def test_gradcheck(self):
        model = tiny_model(tiny_vocab())
        s_c = param(np.random.default_rng(2).standard_normal((1, 8)), "sc")
        s_d = param(np.random.default_rng(3).standard_normal((1, 8)), "sd")
        w = np.random.default_rng(4).standard_normal((1, 3))

        def fn(tp):
            return tp.sum(tp.mul(model.discriminate(tp, s_c, s_d), tp.const(w)))

        names = ("disc_w1", "disc_b1", "disc_w2", "disc_b2")
        err = gradcheck(fn, [s_c, s_d] + [model.params[n] for n in names])
        assert err < BLOCK_TOL


class TestForward:
    def test_one_distribution_per_target_token(self):
        model = tiny_model(tiny_vocab(), seed=19)
        prep = model.prepare_pair(std_pair())
        res = model.forward(Tape(), prep)
        assert len(res.distributions) == len(prep.target_ext_ids) == 5  # y + EOS
        assert prep.target_ext_ids[-1] == EOS_ID

    def test_stream_ablation_zeroes_encoding(self):
        model = tiny_model(tiny_vocab(), use_segment_noise=False)
        prep = model.prepare_pair(std_pair())
        tp = Tape()
        enc = model.encode_pair(tp, prep)
        assert enc.h_seg is None
        np.testing.assert_allclose(enc.s0_seg.data, 0.0)
        res = model.forward(Tape(), prep)
        assert all(np.isclose(d.data.sum(), 1.0, atol=1e-5) for d in res.distributions)

    def test_discriminator_ablation(self):
        model = tiny_model(tiny_vocab(), discriminator=False)
        res = model.forward(Tape(), model.prepare_pair(std_pair()))
        assert res.q_z is None

    def test_permuting_reviews_leaves_distributions_unchanged(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab, seed=23)
        pair = std_pair()
        flipped = FakePair(
            pair.summary, list(reversed(pair.segment_noisy)),
            list(reversed(pair.document_noisy)), pair.p_z,
        )
        res_a = model.forward(Tape(), model.prepare_pair(pair))
        res_b = model.forward(Tape(), model.prepare_pair(flipped))
        for da, db in zip(res_a.distributions, res_b.distributions):
            # extended ids may differ in order; compare regular-vocab slice
            np.testing.assert_allclose(
                da.data[0, : len(vocab)], db.data[0, : len(vocab)], atol=1e-9
            )
        np.testing.assert_allclose(res_a.q_z.data, res_b.q_z.data, atol=1e-9)

    def test_distribution_validity_randomized(self):
        vocab = tiny_vocab()
        for seed in range(10):
            model = tiny_model(vocab, seed=seed)
            rng = np.random.default_rng(seed + 100)
            words = [w for w in vocab.id_to_token[4:]]
            rand_rev = lambda: list(rng.choice(words, size=int(rng.integers(2, 5))))
            pair = FakePair(
                summary=rand_rev(),
                seg=[rand_rev() for _ in range(int(rng.integers(1, 4)))],
                doc=[rand_rev() for _ in range(int(rng.integers(1, 4)))],
            )
            res = model.forward(Tape(), model.prepare_pair(pair))
            for dist in res.distributions:
                assert np.isclose(dist.data.sum(), 1.0, atol=1e-5)
                assert (dist.data >= 0).all()
            assert np.isclose(res.q_z.data.sum(), 1.0, atol=1e-6)

    def test_teacher_forcing_consumes_extended_targets(self):
        vocab = tiny_vocab()
        model = tiny_model(vocab)
        pair = FakePair(
            summary=["weird", "food"],
            seg=[["the", "food"]],
            doc=[["weird", "food"]],
        )
        prep = model.prepare_pair(pair)
        assert prep.target_ext_ids[0] == len(vocab)   # copied OOV id
        res = model.forward(Tape(), prep)             # must not crash embedding
        assert len(res.distributions) == 3


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        vocab = tiny_vocab()
        model = tiny_model(vocab, seed=29, dtype=np.float32)
        path = tmp_path / "model.ck"
        model.save(path)
        loaded = DenoisingSummarizer.load(path, vocab, dtype=np.float32)
        assert loaded.config == model.config
        for name, t in model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, t.data)

    def test_vocab_hash_mismatch(self, tmp_path):
        vocab = tiny_vocab()
        model = tiny_model(vocab)
        path = tmp_path / "model.ck"
        model.save(path)
        other = tiny_vocab(words=("totally", "different", "words", "now"))
        with pytest.raises(DataError):
            DenoisingSummarizer.load(path, other)

    def test_missing_sidecar(self, tmp_path):
        vocab = tiny_vocab()
        model = tiny_model(vocab)
        path = tmp_path / "model.ck"
        model.save(path)
        (tmp_path / "model.ck.json").unlink()
        with pytest.raises(DataError):
            DenoisingSummarizer.load(path, vocab)
