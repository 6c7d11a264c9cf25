import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from opsum.corpus import Corpus, Review, build_vocab
from opsum.errors import ConfigError, DataError
from opsum.topics import LdaModel, infer_topics, train_lda

A_WORDS = [f"alpha{i}" for i in range(12)]
B_WORDS = [f"beta{i}" for i in range(12)]


def two_topic_corpus(n_docs=40, doc_len=15, seed=0):
    """Documents drawn from one of two disjoint vocabularies."""
    rng = np.random.default_rng(seed)
    reviews, labels = [], []
    for i in range(n_docs):
        pool = A_WORDS if i % 2 == 0 else B_WORDS
        toks = rng.choice(pool, size=doc_len)
        reviews.append(Review("p", f"r{i}", " ".join(toks)))
        labels.append(i % 2)
    return Corpus(reviews), labels


def purity(pred, truth, k):
    confusion = np.zeros((k, k), dtype=int)
    for p, t in zip(pred, truth):
        confusion[p, t] += 1
    rows, cols = linear_sum_assignment(-confusion)
    return confusion[rows, cols].sum() / len(pred)


@pytest.fixture(scope="module")
def fitted():
    # alpha pinned to 1.0: the 50/K default targets K around 50 and would
    # smooth a 2-topic model into near-uniform document mixtures
    corpus, labels = two_topic_corpus()
    vocab = build_vocab(corpus, max_size=1000)
    model = train_lda(
        corpus, vocab, k=2, iterations=30, rng=np.random.default_rng(11), alpha=1.0
    )
    return corpus, labels, vocab, model


class TestTraining:
    def test_count_preservation(self, fitted):
        corpus, _, vocab, model = fitted
        total = sum(len(r.tokens) for r in corpus.reviews)  # all tokens known here
        assert model.assigned_tokens() == total
        assert int(model.topic_word.sum()) == total
        assert int(model._doc_topic.sum()) == total

    def test_counts_nonnegative_after_sweeps(self, fitted):
        _, _, _, model = fitted
        assert (model.topic_word >= 0).all()
        assert (model.topic_total >= 0).all()

    def test_two_topic_purity(self, fitted):
        _, labels, _, model = fitted
        pred = np.argmax(model._doc_topic, axis=1)
        assert purity(pred, labels, 2) >= 0.9

    def test_phi_rows_normalized(self, fitted):
        _, _, _, model = fitted
        np.testing.assert_allclose(model.phi.sum(axis=1), 1.0, atol=1e-6)

    def test_k_too_small(self, fitted):
        _, _, vocab, _ = fitted
        with pytest.raises(ConfigError):
            LdaModel(vocab, k=1)

    def test_alpha_default_scales_with_k(self, fitted):
        _, _, vocab, _ = fitted
        assert LdaModel(vocab, k=10).alpha == pytest.approx(5.0)
        assert LdaModel(vocab, k=50).alpha == pytest.approx(1.0)

    def test_deterministic_given_seed(self):
        corpus, _ = two_topic_corpus(n_docs=10, doc_len=8)
        vocab = build_vocab(corpus, max_size=1000)
        m1 = train_lda(corpus, vocab, k=2, iterations=5, rng=np.random.default_rng(3))
        m2 = train_lda(corpus, vocab, k=2, iterations=5, rng=np.random.default_rng(3))
        assert (m1.topic_word == m2.topic_word).all()
        assert m1.ll_history == m2.ll_history


class TestInference:
    def test_sums_to_one(self, fitted):
        _, _, _, model = fitted
        theta = infer_topics(model, A_WORDS[:6], 20, np.random.default_rng(0))
        assert np.isclose(theta.sum(), 1.0, atol=1e-6)
        assert (theta >= 0).all()

    def test_pure_document_concentrates(self, fitted):
        _, labels, _, model = fitted
        # figure out which topic matched vocabulary A during training
        pred = np.argmax(model._doc_topic, axis=1)
        topic_a = int(np.round(np.mean(pred[np.array(labels) == 0])))
        theta = infer_topics(model, A_WORDS * 3, 30, np.random.default_rng(5))
        assert theta[topic_a] >= 0.8

    def test_empty_document_uniform(self, fitted):
        _, _, _, model = fitted
        np.testing.assert_allclose(
            infer_topics(model, [], 10, np.random.default_rng(0)), 0.5
        )

    def test_unknown_tokens_uniform(self, fitted):
        _, _, _, model = fitted
        theta = infer_topics(model, ["zzz", "qqq"], 10, np.random.default_rng(0))
        np.testing.assert_allclose(theta, 0.5)


class TestLikelihoodTrend:
    def test_heldout_loglik_improves_in_windows(self):
        corpus, _ = two_topic_corpus(n_docs=30, doc_len=12, seed=4)
        held_corpus, _ = two_topic_corpus(n_docs=10, doc_len=12, seed=99)
        held = [r.tokens for r in held_corpus.reviews]
        vocab = build_vocab(corpus, max_size=1000)
        rng = np.random.default_rng(21)
        model = train_lda(corpus, vocab, k=2, iterations=0, rng=rng, alpha=1.0)
        scores = [model.heldout_loglik(held, 10, np.random.default_rng(1))]
        for _ in range(29):
            model.sweep(rng)
            scores.append(model.heldout_loglik(held, 10, np.random.default_rng(1)))
        windows = [np.mean(scores[i : i + 10]) for i in (0, 10, 20)]
        assert windows[1] >= windows[0]
        assert windows[2] >= windows[1]

    def test_joint_loglik_history_recorded(self, fitted):
        _, _, _, model = fitted
        assert len(model.ll_history) == 30
        assert all(np.isfinite(v) for v in model.ll_history)


class TestSerialization:
    def test_roundtrip(self, tmp_path, fitted):
        _, _, vocab, model = fitted
        path = tmp_path / "lda.bin"
        model.save(path)
        model2 = LdaModel.load(path, vocab)
        np.testing.assert_allclose(model.phi, model2.phi)
        theta1 = model.infer(A_WORDS[:5], 10, np.random.default_rng(2))
        theta2 = model2.infer(A_WORDS[:5], 10, np.random.default_rng(2))
        np.testing.assert_allclose(theta1, theta2)

    def test_vocab_mismatch(self, tmp_path, fitted):
        _, _, vocab, model = fitted
        path = tmp_path / "lda.bin"
        model.save(path)
        other = build_vocab(Corpus([Review("p", "r", "different words here")]), max_size=100)
        with pytest.raises(DataError):
            LdaModel.load(path, other)

    def test_bad_magic(self, tmp_path, fitted):
        _, _, vocab, _ = fitted
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 100)
        with pytest.raises(DataError):
            LdaModel.load(path, vocab)

    def test_top_words(self, fitted):
        _, _, _, model = fitted
        dump = model.top_words(5)
        assert dump.startswith("topic 0:")
        assert "topic 1:" in dump
        # disjoint training vocabularies -> each topic's head words come from one pool
        lines = dump.strip().splitlines()
        for line in lines:
            words = line.split(": ")[1].split()
            pools = {w[:4] for w in words}
            assert len(pools) == 1
