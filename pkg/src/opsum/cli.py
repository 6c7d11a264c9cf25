"""Command-line pipeline: ingest -> train-lm/train-lda -> synthesize -> train
-> summarize -> evaluate, plus gradcheck and ablation presets.

Every subcommand validates its upstream artifacts, writes its outputs under
the configured workdir, and records a manifest with config hash + seed so
reruns are verifiable.  Exit codes: 0 success, 1 usage/config, 2 data,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import artifacts as af
from .autodiff import gradcheck as _gradcheck_fn
from .chunking import build_chunk_inventory
from .config import PipelineConfig
from .corpus import Corpus, IdfTable, Review, Vocabulary, build_vocab, compute_idf, tokenize
from .decoding import beam_search, ids_to_tokens, summarize
from .errors import ConfigError, DataError, NumericError, OpsumError
from .langmodel import BiLM, train_bilm
from .metrics import MetricReport, rouge, score_corpus
from .model import DenoisingSummarizer, ModelConfig
from .noising import NoiseDeps, build_synthetic_dataset, load_dataset, save_dataset
from .topics import LdaModel, train_lda
from .toycorpus import generate_toy_dataset
from .training import coverage_phase, pair_loss, pretrain_lm, train_model

GRADCHECK_THRESHOLD = 1e-5

ABLATION_PRESETS = {
    "full": {},
    "no-segment-noise": {"use_segment_noise": False},
    "no-document-noise": {"use_document_noise": False},
    "no-denoising": {"explicit_denoising": False},
    "no-partial-copy": {"partial_copy": False},
    "no-discriminator": {"discriminator": False},
}


# -- shared loading helpers -------------------------------------------------------


def _load_corpus(cfg: PipelineConfig) -> Corpus:
    path = cfg.artifact("corpus")
    af.require_artifact(path, "ingest")
    return Corpus.load(path)


def _load_vocab(cfg: PipelineConfig) -> Vocabulary:
    path = cfg.artifact("vocab")
    af.require_artifact(path, "ingest")
    return Vocabulary.load(path)


def _load_eval_products(cfg: PipelineConfig) -> list[str] | None:
    path = cfg.artifact("eval_products")
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _training_corpus(cfg: PipelineConfig, corpus: Corpus) -> Corpus:
    """Drop held-out products so synthetic pairs never see them."""
    held = _load_eval_products(cfg)
    if not held:
        return corpus
    held_set = set(held)
    return Corpus([r for r in corpus.reviews if r.product_id not in held_set])


# -- pipeline steps ----------------------------------------------------------------


def run_ingest(cfg: PipelineConfig, reviews_path=None, toy: bool = False,
               toy_products: int = 50, toy_reviews: int = 20,
               toy_tidy_fraction: float = 0.4) -> Corpus:
    os.makedirs(cfg.workdir, exist_ok=True)
    if toy == bool(reviews_path):
        raise ConfigError("ingest needs exactly one of --reviews PATH or --toy")
    inputs = {}
    if toy:
        data = generate_toy_dataset(products=toy_products,
                                    reviews_per_product=toy_reviews, seed=cfg.seed,
                                    tidy_fraction=toy_tidy_fraction)
        corpus = data.corpus
        refs_path = cfg.artifact("references")
        with open(refs_path, "w", encoding="utf-8") as f:
            for pid in data.eval_products:
                f.write(json.dumps({"product_id": pid,
                                    "reference": data.references[pid]}) + "\n")
        split_path = cfg.artifact("eval_products")
        with open(split_path, "w", encoding="utf-8") as f:
            json.dump(data.eval_products, f)
            f.write("\n")
        af.write_manifest(refs_path, "references", cfg.to_dict(), cfg.seed)
        af.write_manifest(split_path, "eval-products", cfg.to_dict(), cfg.seed)
    else:
        corpus = Corpus.load(reviews_path)
        inputs["raw_reviews"] = reviews_path

    corpus_path = cfg.artifact("corpus")
    corpus.save(corpus_path)
    vocab = build_vocab(corpus, max_size=cfg.vocab_size)
    vocab.save(cfg.artifact("vocab"))
    compute_idf(corpus).save(cfg.artifact("idf"))
    extra = {"reviews": len(corpus), "products": len(corpus.by_product)}
    if toy:
        extra["toy"] = {"products": toy_products, "reviews": toy_reviews,
                        "tidy_fraction": toy_tidy_fraction}
    af.write_manifest(corpus_path, "corpus", cfg.to_dict(), cfg.seed, inputs,
                      extra=extra)
    af.write_manifest(cfg.artifact("vocab"), "vocab", cfg.to_dict(), cfg.seed,
                      {"corpus": corpus_path}, extra={"size": len(vocab)})
    af.write_manifest(cfg.artifact("idf"), "idf", cfg.to_dict(), cfg.seed,
                      {"corpus": corpus_path})
    return corpus


def run_train_lm(cfg: PipelineConfig) -> BiLM:
    corpus, vocab = _load_corpus(cfg), _load_vocab(cfg)
    bilm = train_bilm(corpus, vocab, order=cfg.lm_order)
    path = cfg.artifact("bilm")
    bilm.save(path)
    af.write_manifest(path, "bilm", cfg.to_dict(), cfg.seed,
                      {"corpus": cfg.artifact("corpus"), "vocab": cfg.artifact("vocab")})
    return bilm


def run_train_lda(cfg: PipelineConfig) -> LdaModel:
    corpus, vocab = _load_corpus(cfg), _load_vocab(cfg)
    lda = train_lda(corpus, vocab, cfg.topic_count, cfg.lda_iterations,
                    np.random.default_rng(cfg.seed), alpha=cfg.lda_alpha)
    path = cfg.artifact("lda")
    lda.save(path)
    af.write_manifest(path, "lda", cfg.to_dict(), cfg.seed,
                      {"corpus": cfg.artifact("corpus"), "vocab": cfg.artifact("vocab")},
                      extra={"topics": lda.k})
    return lda


def run_synthesize(cfg: PipelineConfig) -> list:
    corpus, vocab = _load_corpus(cfg), _load_vocab(cfg)
    bilm_path = cfg.artifact("bilm")
    af.require_artifact(bilm_path, "train-lm")
    idf_path = cfg.artifact("idf")
    af.require_artifact(idf_path, "ingest")
    bilm = BiLM.load(bilm_path, vocab)
    idf = IdfTable.load(idf_path)

    lda = None
    inputs = {"corpus": cfg.artifact("corpus"), "vocab": cfg.artifact("vocab"),
              "bilm": bilm_path, "idf": idf_path}
    lda_path = cfg.artifact("lda")
    if os.path.exists(lda_path):
        lda = LdaModel.load(lda_path, vocab)
        inputs["lda"] = lda_path
    elif cfg.model.discriminator:
        raise DataError(
            f"missing artifact {lda_path}; the discriminator needs topic "
            f"mixtures — run `opsum train-lda` first (or disable it in config)"
        )

    train_corpus = _training_corpus(cfg, corpus)
    deps = NoiseDeps(corpus=train_corpus, bilm=bilm,
                     inventory=build_chunk_inventory(train_corpus), idf=idf,
                     lda=lda, lda_iterations=cfg.lda_infer_iterations)
    pairs = build_synthetic_dataset(train_corpus, deps, cfg.noise, cfg.filter,
                                    cfg.pair_count, master_seed=cfg.seed)
    path = cfg.artifact("pairs")
    save_dataset(path, pairs)
    af.write_manifest(path, "pairs", cfg.to_dict(), cfg.seed, inputs,
                      extra={"count": len(pairs)})
    return pairs


def _make_dev_scorer(dev_pairs, max_len: int):
    def scorer(model: DenoisingSummarizer) -> float:
        scores = []
        for pair in dev_pairs:
            prepared = model.prepare_pair(pair)
            ids = beam_search(model, prepared, beam_size=1, max_len=max_len)
            tokens = ids_to_tokens(model.vocab, prepared.ext_tokens, ids)
            scores.append(rouge(tokens, pair.summary, "rouge-l").f1)
        return float(np.mean(scores))
    return scorer


def run_train(cfg: PipelineConfig, model_overrides: dict | None = None,
              model_path=None, log_path=None):
    pairs_path = cfg.artifact("pairs")
    af.require_artifact(pairs_path, "synthesize")
    vocab = _load_vocab(cfg)
    pairs = load_dataset(pairs_path)
    if not pairs:
        raise DataError(f"{pairs_path} holds no pairs")

    model_cfg = cfg.model
    if model_overrides:
        model_cfg = replace(model_cfg, **model_overrides)
    model_cfg = replace(model_cfg, vocab_size=len(vocab))
    if model_cfg.discriminator:
        if pairs[0].p_z is None:
            raise ConfigError(
                "pairs carry no topic mixtures; rerun `opsum synthesize` after "
                "`opsum train-lda`, or disable the discriminator"
            )
        model_cfg = replace(model_cfg, topic_count=len(pairs[0].p_z))

    model = DenoisingSummarizer(model_cfg, vocab, np.random.default_rng(cfg.seed))
    if cfg.pretrain_epochs > 0:
        report = pretrain_lm(model, _load_corpus(cfg), epochs=cfg.pretrain_epochs,
                             learning_rate=cfg.train.learning_rate, seed=cfg.seed)
        print(f"pretrained LM: held-out perplexity {report.perplexity:.1f} "
              f"(uniform {report.uniform_perplexity:.0f})")

    order = np.random.default_rng(cfg.seed).permutation(len(pairs))
    n_dev = min(cfg.dev_limit, int(cfg.dev_fraction * len(pairs)))
    dev = [pairs[i] for i in order[:n_dev]]
    train_pairs = [pairs[i] for i in order[n_dev:]]
    scorer = _make_dev_scorer(dev, cfg.max_len) if dev else None

    model_path = model_path or cfg.artifact("model")
    log_path = log_path or cfg.artifact("train_log")
    result = train_model(model, train_pairs, cfg.train, dev_scorer=scorer,
                         log_path=log_path)
    if cfg.train.coverage_phase:
        coverage_phase(model, train_pairs, cfg.train)
    model.save(model_path)
    af.write_manifest(model_path, "model", cfg.to_dict(), cfg.seed,
                      {"pairs": pairs_path, "vocab": cfg.artifact("vocab")},
                      extra={"steps": result.steps,
                             "epoch_losses": [round(x, 6) for x in result.epoch_losses],
                             "best_dev": result.best_dev})
    return model, result


def _review_groups(cfg: PipelineConfig, groups_path=None) -> list[tuple[str, list[list[str]]]]:
    if groups_path:
        groups = []
        with open(groups_path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                record = json.loads(line)
                if "product_id" not in record or "reviews" not in record:
                    raise DataError(f"{groups_path}:{lineno}: need product_id and reviews")
                groups.append((record["product_id"],
                               [tokenize(t) for t in record["reviews"]]))
        return groups
    corpus = _load_corpus(cfg)
    products = _load_eval_products(cfg) or sorted(corpus.by_product)
    groups = []
    for pid in products:
        reviews = corpus.by_product.get(pid)
        if not reviews:
            raise DataError(f"product {pid!r} not present in corpus")
        groups.append((pid, [list(r.tokens) for r in reviews]))
    return groups


def run_summarize(cfg: PipelineConfig, model_path=None, out_path=None,
                  groups_path=None) -> list[tuple[str, str]]:
    model_path = model_path or cfg.artifact("model")
    af.require_artifact(model_path, "train")
    vocab = _load_vocab(cfg)
    model = DenoisingSummarizer.load(model_path, vocab)
    results = []
    for pid, reviews in _review_groups(cfg, groups_path):
        results.append((pid, summarize(model, reviews, cfg.beam_size, cfg.max_len)))
    out_path = out_path or cfg.artifact("summaries")
    with open(out_path, "w", encoding="utf-8") as f:
        for pid, text in results:
            f.write(json.dumps({"product_id": pid, "summary": text}) + "\n")
    af.write_manifest(out_path, "summaries", cfg.to_dict(), cfg.seed,
                      {"model": model_path, "vocab": cfg.artifact("vocab")},
                      extra={"products": len(results)})
    return results


def _read_keyed_jsonl(path, value_field: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            record = json.loads(line)
            if "product_id" not in record or value_field not in record:
                raise DataError(f"{path}:{lineno}: need product_id and {value_field}")
            out[record["product_id"]] = record[value_field]
    return out


def run_evaluate(cfg: PipelineConfig, summaries_path=None,
                 references_path=None, report_path=None) -> MetricReport:
    summaries_path = summaries_path or cfg.artifact("summaries")
    references_path = references_path or cfg.artifact("references")
    report_path = report_path or cfg.artifact("report")
    af.require_artifact(summaries_path, "summarize")
    af.require_artifact(references_path, "ingest")

    # refuse to score summaries that were generated under a different vocabulary
    manifest = af.read_manifest(summaries_path)
    recorded = manifest.get("inputs", {}).get("vocab")
    current = af.sha256_file(cfg.artifact("vocab"))
    if recorded != current:
        raise DataError(
            "summaries were produced with a different vocabulary than the "
            "current workdir holds; regenerate them before evaluating"
        )

    candidates = _read_keyed_jsonl(summaries_path, "summary")
    references = _read_keyed_jsonl(references_path, "reference")
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise DataError(f"no references for products: {missing[:5]}")
    keys = sorted(candidates)
    report = score_corpus([tokenize(candidates[k]) for k in keys],
                          [tokenize(references[k]) for k in keys])
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    af.write_manifest(report_path, "report", cfg.to_dict(), cfg.seed,
                      {"summaries": summaries_path, "references": references_path})
    print(report.to_table(), end="")
    return report


def run_gradcheck(threshold: float = GRADCHECK_THRESHOLD) -> float:
    """Finite-difference audit of the whole loss on a micro configuration."""
    words = ("alpha bravo charlie delta echo foxtrot golf hotel india juliet "
             "kilo lima mike november oscar papa").split()
    corpus = Corpus([Review("p", "r", " ".join(words))])
    vocab = build_vocab(corpus, max_size=20)
    cfg = ModelConfig(embedding_dim=8, hidden_dim=8, vocab_size=len(vocab),
                      topic_count=3, dropout=0.0)
    model = DenoisingSummarizer(cfg, vocab, np.random.default_rng(0),
                                dtype=np.float64)

    class _Pair:
        summary = ["alpha", "bravo", "charlie", "delta"]
        segment_noisy = [["echo", "foxtrot", "golf"], ["hotel", "india"]]
        document_noisy = [["alpha", "kilo", "lima"], ["mike", "bravo"]]
        p_z = np.array([0.5, 0.3, 0.2])

    prepared = model.prepare_pair(_Pair())

    def fn(tp):
        total, *_ = pair_loss(tp, model, prepared, training=False)
        return total

    err = _gradcheck_fn(fn, list(model.params.values()))
    print(f"max relative gradient error: {err:.3e} (threshold {threshold:g})")
    if err > threshold:
        raise NumericError(f"gradient check failed: {err:.3e} > {threshold:g}")
    return err


def run_ablate(cfg: PipelineConfig, preset: str) -> dict:
    if preset not in ABLATION_PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r}; choose from {', '.join(ABLATION_PRESETS)}"
        )
    overrides = ABLATION_PRESETS[preset]
    tag = f"ablate-{preset}"
    model_path = os.path.join(cfg.workdir, f"{tag}.ck")
    log_path = os.path.join(cfg.workdir, f"{tag}-train.jsonl")
    _model, result = run_train(cfg, model_overrides=overrides,
                               model_path=model_path, log_path=log_path)
    summaries_path = os.path.join(cfg.workdir, f"{tag}-summaries.jsonl")
    run_summarize(cfg, model_path=model_path, out_path=summaries_path)
    report = run_evaluate(cfg, summaries_path=summaries_path,
                          report_path=os.path.join(cfg.workdir, f"{tag}-report.json"))
    row = {
        "preset": preset,
        "rouge-1": round(report.average["rouge-1"].f1, 4),
        "rouge-2": round(report.average["rouge-2"].f1, 4),
        "rouge-l": round(report.average["rouge-l"].f1, 4),
        "final_loss": round(result.epoch_losses[-1], 4),
    }
    with open(cfg.artifact("ablations"), "a", encoding="utf-8") as f:
        f.write(json.dumps(row) + "\n")
    print(json.dumps(row))
    return row


# -- argument plumbing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):   # usage problems are exit code 1, not argparse's 2
        raise ConfigError(message)


_OVERRIDES = ("seed", "workdir", "vocab_size", "pair_count", "topic_count",
              "beam_size", "max_len", "pretrain_epochs")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="pipeline config JSON")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--workdir")
    sub.add_argument("--vocab-size", type=int, dest="vocab_size")
    sub.add_argument("--pair-count", type=int, dest="pair_count")
    sub.add_argument("--topic-count", type=int, dest="topic_count")
    sub.add_argument("--beam-size", type=int, dest="beam_size")
    sub.add_argument("--max-len", type=int, dest="max_len")
    sub.add_argument("--pretrain-epochs", type=int, dest="pretrain_epochs")
    sub.add_argument("--epochs", type=int, help="training epochs override")


def _config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    for name in _OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    return cfg.validate()


def build_parser() -> _Parser:
    parser = _Parser(prog="opsum", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="load reviews (or the bundled toy world)")
    p.add_argument("--reviews", help="JSON Lines of raw reviews")
    p.add_argument("--toy", action="store_true", help="generate the toy corpus")
    p.add_argument("--toy-products", type=int, default=50)
    p.add_argument("--toy-reviews", type=int, default=20)
    p.add_argument("--toy-tidy-fraction", type=float, default=0.4,
                   help="share of summary-like reviews per product")
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_ingest(
        cfg, reviews_path=a.reviews, toy=a.toy,
        toy_products=a.toy_products, toy_reviews=a.toy_reviews,
        toy_tidy_fraction=a.toy_tidy_fraction))

    p = subs.add_parser("train-lm", help="fit the bidirectional n-gram LM")
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_train_lm(cfg))

    p = subs.add_parser("train-lda", help="fit the topic model")
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_train_lda(cfg))

    p = subs.add_parser("synthesize", help="build the synthetic pair dataset")
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_synthesize(cfg))

    p = subs.add_parser("train", help="train the summarizer")
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_train(cfg))

    p = subs.add_parser("summarize", help="generate summaries")
    p.add_argument("--groups", help="JSON Lines {product_id, reviews:[text]}")
    p.add_argument("--model", help="checkpoint path override")
    p.add_argument("--out", help="output path override")
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_summarize(
        cfg, model_path=a.model, out_path=a.out, groups_path=a.groups))

    p = subs.add_parser("evaluate", help="score summaries against references")
    p.add_argument("--summaries", help="candidate JSONL override")
    p.add_argument("--references", help="reference JSONL override")
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_evaluate(
        cfg, summaries_path=a.summaries, references_path=a.references))

    p = subs.add_parser("gradcheck", help="finite-difference audit of the loss")
    p.add_argument("--threshold", type=float, default=GRADCHECK_THRESHOLD)
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_gradcheck(a.threshold), skip_config=True)

    p = subs.add_parser("ablate", help="train+evaluate one ablation preset")
    p.add_argument("preset", choices=sorted(ABLATION_PRESETS))
    _add_common(p)
    p.set_defaults(func=lambda cfg, a: run_ablate(cfg, a.preset))

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = None if getattr(args, "skip_config", False) else _config_from_args(args)
        args.func(cfg, args)
        return 0
    except OpsumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
