"""Operator entry point.

Subcommands: synth, build-vocab, train, extract, baseline, evaluate, cv,
gradcheck. Every run is driven by a flat key=value config file plus flags
(flags win), writes its artifacts into a run-stamped directory, and leaves a
manifest with the resolved config, seed, model hash, and wall time.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines as bl
from .corpus import ChatDocument, annotate_corpus, load_corpus, write_corpus
from .errors import ConfigError, DataError, NumericError
from .evaluation import (
    PROFILES,
    EvalConfig,
    JointKpeMethod,
    RakeMethod,
    TextrankMethod,
    TfidfMethod,
    run_cv,
    score_predictions,
    synth_corpus,
    write_report,
)
from .extractor import extract_document, write_extraction
from .model import init_model
from .model_io import load_model, model_hash, save_model
from .tokenizer import build_vocab, load_vocab, save_vocab
from .training import (
    TrainConfig,
    grad_check,
    prepare_training_samples,
    prepare_training_samples_precomputed,
    train,
)
from .utils import RunClock, prepare_out_dir, write_manifest

DEFAULTS = {
    "profile": "custom",
    "seed": 0,
    "d": 64,
    "d_g": 0,  # 0 -> same as d
    "k_max": 7,
    "mix_window": 1,
    "encoder": "toy",
    "dtype": "float64",
    "min_freq": 1,
    "N": 8192,
    "m": 512,
    "embeddings": "",
    "c": 60,
    "k_values": "40,50,60",
    "n_folds": 5,
    "epochs": 50,
    "peak_lr": 5e-5,
    "warmup_fraction": 0.1,
    "weight_decay": 0.01,
    "grad_clip_norm": 1.0,
    "neg_sample_cap": 64,
    "method": "jointkpe",
    "stopwords": "en",
    "jobs": 1,
}

_INT_KEYS = {"seed", "d", "d_g", "k_max", "mix_window", "min_freq", "N", "m", "c",
             "n_folds", "epochs", "neg_sample_cap", "jobs"}
_FLOAT_KEYS = {"peak_lr", "warmup_fraction", "weight_decay", "grad_clip_norm"}


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        file_cfg = read_config_file(args.config)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    profile = str(cfg["profile"])
    if profile not in ("custom", *PROFILES):
        raise ConfigError(f"unknown profile {profile!r}")
    if profile in PROFILES:
        prof = PROFILES[profile]
        explicit = {k for k in ("k_values", "c", "epochs") if getattr(args, k, None) is not None}
        if "k_values" not in explicit:
            cfg["k_values"] = ",".join(str(k) for k in prof["k_values"])
        if "c" not in explicit:
            cfg["c"] = prof["c"]
        if "epochs" not in explicit:
            cfg["epochs"] = prof["epochs"]
    try:
        for key in _INT_KEYS:
            cfg[key] = int(cfg[key])
        for key in _FLOAT_KEYS:
            cfg[key] = float(cfg[key])
        cfg["k_values_tuple"] = tuple(
            int(k) for k in str(cfg["k_values"]).replace(" ", "").split(",")
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if cfg["dtype"] not in ("float64", "float32"):
        raise ConfigError("dtype must be float64 or float32")
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        peak_lr=cfg["peak_lr"],
        warmup_fraction=cfg["warmup_fraction"],
        epochs=cfg["epochs"],
        weight_decay=cfg["weight_decay"],
        grad_clip_norm=cfg["grad_clip_norm"],
        neg_sample_cap=cfg["neg_sample_cap"],
        seed=cfg["seed"],
    )


def _dtype(cfg: dict):
    return np.float64 if cfg["dtype"] == "float64" else np.float32


def _load_annotated(path: str) -> list[ChatDocument]:
    docs = load_corpus(path)
    annotate_corpus(docs)
    return docs


def _jsonable(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


# ------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    out = prepare_out_dir(args.out, "synth", args.force)
    docs = synth_corpus(seed=cfg["seed"], n_docs=args.n_docs)
    write_corpus(docs, out / "corpus.jsonl")
    write_manifest(out, "synth", _jsonable(cfg), clock, n_docs=len(docs))
    print(f"wrote {len(docs)} documents to {out / 'corpus.jsonl'}")
    return 0


def cmd_build_vocab(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    out = prepare_out_dir(args.out, "vocab", args.force)
    docs = load_corpus(args.corpus)
    vocab = build_vocab(docs, min_freq=cfg["min_freq"])
    save_vocab(vocab, out / "vocab.txt")
    write_manifest(out, "build-vocab", _jsonable(cfg), clock, vocab_size=vocab.size)
    print(f"vocabulary of {vocab.size} tokens -> {out / 'vocab.txt'}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    out = prepare_out_dir(args.out, "train", args.force)
    docs = _load_annotated(args.corpus)
    vocab = load_vocab(args.vocab) if args.vocab else build_vocab(docs, cfg["min_freq"])
    if not args.vocab:
        save_vocab(vocab, out / "vocab.txt")
    train_cfg = _train_config(cfg)
    mats = None
    if cfg["encoder"] == "precomputed":
        from .encoder import PrecomputedStore, precomputed_encoder
        from .model import ModelParams, init_cnn2gram, init_heads

        if not cfg["embeddings"]:
            raise ConfigError("encoder=precomputed requires --embeddings DIR")
        store = PrecomputedStore(cfg["embeddings"])
        d_g = cfg["d_g"] or store.d
        params = ModelParams(
            encoder=precomputed_encoder(store.d),
            conv=init_cnn2gram(store.d, d_g=d_g, k_max=cfg["k_max"],
                               seed=cfg["seed"] + 1, dtype=_dtype(cfg)),
            heads=init_heads(d_g, seed=cfg["seed"] + 2, dtype=_dtype(cfg)),
        )
        samples, mats = prepare_training_samples_precomputed(
            docs, vocab, store, k_max=cfg["k_max"], N=cfg["N"], m=cfg["m"], dtype=_dtype(cfg)
        )
    else:
        params = init_model(
            vocab.size,
            d=cfg["d"],
            d_g=cfg["d_g"] or None,
            k_max=cfg["k_max"],
            seed=cfg["seed"],
            mix_window=cfg["mix_window"],
            dtype=_dtype(cfg),
        )
        samples = prepare_training_samples(docs, vocab, k_max=cfg["k_max"], N=cfg["N"], m=cfg["m"])
    ckpt = out / "model.ckpe"
    result = train(samples, params, train_cfg, checkpoint_path=ckpt,
                   log_path=out / "loss_log.csv", block_mats_by_sample=mats)
    save_model(ckpt, result.params, optimizer_state=result.state)
    write_manifest(
        out, "train", _jsonable(cfg), clock,
        model_hash=model_hash(ckpt),
        steps=result.total_steps,
        final_loss=result.epoch_means[-1].loss_kpe,
    )
    print(f"trained {result.total_steps} steps; final mean loss "
          f"{result.epoch_means[-1].loss_kpe:.4f} -> {ckpt}")
    return 0


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    out = prepare_out_dir(args.out, "extract", args.force)
    docs = load_corpus(args.corpus)
    vocab = load_vocab(args.vocab)
    params = load_model(args.model, dtype=_dtype(cfg))
    store = None
    if params.encoder.kind == "precomputed":
        from .encoder import PrecomputedStore

        if not cfg["embeddings"]:
            raise ConfigError("this checkpoint needs precomputed embeddings (--embeddings DIR)")
        store = PrecomputedStore(cfg["embeddings"])

    def one(doc):
        cands = extract_document(doc, params, vocab, c=cfg["c"], N=cfg["N"], m=cfg["m"], store=store)
        write_extraction(out / "extractions", doc.id, cands)
        return doc.id

    if cfg["jobs"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            list(pool.map(one, docs))
    else:
        for doc in docs:
            one(doc)
    write_manifest(
        out, "extract", _jsonable(cfg), clock,
        model_hash=model_hash(args.model), n_docs=len(docs), method="jointkpe",
    )
    print(f"extracted {len(docs)} documents -> {out / 'extractions'}")
    return 0


def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    method = cfg["method"]
    if method not in ("tfidf", "rake", "textrank"):
        raise ConfigError(f"baseline method must be tfidf|rake|textrank, got {method!r}")
    out = prepare_out_dir(args.out, f"baseline-{method}", args.force)
    docs = load_corpus(args.corpus)
    stop = bl.load_stopwords(cfg["stopwords"])
    idf = bl.build_idf(docs) if method == "tfidf" else None

    def ranked(doc):
        if method == "tfidf":
            return bl.tfidf_extract(doc, idf, cfg["c"], stopwords=stop)
        if method == "rake":
            return bl.rake_extract(doc, stop, cfg["c"])
        return bl.textrank_extract(doc, stop, cfg["c"])

    ex_dir = out / "extractions"
    ex_dir.mkdir(parents=True, exist_ok=True)
    for doc in docs:
        lines = [
            f"{rank}\t{score:.17g}\t{surface}"
            for rank, (surface, score) in enumerate(ranked(doc), start=1)
        ]
        (ex_dir / f"{doc.id}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(out, "baseline", _jsonable(cfg), clock, method=method, n_docs=len(docs))
    print(f"{method} extracted {len(docs)} documents -> {ex_dir}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    out = prepare_out_dir(args.out, "evaluate", args.force)
    docs = load_corpus(args.corpus)
    ex_dir = Path(args.extractions)
    predictions = {}
    for doc in docs:
        f = ex_dir / f"{doc.id}.tsv"
        if not f.exists():
            raise DataError(f"missing extraction file for document {doc.id!r}: {f}")
        preds = []
        for line in f.read_text(encoding="utf-8").splitlines():
            if line.strip():
                preds.append(line.split("\t", 2)[2])
        predictions[doc.id] = preds
    report = score_predictions(docs, predictions, cfg["k_values_tuple"], method=args.method or "method")
    write_report([report], out)
    write_manifest(out, "evaluate", _jsonable(cfg), clock, n_docs=len(docs))
    for k in cfg["k_values_tuple"]:
        p, r, f1 = report.overall[k]
        print(f"K={k}: precision {p:.4f} recall {r:.4f} F1 {f1:.4f}")
    return 0


def cmd_cv(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    out = prepare_out_dir(args.out, "cv", args.force)
    docs = _load_annotated(args.corpus)
    eval_cfg = EvalConfig(k_values=cfg["k_values_tuple"], n_folds=cfg["n_folds"])
    train_cfg = _train_config(cfg)
    method_name = cfg["method"]
    stop = bl.load_stopwords(cfg["stopwords"])
    if method_name == "jointkpe":
        method = JointKpeMethod(
            train_cfg,
            d=cfg["d"],
            d_g=cfg["d_g"] or None,
            k_max=cfg["k_max"],
            mix_window=cfg["mix_window"],
            c=cfg["c"],
            min_freq=cfg["min_freq"],
            N=cfg["N"],
            m=cfg["m"],
            dtype=_dtype(cfg),
        )
    elif method_name == "tfidf":
        method = TfidfMethod(docs, c=cfg["c"], stopwords=stop)
    elif method_name == "rake":
        method = RakeMethod(c=cfg["c"], stopwords=stop)
    elif method_name == "textrank":
        method = TextrankMethod(c=cfg["c"], stopwords=stop)
    else:
        raise ConfigError(f"unknown method {method_name!r}")
    report = run_cv(docs, method, eval_cfg, train_cfg=train_cfg)
    write_report([report], out)
    write_manifest(out, "cv", _jsonable(cfg), clock, method=method_name, n_docs=len(docs))
    for k in cfg["k_values_tuple"]:
        print(f"{method_name} F1@{k} = {report.overall[k][2]:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = resolve_config(args)
    clock = RunClock()
    out = prepare_out_dir(args.out, "gradcheck", args.force)
    rng = np.random.default_rng(cfg["seed"])
    docs = synth_corpus(
        seed=cfg["seed"], n_docs=2, doc_len=(20, args.doc_len), planted=(1, 3)
    )
    annotate_corpus(docs)
    vocab = build_vocab(docs)
    d = min(cfg["d"], 8)
    params = init_model(vocab.size, d=d, k_max=cfg["k_max"], seed=int(rng.integers(2**31)),
                        mix_window=cfg["mix_window"])
    samples = prepare_training_samples(docs[:1], vocab, k_max=cfg["k_max"])
    report = grad_check(params, samples[0], neg_sample_cap=cfg["neg_sample_cap"], neg_seed=cfg["seed"])
    payload = {
        "max_rel_error": report.max_rel_error,
        "worst_tensor": report.worst_tensor,
        "worst_index": list(report.worst_index),
        "per_tensor": report.per_tensor,
        "nudges": report.nudges,
    }
    (out / "gradcheck.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")
    write_manifest(out, "gradcheck", _jsonable(cfg), clock)
    print(f"max relative error {report.max_rel_error:.3e} "
          f"(worst: {report.worst_tensor}{list(report.worst_index)})")
    if not report.ok:
        raise NumericError(
            f"gradient check failed: {report.max_rel_error:.3e} in {report.worst_tensor}"
        )
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chatkpe", description="Keyphrase extraction for long chat logs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=False, vocab=False, model=False):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory (default: run-stamped under ./runs)")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
        p.add_argument("--profile", choices=["grooming", "drugs", "custom"])
        p.add_argument("--seed", type=int)
        if corpus:
            p.add_argument("--corpus", required=True, help="JSONL corpus file")
        if vocab:
            p.add_argument("--vocab", help="vocabulary file")
        if model:
            p.add_argument("--model", required=True, help="model checkpoint")
        for key in ("d", "d_g", "k_max", "mix_window", "min_freq", "N", "m", "c",
                    "n_folds", "epochs", "neg_sample_cap", "jobs"):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
        for key in ("peak_lr", "warmup_fraction", "weight_decay", "grad_clip_norm"):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
        p.add_argument("--k-values", dest="k_values", help="comma-separated K list")
        p.add_argument("--dtype", choices=["float64", "float32"])
        p.add_argument("--stopwords", help="en, pt, or a stopword file path")
        p.add_argument("--method", choices=["jointkpe", "tfidf", "rake", "textrank"])
        p.add_argument("--encoder", choices=["toy", "precomputed"])
        p.add_argument("--embeddings", help="directory of precomputed block embeddings")

    p = sub.add_parser("synth", help="generate a synthetic planted-keyphrase corpus")
    common(p)
    p.add_argument("--n-docs", type=int, default=50)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a corpus")
    common(p, corpus=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train the supervised extractor")
    common(p, corpus=True, vocab=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="extract keyphrases with a trained model")
    common(p, corpus=True, vocab=True, model=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("baseline", help="run an unsupervised baseline extractor")
    common(p, corpus=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="score extraction files against gold phrases")
    common(p, corpus=True)
    p.add_argument("--extractions", required=True, help="directory of <doc_id>.tsv files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv", help="cross-validated evaluation of a method")
    common(p, corpus=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--doc-len", type=int, default=40)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
