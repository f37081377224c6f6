"""Exact-match F1@K scoring, word-balanced five-fold cross-validation,
synthetic corpus generation, and report emission.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    StopwordSet,
    build_idf,
    load_stopwords,
    rake_extract,
    textrank_extract,
    tfidf_extract,
)
from .corpus import ChatDocument, annotate_corpus, make_folds
from .errors import ConfigError
from .extractor import DEFAULT_TOP_C, extract_document
from .model import init_model
from .tokenizer import DEFAULT_BLOCK, DEFAULT_SAMPLE, build_vocab
from .training import TrainConfig, prepare_training_samples, train

PROFILES = {
    "grooming": {"k_values": (40, 50, 60), "c": 60, "epochs": 50},
    "drugs": {"k_values": (20, 30, 40), "c": 40, "epochs": 20},
}


@dataclass
class EvalConfig:
    k_values: tuple[int, ...] = (40, 50, 60)
    n_folds: int = 5

    def __post_init__(self):
        ks = tuple(self.k_values)
        if not ks or any(k <= 0 for k in ks) or any(a >= b for a, b in zip(ks, ks[1:])):
            raise ConfigError("k_values must be strictly increasing positive integers")
        self.k_values = ks


def normalize_phrase(s: str) -> str:
    return " ".join(s.lower().split())


def exact_match(pred: str, gold: str) -> bool:
    return normalize_phrase(pred) == normalize_phrase(gold)


def f1_at_k(preds: list[str], gold: list[str], K: int) -> tuple[float, float, float]:
    """Precision/recall/F1 of the top-min(K, |preds|) predictions against the
    (duplicate-collapsed) gold list; each gold phrase matches at most once."""
    if K <= 0:
        raise ConfigError("K must be positive")
    gold_set = {normalize_phrase(g) for g in gold if normalize_phrase(g)}
    top = preds[: min(K, len(preds))]
    remaining = set(gold_set)
    matches = 0
    for p in top:
        norm = normalize_phrase(p)
        if norm in remaining:
            remaining.discard(norm)
            matches += 1
    precision = matches / len(top) if top else 0.0
    recall = matches / len(gold_set) if gold_set else 0.0
    f1 = 0.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


@dataclass
class EvalReport:
    k_values: tuple[int, ...]
    method: str
    per_doc: dict[str, dict[int, tuple[float, float, float]]] = field(default_factory=dict)
    fold_means: list[dict[int, tuple[float, float, float]]] = field(default_factory=list)
    overall: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    matched_gold: int = 0
    unmatched_gold: int = 0

    def f1(self, K: int) -> float:
        return self.overall[K][2]


def _mean_metrics(
    rows: list[dict[int, tuple[float, float, float]]], k_values
) -> dict[int, tuple[float, float, float]]:
    out = {}
    for k in k_values:
        arr = np.array([r[k] for r in rows], dtype=np.float64)
        out[k] = tuple(arr.mean(axis=0)) if len(rows) else (0.0, 0.0, 0.0)
    return out


def score_predictions(
    docs: list[ChatDocument],
    predictions: dict[str, list[str]],
    k_values: tuple[int, ...],
    method: str = "method",
) -> EvalReport:
    """Per-document F1@K plus the macro mean over documents (stored as one
    fold)."""
    report = EvalReport(k_values=tuple(k_values), method=method)
    k_top = max(k_values)
    for doc in docs:
        preds = predictions.get(doc.id, [])
        report.per_doc[doc.id] = {k: f1_at_k(preds, doc.gold_keyphrases, k) for k in k_values}
        gold_set = {normalize_phrase(g) for g in doc.gold_keyphrases if normalize_phrase(g)}
        top = {normalize_phrase(p) for p in preds[:k_top]}
        hit = len(gold_set & top)
        report.matched_gold += hit
        report.unmatched_gold += len(gold_set) - hit
    rows = list(report.per_doc.values())
    report.fold_means = [_mean_metrics(rows, k_values)]
    report.overall = report.fold_means[0]
    return report


# ------------------------------------------------------------- CV methods


class CvMethod:
    """A named extraction method usable inside cross-validation. ``fit``
    returns a per-document extractor producing a ranked surface list."""

    name = "method"

    def fit(self, train_docs: list[ChatDocument], fold: int):
        raise NotImplementedError


class JointKpeMethod(CvMethod):
    name = "jointkpe"

    def __init__(
        self,
        train_cfg: TrainConfig,
        d: int = 64,
        d_g: int | None = None,
        k_max: int = 7,
        mix_window: int = 1,
        c: int = DEFAULT_TOP_C,
        min_freq: int = 1,
        N: int = DEFAULT_SAMPLE,
        m: int = DEFAULT_BLOCK,
        dtype=np.float64,
    ):
        self.train_cfg = train_cfg
        self.d, self.d_g, self.k_max = d, d_g, k_max
        self.mix_window, self.c, self.min_freq = mix_window, c, min_freq
        self.N, self.m, self.dtype = N, m, dtype

    def fit(self, train_docs, fold: int = 0):
        vocab = build_vocab(train_docs, min_freq=self.min_freq)
        cfg = TrainConfig(**{**self.train_cfg.__dict__, "seed": self.train_cfg.seed + fold})
        params = init_model(
            vocab.size,
            d=self.d,
            d_g=self.d_g,
            k_max=self.k_max,
            seed=cfg.seed,
            mix_window=self.mix_window,
            dtype=self.dtype,
        )
        samples = prepare_training_samples(
            train_docs, vocab, k_max=self.k_max, N=self.N, m=self.m
        )
        train(samples, params, cfg)

        def extract(doc: ChatDocument) -> list[str]:
            cands = extract_document(doc, params, vocab, c=self.c, N=self.N, m=self.m)
            return [cand.surface for cand in cands]

        return extract


class TfidfMethod(CvMethod):
    name = "tfidf"

    def __init__(self, corpus: list[ChatDocument], c: int = DEFAULT_TOP_C, stopwords=None):
        self.idf = build_idf(corpus)
        self.c = c
        self.stopwords = stopwords if stopwords is not None else load_stopwords("en")

    def fit(self, train_docs, fold: int = 0):
        return lambda doc: [s for s, _ in tfidf_extract(doc, self.idf, self.c, stopwords=self.stopwords)]


class RakeMethod(CvMethod):
    name = "rake"

    def __init__(self, c: int = DEFAULT_TOP_C, stopwords: StopwordSet | None = None):
        self.c = c
        self.stopwords = stopwords if stopwords is not None else load_stopwords("en")

    def fit(self, train_docs, fold: int = 0):
        return lambda doc: [s for s, _ in rake_extract(doc, self.stopwords, self.c)]


class TextrankMethod(CvMethod):
    name = "textrank"

    def __init__(self, c: int = DEFAULT_TOP_C, stopwords: StopwordSet | None = None):
        self.c = c
        self.stopwords = stopwords if stopwords is not None else load_stopwords("en")

    def fit(self, train_docs, fold: int = 0):
        return lambda doc: [s for s, _ in textrank_extract(doc, self.stopwords, self.c)]


def run_cv(
    docs: list[ChatDocument],
    method: CvMethod,
    cfg: EvalConfig,
    train_cfg: TrainConfig | None = None,
    fold_seed: int | None = None,
    collect_predictions: bool = False,
):
    """Word-balanced n-fold cross-validation: fit on the other folds, extract
    and score on the held-out fold, macro-average per fold then overall.

    Returns the EvalReport (plus the prediction map when requested)."""
    seed = fold_seed if fold_seed is not None else (train_cfg.seed if train_cfg else 0)
    folds = make_folds(docs, cfg.n_folds, seed=seed)
    report = EvalReport(k_values=cfg.k_values, method=method.name)
    predictions: dict[str, list[str]] = {}
    by_id = {d.id: d for d in docs}
    k_top = max(cfg.k_values)
    for fold in range(cfg.n_folds):
        test_ids = set(folds.fold_members(fold))
        train_docs = [d for d in docs if d.id not in test_ids]
        test_docs = [by_id[i] for i in docs_order(docs) if i in test_ids]
        extract = method.fit(train_docs, fold)
        fold_rows = []
        for doc in test_docs:
            preds = extract(doc)
            predictions[doc.id] = preds
            metrics = {k: f1_at_k(preds, doc.gold_keyphrases, k) for k in cfg.k_values}
            report.per_doc[doc.id] = metrics
            fold_rows.append(metrics)
            gold_set = {normalize_phrase(g) for g in doc.gold_keyphrases if normalize_phrase(g)}
            top = {normalize_phrase(p) for p in preds[:k_top]}
            hit = len(gold_set & top)
            report.matched_gold += hit
            report.unmatched_gold += len(gold_set) - hit
        report.fold_means.append(_mean_metrics(fold_rows, cfg.k_values))
    report.overall = _mean_metrics(report.fold_means, cfg.k_values)
    if collect_predictions:
        return report, predictions
    return report


def docs_order(docs: list[ChatDocument]) -> list[str]:
    return [d.id for d in docs]


# -------------------------------------------------------- synthetic corpus

_CONS_FILLER = "b c d f g l m n p r s t".split()
_CONS_PLANT = "j k q v w x z".split()
_VOWELS = "a e i o u".split()


def _pseudo_words(consonants: list[str], count: int, syllables: int) -> list[str]:
    words = []
    i = 0
    while len(words) < count:
        parts = []
        k = i
        for _ in range(syllables):
            parts.append(consonants[k % len(consonants)] + _VOWELS[(k // len(consonants)) % 5])
            k = k // (len(consonants) * 5) + 7 * len(parts) + i
        words.append("".join(parts))
        i += 1
    return sorted(set(words))[:count] if len(set(words)) >= count else words[:count]


def default_filler_vocab() -> list[str]:
    stop = sorted(load_stopwords("en").words)
    return stop + _pseudo_words(_CONS_FILLER, 1800, 2)


def default_plant_vocab() -> list[str]:
    return _pseudo_words(_CONS_PLANT, 360, 3)


def synth_corpus(
    seed: int,
    n_docs: int = 50,
    doc_len: tuple[int, int] = (600, 4000),
    planted: tuple[int, int] = (5, 15),
    plant_vocab: list[str] | None = None,
    filler_vocab: list[str] | None = None,
    phrase_pool_size: int = 90,
    repeats: tuple[int, int] = (1, 4),
) -> list[ChatDocument]:
    """Deterministic synthetic chat-log corpus: filler-token documents with
    gold phrases (1-7 words, drawn from a fixed phrase pool over the plant
    vocabulary) inserted at random positions, each repeated 1-4 times."""
    plant = list(plant_vocab) if plant_vocab is not None else default_plant_vocab()
    filler = list(filler_vocab) if filler_vocab is not None else default_filler_vocab()
    overlap = set(plant) & set(filler)
    if overlap:
        raise ConfigError(f"plant and filler vocabularies overlap: {sorted(overlap)[:5]}")
    rng = np.random.default_rng(seed)
    # fixed pool of phrases with dedicated words: every plant word belongs to
    # at most one pool phrase, at one position
    pool: list[tuple[str, ...]] = []
    shuffled = [plant[i] for i in rng.permutation(len(plant))]
    cursor = 0
    while len(pool) < phrase_pool_size:
        length = min(int(rng.integers(1, 8)), len(shuffled) - cursor)
        if length < 1:
            break
        pool.append(tuple(shuffled[cursor : cursor + length]))
        cursor += length
    if len(pool) < max(2, planted[1]):
        raise ConfigError("plant vocabulary too small for the requested phrase pool")
    docs = []
    filler_arr = np.array(filler)
    for di in range(n_docs):
        n_fill = int(rng.integers(doc_len[0], doc_len[1] + 1))
        tokens = list(filler_arr[rng.integers(0, len(filler_arr), size=n_fill)])
        n_plant = int(rng.integers(planted[0], planted[1] + 1))
        chosen = [pool[i] for i in rng.choice(len(pool), size=n_plant, replace=False)]
        insertions: list[tuple[int, tuple[str, ...]]] = []
        for phrase in chosen:
            for _ in range(int(rng.integers(repeats[0], repeats[1] + 1))):
                insertions.append((int(rng.integers(0, len(tokens) + 1)), phrase))
        # apply right-to-left so positions stay valid
        insertions.sort(key=lambda it: -it[0])
        for pos, phrase in insertions:
            tokens[pos:pos] = list(phrase)
        docs.append(
            ChatDocument(
                id=f"synth-{di:03d}",
                text=" ".join(tokens),
                gold_keyphrases=[" ".join(p) for p in chosen],
            )
        )
    return docs


# ----------------------------------------------------------------- reports


def format_report_table(reports: list[EvalReport]) -> str:
    """Text table mirroring the usual results layout: one row per method,
    one F1 column per K."""
    k_values = reports[0].k_values
    header = ["method".ljust(16)] + [f"F1@{k}".rjust(9) for k in k_values]
    lines = ["".join(header)]
    for rep in reports:
        row = [rep.method.ljust(16)] + [f"{rep.overall[k][2]:9.4f}" for k in k_values]
        lines.append("".join(row))
    return "\n".join(lines)


def report_to_json(report: EvalReport) -> dict:
    return {
        "method": report.method,
        "k_values": list(report.k_values),
        "overall": {str(k): list(v) for k, v in report.overall.items()},
        "fold_means": [{str(k): list(v) for k, v in fm.items()} for fm in report.fold_means],
        "per_doc": {
            doc: {str(k): list(v) for k, v in row.items()} for doc, row in report.per_doc.items()
        },
        "matched_gold": report.matched_gold,
        "unmatched_gold": report.unmatched_gold,
    }


def write_report(reports: list[EvalReport], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(format_report_table(reports) + "\n", encoding="utf-8")
    payload = [report_to_json(r) for r in reports]
    (out_dir / "report.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")


def prepare_corpus(docs: list[ChatDocument]) -> list[ChatDocument]:
    """Annotate gold spans in place (alignment) and return the docs."""
    annotate_corpus(docs)
    return docs
