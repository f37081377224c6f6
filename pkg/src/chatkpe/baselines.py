"""Unsupervised comparison extractors: TF-IDF phrase scoring, RAKE, and
TextRank, under the same candidate-length and output conventions as the
supervised extractor (n <= 7, no punctuation-bounded phrases).

All three are deterministic and corpus-order independent given the same
IdfTable.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import ChatDocument
from .errors import ConfigError
from .textseg import is_punct, word_tokens
from .tokenizer import MAX_PHRASE_LEN

RankedPhrase = tuple[str, float]


@dataclass
class IdfTable:
    doc_freq: dict[str, int]
    n_docs: int

    def idf(self, token: str) -> float:
        return math.log(self.n_docs / (1 + self.doc_freq.get(token, 0))) + 1.0


@dataclass
class StopwordSet:
    words: frozenset[str]
    source: str = "custom"

    def __contains__(self, token: str) -> bool:
        return token in self.words

    def __len__(self) -> int:
        return len(self.words)


def load_stopwords(lang_or_path: str = "en") -> StopwordSet:
    """Packaged 'en'/'pt' lists, or any path to a one-word-per-line file."""
    if lang_or_path in ("en", "pt"):
        ref = resources.files("chatkpe.data").joinpath(f"stopwords_{lang_or_path}.txt")
        with resources.as_file(ref) as p:
            words = p.read_text(encoding="utf-8").split()
        return StopwordSet(words=frozenset(words), source=lang_or_path)
    words = Path(lang_or_path).read_text(encoding="utf-8").split()
    return StopwordSet(words=frozenset(w.lower() for w in words), source=str(lang_or_path))


def build_idf(docs: list[ChatDocument]) -> IdfTable:
    df: Counter[str] = Counter()
    for doc in docs:
        df.update({t.surface for t in word_tokens(doc.text)})
    return IdfTable(doc_freq=dict(df), n_docs=len(docs))


def _rank(scored: dict[tuple[str, ...], float], c: int) -> list[RankedPhrase]:
    """Score descending, ties broken lexicographically by surface."""
    items = [(" ".join(words), s) for words, s in scored.items()]
    items.sort(key=lambda it: (-it[1], it[0]))
    return items[:c]


def _candidate_ok(words: tuple[str, ...], stop: frozenset[str]) -> bool:
    if all(is_punct(w) for w in words):
        return False
    if is_punct(words[0]) or is_punct(words[-1]):
        return False
    return words[0] not in stop and words[-1] not in stop


# ------------------------------------------------------------------ TF-IDF


def tfidf_extract(
    doc: ChatDocument,
    idf: IdfTable,
    c: int,
    k_max: int = MAX_PHRASE_LEN,
    stopwords: StopwordSet | None = None,
) -> list[RankedPhrase]:
    """Candidate n-grams scored by the mean of tf(token) * idf(token)."""
    surfaces = [t.surface for t in word_tokens(doc.text)]
    if not surfaces:
        return []
    stop = stopwords.words if stopwords is not None else frozenset()
    tf = Counter(surfaces)
    weight = {tok: tf[tok] * idf.idf(tok) for tok in tf}
    scored: dict[tuple[str, ...], float] = {}
    for n in range(1, k_max + 1):
        for i in range(len(surfaces) - n + 1):
            words = tuple(surfaces[i : i + n])
            if words in scored or not _candidate_ok(words, stop):
                continue
            scored[words] = sum(weight[w] for w in words) / n
    return _rank(scored, c)


# -------------------------------------------------------------------- RAKE


def rake_extract(
    doc: ChatDocument,
    stopwords: StopwordSet,
    c: int,
    k_max: int = MAX_PHRASE_LEN,
) -> list[RankedPhrase]:
    """Phrases split at stopwords/punctuation; word score = degree/frequency
    (degree counts co-occurring word slots including self); phrase score =
    sum of member word scores."""
    if len(stopwords) == 0:
        raise ConfigError("RAKE requires a nonempty stopword set")
    phrases: list[tuple[str, ...]] = []
    current: list[str] = []
    for tok in word_tokens(doc.text):
        if tok.surface in stopwords or is_punct(tok.surface):
            if current:
                phrases.append(tuple(current))
                current = []
        else:
            current.append(tok.surface)
    if current:
        phrases.append(tuple(current))
    freq: Counter[str] = Counter()
    degree: Counter[str] = Counter()
    for phrase in phrases:
        for w in phrase:
            freq[w] += 1
            degree[w] += len(phrase)
    word_score = {w: degree[w] / freq[w] for w in freq}
    scored: dict[tuple[str, ...], float] = {}
    for phrase in phrases:
        if len(phrase) > k_max or phrase in scored:
            continue
        scored[phrase] = sum(word_score[w] for w in phrase)
    return _rank(scored, c)


# ---------------------------------------------------------------- TextRank


def pagerank(
    neighbors: list[np.ndarray],
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> tuple[np.ndarray, int]:
    """Uniform-initialized PageRank on an undirected graph given adjacency
    lists. Iterates until the L1 change drops below tol; returns the raw
    (unnormalized) scores and the iteration count. Isolated nodes keep the
    (1-damping)/N baseline."""
    n = len(neighbors)
    deg = np.array([len(a) for a in neighbors], dtype=np.float64)
    v = np.full(n, 1.0 / n)
    iters = 0
    for it in range(1, max_iter + 1):
        iters = it
        share = np.where(deg > 0, v / np.maximum(deg, 1.0), 0.0)
        nxt = np.full(n, (1.0 - damping) / n)
        for i, adj in enumerate(neighbors):
            if adj.size:
                nxt[i] += damping * share[adj].sum()
        delta = float(np.abs(nxt - v).sum())
        v = nxt
        if delta < tol:
            break
    return v, iters


def textrank_scores(
    doc: ChatDocument,
    stopwords: StopwordSet,
    window: int = 2,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> tuple[dict[str, float], int]:
    """Word scores from PageRank over the co-occurrence graph of content
    words (stopwords and punctuation removed), normalized to sum to 1."""
    if len(stopwords) == 0:
        raise ConfigError("TextRank requires a nonempty stopword set")
    content = [
        t.surface
        for t in word_tokens(doc.text)
        if t.surface not in stopwords and not is_punct(t.surface)
    ]
    if not content:
        return {}, 0
    words = sorted(set(content))
    index = {w: i for i, w in enumerate(words)}
    edges: set[tuple[int, int]] = set()
    for i in range(len(content)):
        for j in range(i + 1, min(i + window, len(content))):
            a, b = index[content[i]], index[content[j]]
            if a != b:
                edges.add((min(a, b), max(a, b)))
    adj: list[list[int]] = [[] for _ in words]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    neighbors = [np.array(sorted(a), dtype=np.int64) for a in adj]
    raw, iters = pagerank(neighbors, damping=damping, tol=tol, max_iter=max_iter)
    norm = raw / raw.sum()
    return {w: float(norm[index[w]]) for w in words}, iters


def textrank_extract(
    doc: ChatDocument,
    stopwords: StopwordSet,
    c: int,
    window: int = 2,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
    k_max: int = MAX_PHRASE_LEN,
) -> list[RankedPhrase]:
    """Top third of words by PageRank score are seeds; adjacent seeds in the
    original text merge into phrases scored by summed word scores."""
    scores, _ = textrank_scores(
        doc, stopwords, window=window, damping=damping, tol=tol, max_iter=max_iter
    )
    if not scores:
        return []
    n_seeds = max(1, math.ceil(len(scores) / 3))
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    seeds = {w for w, _ in ordered[:n_seeds]}
    scored: dict[tuple[str, ...], float] = {}
    current: list[str] = []
    for tok in word_tokens(doc.text):
        if tok.surface in seeds:
            current.append(tok.surface)
        else:
            if current:
                words = tuple(current)
                if len(words) <= k_max and words not in scored:
                    scored[words] = sum(scores[w] for w in words)
                current = []
    if current:
        words = tuple(current)
        if len(words) <= k_max and words not in scored:
            scored[words] = sum(scores[w] for w in words)
    return _rank(scored, c)
