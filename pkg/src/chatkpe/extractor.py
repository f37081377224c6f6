"""Inference pipeline: enumerate and score candidate n-grams per sample,
deduplicate phrases by best score, merge candidates across the samples of a
long document, and return the ranked top-c keyphrases.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ChatDocument
from .encoder import encode_block
from .errors import ConfigError
from .model import (
    ForwardResult,
    GlobalScores,
    ModelParams,
    NGramScoreTable,
    PreparedSample,
    forward_prepared,
    global_pool,
    prepare_sample,
)
from .textseg import is_punct
from .tokenizer import (
    DEFAULT_BLOCK,
    DEFAULT_SAMPLE,
    TokenizedDocument,
    Vocabulary,
    split_samples,
    tokenize,
)

DEFAULT_TOP_C = 60


@dataclass
class PhraseCandidate:
    surface: str
    token_key: tuple[int, ...]
    score: float
    best_occurrence: tuple[int, int, int]  # (sample, n, pos)
    n: int


def _occ_order(c: PhraseCandidate) -> tuple[int, int, int]:
    s, n, pos = c.best_occurrence
    return (s, pos, n)


def _rank_order(c: PhraseCandidate):
    return (-c.score, _occ_order(c), c.surface)


def _punct_ids(vocab: Vocabulary) -> set[int]:
    return {i for i, tok in enumerate(vocab.id_to_token) if is_punct(tok)}


def _keep_candidate(key: tuple[int, ...], punct: set[int]) -> bool:
    if all(t in punct for t in key):
        return False
    return key[0] not in punct and key[-1] not in punct


def _from_globals(globals_: GlobalScores, vocab: Vocabulary, c: int) -> list[PhraseCandidate]:
    punct = _punct_ids(vocab)
    out = []
    for key, score, occ in zip(globals_.keys, globals_.scores, globals_.occurrences):
        if not _keep_candidate(key, punct):
            continue
        surface = " ".join(vocab.surface(t) for t in key)
        out.append(
            PhraseCandidate(
                surface=surface,
                token_key=key,
                score=float(score),
                best_occurrence=occ,
                n=len(key),
            )
        )
    out.sort(key=_rank_order)
    return out[:c]


def get_candidates(table: NGramScoreTable, vocab: Vocabulary, c: int) -> list[PhraseCandidate]:
    """One candidate per unique token key, scored by the max localized rank
    score, filtered of punctuation-bounded phrases, ranked and truncated."""
    if c < 1:
        raise ConfigError("c must be >= 1")
    if table.n_windows() == 0:
        return []
    return _from_globals(global_pool(table), vocab, c)


def candidates_from_forward(
    prepared: PreparedSample, fwd: ForwardResult, vocab: Vocabulary, c: int
) -> list[PhraseCandidate]:
    """Fast-path equivalent of get_candidates over a prepared forward pass."""
    punct = _punct_ids(vocab)
    out = []
    for g in range(prepared.n_groups):
        key = prepared.group_key(g)
        if not _keep_candidate(key, punct):
            continue
        occ = prepared.flat_to_occurrence(int(fwd.group_argmax[g]))
        surface = " ".join(vocab.surface(t) for t in key)
        out.append(
            PhraseCandidate(
                surface=surface,
                token_key=key,
                score=float(fwd.group_max[g]),
                best_occurrence=occ,
                n=len(key),
            )
        )
    out.sort(key=_rank_order)
    return out[:c]


def merge_samples(per_sample: list[list[PhraseCandidate]], c: int) -> list[PhraseCandidate]:
    """Union by token key keeping the best score; ties keep the occurrence
    from the earlier sample. Order of the input lists does not matter."""
    best: dict[tuple[int, ...], PhraseCandidate] = {}
    for cands in per_sample:
        for cand in cands:
            cur = best.get(cand.token_key)
            if cur is None or cand.score > cur.score or (
                cand.score == cur.score and _occ_order(cand) < _occ_order(cur)
            ):
                best[cand.token_key] = cand
    merged = sorted(best.values(), key=_rank_order)
    return merged[:c]


def extract_tokenized(
    tdoc: TokenizedDocument,
    params: ModelParams,
    vocab: Vocabulary,
    c: int = DEFAULT_TOP_C,
    N: int = DEFAULT_SAMPLE,
    m: int = DEFAULT_BLOCK,
    block_mats_by_sample: list[list[np.ndarray]] | None = None,
    store=None,
) -> list[PhraseCandidate]:
    """Score an already-tokenized document sample by sample and merge."""
    samples = split_samples(tdoc, N=N, m=m)
    per_sample = []
    block_counter = 0
    for si, sample in enumerate(samples):
        prepared = prepare_sample(tdoc, sample, k_max=params.conv.k_max, sample_index=si)
        if block_mats_by_sample is not None:
            mats = block_mats_by_sample[si]
        elif store is not None:
            mats = []
            for block in sample.blocks:
                mats.append(
                    store.block(tdoc.doc_id, block_counter, len(block), dtype=params.dtype)
                )
                block_counter += 1
        else:
            mats = [encode_block(b, params.encoder) for b in prepared.blocks]
        fwd = forward_prepared(prepared, params, block_mats=mats)
        per_sample.append(candidates_from_forward(prepared, fwd, vocab, c))
    return merge_samples(per_sample, c)


def extract_document(
    doc: ChatDocument,
    params: ModelParams,
    vocab: Vocabulary,
    c: int = DEFAULT_TOP_C,
    N: int = DEFAULT_SAMPLE,
    m: int = DEFAULT_BLOCK,
    store=None,
) -> list[PhraseCandidate]:
    """tokenize -> split into samples -> score -> dedupe/merge -> top c.

    ``store`` supplies frozen precomputed block embeddings in place of the
    trainable encoder."""
    tdoc = tokenize(doc, vocab)
    return extract_tokenized(tdoc, params, vocab, c=c, N=N, m=m, store=store)


def write_extraction(dir_path: str | Path, doc_id: str, candidates: list[PhraseCandidate]) -> Path:
    """One UTF-8 file per document: ``rank<TAB>score<TAB>surface`` lines."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    out = dir_path / f"{doc_id}.tsv"
    with out.open("w", encoding="utf-8") as fh:
        for rank, cand in enumerate(candidates, start=1):
            fh.write(f"{rank}\t{cand.score:.17g}\t{cand.surface}\n")
    return out
