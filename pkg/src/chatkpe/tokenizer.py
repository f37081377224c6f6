"""Vocabulary construction, offset-tracking tokenization, and splitting of
token streams into encoder blocks and balanced long-document samples.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ChatDocument
from .errors import ConfigError, DataError
from .textseg import word_tokens

logger = logging.getLogger(__name__)

CLS_ID, SEP_ID, UNK_ID, PAD_ID = 0, 1, 2, 3
N_SPECIALS = 4
SPECIAL_SURFACES = ("[CLS]", "[SEP]", "[UNK]", "[PAD]")

DEFAULT_BLOCK = 512
DEFAULT_SAMPLE = 8192
MAX_PHRASE_LEN = 7


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def surface(self, token_id: int) -> str:
        return self.id_to_token[token_id]


def build_vocab(docs: list[ChatDocument], min_freq: int = 1) -> Vocabulary:
    """All lowercase word tokens with corpus frequency >= min_freq, ordered
    by frequency descending then lexicographically, after the four specials."""
    if min_freq < 1:
        raise ConfigError("min_freq must be >= 1")
    if not docs:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(t.surface for t in word_tokens(doc.text))
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    id_to_token = list(SPECIAL_SURFACES) + kept
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for tok in vocab.id_to_token[N_SPECIALS:]:
            fh.write(tok + "\n")


def load_vocab(path: str | Path) -> Vocabulary:
    id_to_token = list(SPECIAL_SURFACES)
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            tok = line.rstrip("\n")
            if tok:
                id_to_token.append(tok)
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    if len(token_to_id) != len(id_to_token):
        raise DataError(f"{path}: duplicate tokens in vocabulary file")
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token)


@dataclass
class TokenizedDocument:
    doc_id: str
    token_ids: np.ndarray  # int32, content tokens only
    offsets: np.ndarray  # int32 (L, 2) char spans into the source text
    gold_label_spans: list[tuple[int, int]] = field(default_factory=list)  # (start, len)

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])


def tokenize(
    doc: ChatDocument, vocab: Vocabulary, max_span_len: int = MAX_PHRASE_LEN
) -> TokenizedDocument:
    """Lowercase word/punctuation tokenization with char offsets; aligned
    gold char spans become token spans when their boundaries coincide with
    token boundaries, otherwise they are dropped with a warning."""
    toks = word_tokens(doc.text)
    ids = np.fromiter((vocab.id(t.surface) for t in toks), dtype=np.int32, count=len(toks))
    offsets = np.array([(t.start, t.end) for t in toks], dtype=np.int32).reshape(len(toks), 2)
    start_index = {t.start: i for i, t in enumerate(toks)}
    end_index = {t.end: i for i, t in enumerate(toks)}
    spans: list[tuple[int, int]] = []
    for cs, ce in doc.gold_spans:
        i = start_index.get(cs)
        j = end_index.get(ce)
        if i is None or j is None or j < i:
            logger.warning("doc %s: gold span (%d,%d) off token boundaries; dropped", doc.id, cs, ce)
            continue
        length = j - i + 1
        if length > max_span_len:
            logger.warning(
                "doc %s: gold span (%d,%d) is %d tokens (> %d); dropped",
                doc.id, cs, ce, length, max_span_len,
            )
            continue
        spans.append((i, length))
    return TokenizedDocument(
        doc_id=doc.id, token_ids=ids, offsets=offsets, gold_label_spans=sorted(set(spans))
    )


@dataclass
class TokenBlock:
    ids: np.ndarray  # int32, CLS + content + SEP
    content_range: tuple[int, int]  # [start, end) token indices in the parent doc

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass
class SampleSequence:
    blocks: list[TokenBlock]
    total_tokens: int  # including CLS/SEP specials
    content_range: tuple[int, int]  # [start, end) token indices in the parent doc
    gold_label_spans: list[tuple[int, int]] = field(default_factory=list)


def _blocks_for_range(
    token_ids: np.ndarray, start: int, end: int, m: int
) -> list[TokenBlock]:
    cap = m - 2
    blocks = []
    for s in range(start, end, cap):
        e = min(s + cap, end)
        ids = np.empty(e - s + 2, dtype=np.int32)
        ids[0] = CLS_ID
        ids[1:-1] = token_ids[s:e]
        ids[-1] = SEP_ID
        blocks.append(TokenBlock(ids=ids, content_range=(s, e)))
    return blocks


def split_blocks(tdoc: TokenizedDocument, m: int = DEFAULT_BLOCK) -> list[TokenBlock]:
    """Chunk content greedily into m-2 token pieces, each wrapped CLS..SEP."""
    if m < 3:
        raise ConfigError("block size m must be >= 3")
    if len(tdoc) == 0:
        raise DataError(f"doc {tdoc.doc_id}: nothing to encode (empty token stream)")
    return _blocks_for_range(tdoc.token_ids, 0, len(tdoc), m)


def split_samples(
    tdoc: TokenizedDocument, N: int = DEFAULT_SAMPLE, m: int = DEFAULT_BLOCK
) -> list[SampleSequence]:
    """Divide a long document into near-equal contiguous samples, each at
    most N tokens after block wrapping, then block-split each sample.

    Gold label spans falling entirely inside one sample are kept for it;
    spans crossing a sample boundary are dropped with a warning.
    """
    if N < m:
        raise ConfigError(f"sample budget N={N} must be >= block size m={m}")
    if m < 3:
        raise ConfigError("block size m must be >= 3")
    length = len(tdoc)
    if length == 0:
        raise DataError(f"doc {tdoc.doc_id}: nothing to encode (empty token stream)")
    capacity = (N // m) * (m - 2)
    n_samples = math.ceil(length / capacity)
    base, extra = divmod(length, n_samples)
    samples: list[SampleSequence] = []
    start = 0
    for k in range(n_samples):
        size = base + (1 if k < extra else 0)
        end = start + size
        blocks = _blocks_for_range(tdoc.token_ids, start, end, m)
        spans = []
        for ts, tl in tdoc.gold_label_spans:
            if ts >= start and ts + tl <= end:
                spans.append((ts, tl))
            elif start <= ts < end:
                logger.warning(
                    "doc %s: gold span (%d,+%d) crosses sample boundary; dropped",
                    tdoc.doc_id, ts, tl,
                )
        samples.append(
            SampleSequence(
                blocks=blocks,
                total_tokens=size + 2 * len(blocks),
                content_range=(start, end),
                gold_label_spans=spans,
            )
        )
        start = end
    return samples
