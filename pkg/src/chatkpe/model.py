"""Model core: per-size n-gram convolutions over block-encoded sequences,
ranking and chunking heads, max pooling of per-occurrence scores into global
phrase scores, the two training losses, and exact reverse-mode gradients.

Candidate windows never contain CLS/SEP rows and never cross a block
boundary, so all convolution work happens per contiguous content run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .encoder import EncoderParams, SequenceEmbedding, encode_block, encode_backward_into
from .errors import ConfigError, DataError, NumericError
from .textseg import word_tokens
from .tokenizer import MAX_PHRASE_LEN, SampleSequence, TokenizedDocument, Vocabulary

SIGMOID_CLAMP = 30.0


# ------------------------------------------------------------- parameters


@dataclass
class Cnn2GramParams:
    kernels: list[np.ndarray]  # kernels[n-1]: (n, d, d_g)
    biases: list[np.ndarray]  # biases[n-1]: (d_g,)

    @property
    def k_max(self) -> int:
        return len(self.kernels)

    @property
    def d_g(self) -> int:
        return int(self.kernels[0].shape[2])

    @property
    def d(self) -> int:
        return int(self.kernels[0].shape[1])


@dataclass
class HeadParams:
    rank_w: np.ndarray  # (d_g,)
    rank_b: np.ndarray  # (1,)
    chunk_w: np.ndarray  # (d_g,)
    chunk_b: np.ndarray  # (1,)


@dataclass
class ModelParams:
    encoder: EncoderParams
    conv: Cnn2GramParams
    heads: HeadParams

    @property
    def dtype(self):
        return self.conv.kernels[0].dtype

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Trainable tensors in declared order."""
        out: dict[str, np.ndarray] = {}
        if self.encoder.trainable and self.encoder.embedding_table.shape[0]:
            out["embedding"] = self.encoder.embedding_table
        for n, (k, b) in enumerate(zip(self.conv.kernels, self.conv.biases), start=1):
            out[f"kernel_{n}"] = k
            out[f"bias_{n}"] = b
        out["rank_w"] = self.heads.rank_w
        out["rank_b"] = self.heads.rank_b
        out["chunk_w"] = self.heads.chunk_w
        out["chunk_b"] = self.heads.chunk_b
        return out

    def astype(self, dtype) -> "ModelParams":
        enc = EncoderParams(
            embedding_table=self.encoder.embedding_table.astype(dtype),
            mix_window=self.encoder.mix_window,
            trainable=self.encoder.trainable,
            kind=self.encoder.kind,
        )
        conv = Cnn2GramParams(
            kernels=[k.astype(dtype) for k in self.conv.kernels],
            biases=[b.astype(dtype) for b in self.conv.biases],
        )
        heads = HeadParams(
            rank_w=self.heads.rank_w.astype(dtype),
            rank_b=self.heads.rank_b.astype(dtype),
            chunk_w=self.heads.chunk_w.astype(dtype),
            chunk_b=self.heads.chunk_b.astype(dtype),
        )
        return ModelParams(encoder=enc, conv=conv, heads=heads)


def init_cnn2gram(
    d: int, d_g: int | None = None, k_max: int = MAX_PHRASE_LEN, seed: int = 0, dtype=np.float64
) -> Cnn2GramParams:
    if k_max < 1:
        raise ConfigError("k_max must be >= 1")
    d_g = d if d_g is None else d_g
    rng = np.random.default_rng(seed)
    ks, bs = [], []
    for n in range(1, k_max + 1):
        scale = 1.0 / np.sqrt(n * d)
        ks.append(rng.uniform(-scale, scale, size=(n, d, d_g)).astype(dtype))
        bs.append(np.zeros(d_g, dtype=dtype))
    return Cnn2GramParams(kernels=ks, biases=bs)


def init_heads(d_g: int, seed: int = 0, dtype=np.float64) -> HeadParams:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_g)
    return HeadParams(
        rank_w=rng.uniform(-scale, scale, size=d_g).astype(dtype),
        rank_b=np.zeros(1, dtype=dtype),
        chunk_w=rng.uniform(-scale, scale, size=d_g).astype(dtype),
        chunk_b=np.zeros(1, dtype=dtype),
    )


def init_model(
    vocab_size: int,
    d: int = 64,
    d_g: int | None = None,
    k_max: int = MAX_PHRASE_LEN,
    seed: int = 0,
    mix_window: int = 1,
    dtype=np.float64,
) -> ModelParams:
    from .encoder import init_encoder

    return ModelParams(
        encoder=init_encoder(vocab_size, d=d, seed=seed, mix_window=mix_window, dtype=dtype),
        conv=init_cnn2gram(d, d_g=d_g, k_max=k_max, seed=seed + 1, dtype=dtype),
        heads=init_heads(d if d_g is None else d_g, seed=seed + 2, dtype=dtype),
    )


# ----------------------------------------------------------- score tables


@dataclass
class NGramScoreTable:
    """Localized scores for every valid n-gram window of one sample.

    Windows are indexed per n by their start token position in the parent
    document; ``phrase_key(n, i)`` is the token-id tuple of window i.
    """

    token_ids: np.ndarray  # parent document content token ids
    sample_index: int
    starts: list[np.ndarray]  # per n: (W_n,) doc token positions
    rank_scores: list[np.ndarray]
    chunk_logits: list[np.ndarray]

    @property
    def k_max(self) -> int:
        return len(self.starts)

    def n_windows(self) -> int:
        return int(sum(s.shape[0] for s in self.starts))

    def phrase_key(self, n: int, i: int) -> tuple[int, ...]:
        s = int(self.starts[n - 1][i])
        return tuple(int(t) for t in self.token_ids[s : s + n])


@dataclass
class GlobalScores:
    """Per-unique-phrase global scores: the max over localized scores, with
    the earliest argmax occurrence and the occurrence count."""

    keys: list[tuple[int, ...]]
    scores: np.ndarray
    occurrences: list[tuple[int, int, int]]  # (sample, n, pos) of the argmax
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {k: float(s) for k, s in zip(self.keys, self.scores)}


# -------------------------------------------------------- window plumbing


@dataclass
class PreparedSample:
    """Static bookkeeping for one sample, reused across training epochs."""

    doc_id: str
    sample_index: int
    blocks: list
    token_ids: np.ndarray
    k_max: int
    win_starts: list[np.ndarray]  # per n, doc token positions (flat order: n-major)
    run_slices: list[list[tuple[int, int, int]]]  # per n: (win_offset, count, run_idx)
    n_offsets: np.ndarray  # flat offsets per n, len k_max+1
    inverse: np.ndarray  # (W,) group id per flat window
    order: np.ndarray  # stable argsort of inverse
    seg_starts: np.ndarray  # segment starts into `order`, len U
    uniq_windows: np.ndarray  # (U, k_max) padded token ids, pad=-1
    uniq_len: np.ndarray  # (U,) phrase length
    labels: np.ndarray  # (W,) float64 chunk labels
    gold_group_ids: np.ndarray  # group ids whose key is a document gold key

    @property
    def n_windows(self) -> int:
        return int(self.inverse.shape[0])

    @property
    def n_groups(self) -> int:
        return int(self.seg_starts.shape[0])

    def group_key(self, g: int) -> tuple[int, ...]:
        return tuple(int(t) for t in self.uniq_windows[g, : self.uniq_len[g]])

    def flat_to_occurrence(self, w: int) -> tuple[int, int, int]:
        n = int(np.searchsorted(self.n_offsets, w, side="right"))
        pos = int(self.win_starts[n - 1][w - self.n_offsets[n - 1]])
        return (self.sample_index, n, pos)


def phrase_token_key(phrase: str, vocab: Vocabulary) -> tuple[int, ...]:
    return tuple(vocab.id(t.surface) for t in word_tokens(phrase.lower()))


def doc_gold_keys(
    gold_keyphrases: list[str], vocab: Vocabulary, k_max: int = MAX_PHRASE_LEN
) -> set[tuple[int, ...]]:
    """Token-id keys of the gold phrases usable as ranking positives."""
    keys = set()
    for phrase in gold_keyphrases:
        key = phrase_token_key(phrase, vocab)
        if 1 <= len(key) <= k_max:
            keys.add(key)
    return keys


def prepare_sample(
    tdoc: TokenizedDocument,
    sample: SampleSequence,
    k_max: int = MAX_PHRASE_LEN,
    gold_keys: set[tuple[int, ...]] | None = None,
    sample_index: int = 0,
) -> PreparedSample:
    """Enumerate valid windows, group duplicate phrases, and precompute
    chunk labels and gold-positive groups for one sample."""
    ids = tdoc.token_ids
    win_starts: list[np.ndarray] = []
    run_slices: list[list[tuple[int, int, int]]] = []
    padded_parts: list[np.ndarray] = []
    counts = []
    for n in range(1, k_max + 1):
        starts_n = []
        slices_n = []
        off = 0
        for ri, block in enumerate(sample.blocks):
            s, e = block.content_range
            cnt = max(0, (e - s) - n + 1)
            if cnt:
                starts_n.append(np.arange(s, s + cnt, dtype=np.int64))
                slices_n.append((off, cnt, ri))
                off += cnt
        starts_cat = (
            np.concatenate(starts_n) if starts_n else np.empty(0, dtype=np.int64)
        )
        win_starts.append(starts_cat)
        run_slices.append(slices_n)
        counts.append(starts_cat.shape[0])
        part = np.full((starts_cat.shape[0], k_max), -1, dtype=np.int32)
        for j in range(n):
            part[:, j] = ids[starts_cat + j]
        padded_parts.append(part)
    n_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    all_windows = (
        np.concatenate(padded_parts, axis=0)
        if n_offsets[-1]
        else np.empty((0, k_max), dtype=np.int32)
    )
    if all_windows.shape[0] == 0:
        raise DataError(f"doc {tdoc.doc_id}: sample has no candidate windows")
    uniq, inverse = np.unique(all_windows, axis=0, return_inverse=True)
    inverse = inverse.astype(np.int64).ravel()
    order = np.argsort(inverse, kind="stable")
    seg_starts = np.searchsorted(inverse[order], np.arange(uniq.shape[0]))
    uniq_len = (uniq >= 0).sum(axis=1).astype(np.int64)

    labels = np.zeros(int(n_offsets[-1]), dtype=np.float64)
    for ts, tl in sample.gold_label_spans:
        if tl < 1 or tl > k_max:
            continue
        arr = win_starts[tl - 1]
        j = np.searchsorted(arr, ts)
        if j < arr.shape[0] and arr[j] == ts:
            labels[n_offsets[tl - 1] + j] = 1.0

    gold_ids: list[int] = []
    if gold_keys:
        key_index: dict[tuple[int, ...], int] = {}
        for g in range(uniq.shape[0]):
            key_index[tuple(int(t) for t in uniq[g, : uniq_len[g]])] = g
        for key in gold_keys:
            g = key_index.get(key)
            if g is not None:
                gold_ids.append(g)
    return PreparedSample(
        doc_id=tdoc.doc_id,
        sample_index=sample_index,
        blocks=sample.blocks,
        token_ids=ids,
        k_max=k_max,
        win_starts=win_starts,
        run_slices=run_slices,
        n_offsets=n_offsets,
        inverse=inverse,
        order=order,
        seg_starts=seg_starts,
        uniq_windows=uniq,
        uniq_len=uniq_len,
        labels=labels,
        gold_group_ids=np.array(sorted(gold_ids), dtype=np.int64),
    )


# ----------------------------------------------------------- forward pass


@dataclass
class ForwardResult:
    reps: list[np.ndarray]  # per n, (W_n, d_g) post-ReLU
    rank_flat: np.ndarray  # (W,)
    chunk_flat: np.ndarray  # (W,)
    group_max: np.ndarray  # (U,) float64
    group_argmax: np.ndarray  # (U,) flat window index of the first max
    block_mats: list[np.ndarray]


def forward_prepared(
    prepared: PreparedSample, params: ModelParams, block_mats: list[np.ndarray] | None = None
) -> ForwardResult:
    """Encoder -> per-run conv -> heads -> grouped max pooling."""
    conv, heads = params.conv, params.heads
    if block_mats is None:
        block_mats = [encode_block(b, params.encoder) for b in prepared.blocks]
    dt = params.dtype
    reps: list[np.ndarray] = []
    rank_parts: list[np.ndarray] = []
    chunk_parts: list[np.ndarray] = []
    for n in range(1, prepared.k_max + 1):
        w_n = int(prepared.n_offsets[n] - prepared.n_offsets[n - 1])
        rep_n = np.empty((w_n, conv.d_g), dtype=dt)
        rank_n = np.empty(w_n, dtype=dt)
        chunk_n = np.empty(w_n, dtype=dt)
        # heads applied per block run: block-identical inputs then give
        # block-identical scores regardless of how a document was split
        for off, cnt, ri in prepared.run_slices[n - 1]:
            run = block_mats[ri][1:-1]
            piece = kernels.conv_forward(run, conv.kernels[n - 1], conv.biases[n - 1])
            rep_n[off : off + cnt] = piece
            rank_n[off : off + cnt] = kernels.head_project(
                piece, heads.rank_w, float(heads.rank_b[0])
            )
            chunk_n[off : off + cnt] = kernels.head_project(
                piece, heads.chunk_w, float(heads.chunk_b[0])
            )
        reps.append(rep_n)
        rank_parts.append(rank_n)
        chunk_parts.append(chunk_n)
    rank_flat = np.concatenate(rank_parts) if rank_parts else np.empty(0, dtype=dt)
    chunk_flat = np.concatenate(chunk_parts) if chunk_parts else np.empty(0, dtype=dt)

    svals = rank_flat[prepared.order]
    group_max = np.maximum.reduceat(svals, prepared.seg_starts)
    hit = svals == group_max[prepared.inverse[prepared.order]]
    sentinel = prepared.n_windows
    cand = np.where(hit, prepared.order, sentinel)
    group_argmax = np.minimum.reduceat(cand, prepared.seg_starts)
    return ForwardResult(
        reps=reps,
        rank_flat=rank_flat,
        chunk_flat=chunk_flat,
        group_max=group_max.astype(np.float64),
        group_argmax=group_argmax,
        block_mats=block_mats,
    )


def score_table(prepared: PreparedSample, fwd: ForwardResult) -> NGramScoreTable:
    starts, rank_s, chunk_s = [], [], []
    for n in range(1, prepared.k_max + 1):
        lo, hi = prepared.n_offsets[n - 1], prepared.n_offsets[n]
        starts.append(prepared.win_starts[n - 1])
        rank_s.append(fwd.rank_flat[lo:hi])
        chunk_s.append(fwd.chunk_flat[lo:hi])
    return NGramScoreTable(
        token_ids=prepared.token_ids,
        sample_index=prepared.sample_index,
        starts=starts,
        rank_scores=rank_s,
        chunk_logits=chunk_s,
    )


def globals_from_forward(prepared: PreparedSample, fwd: ForwardResult) -> GlobalScores:
    keys = [prepared.group_key(g) for g in range(prepared.n_groups)]
    occ = [prepared.flat_to_occurrence(int(w)) for w in fwd.group_argmax]
    counts = np.diff(np.concatenate([prepared.seg_starts, [prepared.n_windows]]))
    return GlobalScores(keys=keys, scores=fwd.group_max.copy(), occurrences=occ, counts=counts)


# ------------------------------------------------------ public operations


def cnn2gram(seq: SequenceEmbedding, params: Cnn2GramParams):
    """Per-size ReLU convolutions over every valid window of the sequence.

    Returns (reps, starts): per n, the (W_n, d_g) representations and the
    content-token start positions. Windows touching special rows or a block
    boundary are omitted.
    """
    if seq.values.shape[1] != params.d:
        raise DataError(
            f"sequence width {seq.values.shape[1]} does not match kernels ({params.d})"
        )
    reps, starts = [], []
    for n in range(1, params.k_max + 1):
        parts, spans = [], []
        for row_start, n_rows, tok_start in seq.runs:
            cnt = n_rows - n + 1
            if cnt <= 0:
                continue
            run = seq.values[row_start : row_start + n_rows]
            parts.append(kernels.conv_forward(run, params.kernels[n - 1], params.biases[n - 1]))
            spans.append(np.arange(tok_start, tok_start + cnt, dtype=np.int64))
        if parts:
            reps.append(np.concatenate(parts, axis=0))
            starts.append(np.concatenate(spans))
        else:
            reps.append(np.empty((0, params.d_g), dtype=seq.values.dtype))
            starts.append(np.empty(0, dtype=np.int64))
    return reps, starts


def head_scores(
    reps: list[np.ndarray],
    heads: HeadParams,
    starts: list[np.ndarray],
    token_ids: np.ndarray,
    sample_index: int = 0,
) -> NGramScoreTable:
    """Linear rank scores and chunk logits for every representation."""
    rank_s, chunk_s = [], []
    for rep in reps:
        if rep.shape[1] != heads.rank_w.shape[0]:
            raise DataError("representation width does not match head weights")
        rank_s.append(kernels.head_project(rep, heads.rank_w, float(heads.rank_b[0])))
        chunk_s.append(kernels.head_project(rep, heads.chunk_w, float(heads.chunk_b[0])))
    return NGramScoreTable(
        token_ids=token_ids,
        sample_index=sample_index,
        starts=list(starts),
        rank_scores=rank_s,
        chunk_logits=chunk_s,
    )


def global_pool(table: NGramScoreTable) -> GlobalScores:
    """Group occurrences by phrase key; global score is the max localized
    rank score, with ties resolved toward the earlier position."""
    if table.n_windows() == 0:
        raise DataError("cannot pool an empty score table")
    best: dict[tuple[int, ...], tuple[float, tuple[int, int, int], int]] = {}
    for n in range(1, table.k_max + 1):
        starts = table.starts[n - 1]
        scores = table.rank_scores[n - 1]
        for i in range(starts.shape[0]):
            key = table.phrase_key(n, i)
            s = float(scores[i])
            occ = (table.sample_index, n, int(starts[i]))
            prev = best.get(key)
            if prev is None:
                best[key] = (s, occ, 1)
            elif s > prev[0]:
                best[key] = (s, occ, prev[2] + 1)
            else:
                best[key] = (prev[0], prev[1], prev[2] + 1)
    keys = list(best.keys())
    return GlobalScores(
        keys=keys,
        scores=np.array([best[k][0] for k in keys], dtype=np.float64),
        occurrences=[best[k][1] for k in keys],
        counts=np.array([best[k][2] for k in keys], dtype=np.int64),
    )


# ------------------------------------------------------------------ losses


@dataclass
class RankLossResult:
    loss: float
    d_scores: np.ndarray | None  # gradient w.r.t. the global scores
    pair_count: int
    skipped: bool


@dataclass
class LossBreakdown:
    loss_rank: float
    loss_chunk: float
    loss_kpe: float
    pair_count: int
    label_count: int


def margin_rank_loss(
    scores: np.ndarray,
    positive_ids: np.ndarray,
    neg_sample_cap: int = 64,
    seed: int = 0,
) -> RankLossResult:
    """Pairwise hinge loss between gold-phrase global scores and sampled
    non-gold scores: mean over pairs of max(0, 1 - s_pos + s_neg).

    Returns a skip result (not an error) when either side is empty.
    """
    u = scores.shape[0]
    pos = np.asarray(positive_ids, dtype=np.int64)
    if pos.size == 0 or pos.size == u:
        return RankLossResult(0.0, None, 0, True)
    neg_mask = np.ones(u, dtype=bool)
    neg_mask[pos] = False
    neg = np.nonzero(neg_mask)[0]
    if neg.size > neg_sample_cap:
        rng = np.random.default_rng(seed)
        neg = neg[np.sort(rng.choice(neg.size, size=neg_sample_cap, replace=False))]
    s = scores.astype(np.float64, copy=False)
    terms = 1.0 - s[pos][:, None] + s[neg][None, :]
    active = terms > 0.0
    n_pairs = pos.size * neg.size
    loss = float(terms[active].sum() / n_pairs)
    d = np.zeros(u, dtype=np.float64)
    d[pos] = -active.sum(axis=1) / n_pairs
    d[neg] = active.sum(axis=0) / n_pairs
    return RankLossResult(loss, d, n_pairs, False)


def margin_rank_loss_keys(
    globals_: GlobalScores,
    gold_keys: set[tuple[int, ...]],
    neg_sample_cap: int = 64,
    seed: int = 0,
) -> RankLossResult:
    """Key-level wrapper over :func:`margin_rank_loss`."""
    pos = np.array(
        [i for i, k in enumerate(globals_.keys) if k in gold_keys], dtype=np.int64
    )
    return margin_rank_loss(globals_.scores, pos, neg_sample_cap=neg_sample_cap, seed=seed)


def _sigmoid_clamped(z: np.ndarray) -> np.ndarray:
    zc = np.clip(z, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return 1.0 / (1.0 + np.exp(-zc))


def chunk_bce_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over every window, with |z| clamped at 30
    to keep the log finite. Returns (loss, d_logits)."""
    w = logits.shape[0]
    if w == 0:
        return 0.0, np.zeros(0, dtype=np.float64)
    z = np.clip(logits.astype(np.float64, copy=False), -SIGMOID_CLAMP, SIGMOID_CLAMP)
    y = labels.astype(np.float64, copy=False)
    # -[y ln s + (1-y) ln(1-s)] = softplus(z) - y z
    loss = float((np.logaddexp(0.0, z) - y * z).mean())
    grad = (_sigmoid_clamped(z) - y) / w
    return loss, grad


def combined_loss(rank: RankLossResult, loss_chunk: float, label_count: int) -> LossBreakdown:
    """Unweighted sum of the two task losses."""
    loss_rank = 0.0 if rank.skipped else rank.loss
    if not np.isfinite(loss_rank) or not np.isfinite(loss_chunk):
        raise NumericError(
            f"non-finite loss (rank={loss_rank}, chunk={loss_chunk})"
        )
    return LossBreakdown(
        loss_rank=loss_rank,
        loss_chunk=loss_chunk,
        loss_kpe=loss_rank + loss_chunk,
        pair_count=0 if rank.skipped else rank.pair_count,
        label_count=label_count,
    )


# ---------------------------------------------------------------- backward


def zero_gradients(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.named_parameters().items()}


def backward_prepared(
    prepared: PreparedSample,
    params: ModelParams,
    fwd: ForwardResult,
    d_rank_flat: np.ndarray,
    d_chunk_flat: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact gradients of the losses w.r.t. every trainable tensor, given
    the gradients w.r.t. the flat localized scores."""
    conv, heads = params.conv, params.heads
    dt = params.dtype
    grads = zero_gradients(params)
    train_embed = "embedding" in grads
    d_blocks = (
        [np.zeros_like(m) for m in fwd.block_mats] if train_embed else None
    )
    for n in range(1, prepared.k_max + 1):
        lo, hi = int(prepared.n_offsets[n - 1]), int(prepared.n_offsets[n])
        if hi == lo:
            continue
        rep = fwd.reps[n - 1]
        g_rank = d_rank_flat[lo:hi].astype(dt, copy=False)
        g_chunk = d_chunk_flat[lo:hi].astype(dt, copy=False)
        dw_r, db_r, d_rep = kernels.head_backward(rep, heads.rank_w, g_rank)
        dw_c, db_c, d_rep_c = kernels.head_backward(rep, heads.chunk_w, g_chunk)
        grads["rank_w"] += dw_r
        grads["rank_b"][0] += db_r
        grads["chunk_w"] += dw_c
        grads["chunk_b"][0] += db_c
        d_rep += d_rep_c
        d_rep *= rep > 0  # ReLU subgradient, 0 at 0
        for off, cnt, ri in prepared.run_slices[n - 1]:
            run = fwd.block_mats[ri][1:-1]
            dk, db, drun = kernels.conv_backward(
                run, conv.kernels[n - 1], d_rep[off : off + cnt]
            )
            grads[f"kernel_{n}"] += dk
            grads[f"bias_{n}"] += db
            if train_embed:
                d_blocks[ri][1:-1] += drun
    if train_embed:
        for block, g_rows in zip(prepared.blocks, d_blocks):
            encode_backward_into(grads["embedding"], block, g_rows, params.encoder.mix_window)
    return grads


def sample_loss_and_grads(
    prepared: PreparedSample,
    params: ModelParams,
    neg_sample_cap: int = 64,
    seed: int = 0,
    with_grads: bool = True,
    block_mats: list[np.ndarray] | None = None,
):
    """One full forward/backward for a sample: returns (LossBreakdown,
    grads-or-None). This is the training-step core and the gradient-check
    objective. ``block_mats`` bypasses the encoder (frozen precomputed
    embeddings)."""
    fwd = forward_prepared(prepared, params, block_mats=block_mats)
    rank = margin_rank_loss(
        fwd.group_max, prepared.gold_group_ids, neg_sample_cap=neg_sample_cap, seed=seed
    )
    loss_chunk, d_chunk = chunk_bce_loss(fwd.chunk_flat, prepared.labels)
    breakdown = combined_loss(rank, loss_chunk, int(prepared.labels.sum()))
    if not with_grads:
        return breakdown, None
    d_rank_flat = np.zeros(prepared.n_windows, dtype=np.float64)
    if not rank.skipped:
        touched = np.nonzero(rank.d_scores)[0]
        d_rank_flat[fwd.group_argmax[touched]] = rank.d_scores[touched]
    grads = backward_prepared(prepared, params, fwd, d_rank_flat, d_chunk)
    return breakdown, grads
