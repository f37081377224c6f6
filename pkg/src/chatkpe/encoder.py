"""Block encoders behind one interface: a trainable embedding-table encoder
(with an optional local mixing window) and a read-only adapter for
precomputed per-block embedding dumps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .kernels import scatter_add_rows
from .tokenizer import TokenBlock, TokenizedDocument

KIND_TOY = "toy"
KIND_PRECOMPUTED = "precomputed"


@dataclass
class EncoderParams:
    embedding_table: np.ndarray  # (vocab_size, d)
    mix_window: int = 1
    trainable: bool = True
    kind: str = KIND_TOY

    @property
    def d(self) -> int:
        return int(self.embedding_table.shape[1])

    def __post_init__(self):
        if self.mix_window < 1 or self.mix_window % 2 == 0:
            raise ConfigError("mix_window must be an odd integer >= 1")
        if not np.all(np.isfinite(self.embedding_table)):
            raise ConfigError("embedding table contains non-finite values")


def init_encoder(
    vocab_size: int,
    d: int = 64,
    seed: int = 0,
    mix_window: int = 1,
    dtype=np.float64,
) -> EncoderParams:
    """Uniform init in [-0.5/d, +0.5/d] keeps initial scores near zero."""
    if d < 1:
        raise ConfigError("embedding width d must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 0.5 / d
    table = rng.uniform(-scale, scale, size=(vocab_size, d)).astype(dtype)
    return EncoderParams(embedding_table=table, mix_window=mix_window)


def encode_block(block: TokenBlock, params: EncoderParams) -> np.ndarray:
    """Embed one block: row t is the mean of the table rows for the ids in
    the centered width-w window around t, clipped at the block edges. With
    w=1 this is a pure per-token lookup."""
    ids = block.ids
    if ids.size and (int(ids.max()) >= params.embedding_table.shape[0] or int(ids.min()) < 0):
        raise DataError("token id out of range for the embedding table")
    rows = params.embedding_table[ids]
    w = params.mix_window
    if w == 1:
        return rows
    h = w // 2
    length = rows.shape[0]
    out = np.zeros_like(rows)
    counts = np.zeros(length, dtype=rows.dtype)
    for delta in range(-h, h + 1):
        lo, hi = max(0, -delta), min(length, length - delta)
        out[lo:hi] += rows[lo + delta : hi + delta]
        counts[lo:hi] += 1
    out /= counts[:, None]
    return out


def encode_backward_into(
    table_grad: np.ndarray, block: TokenBlock, g_rows: np.ndarray, mix_window: int
) -> None:
    """Accumulate the gradient of encode_block into the table gradient."""
    ids = block.ids
    if mix_window == 1:
        scatter_add_rows(table_grad, ids.astype(np.int64), g_rows)
        return
    h = mix_window // 2
    length = g_rows.shape[0]
    counts = np.zeros(length, dtype=g_rows.dtype)
    for delta in range(-h, h + 1):
        lo, hi = max(0, -delta), min(length, length - delta)
        counts[lo:hi] += 1
    weighted = g_rows / counts[:, None]
    for delta in range(-h, h + 1):
        lo, hi = max(0, -delta), min(length, length - delta)
        scatter_add_rows(table_grad, ids[lo + delta : hi + delta].astype(np.int64), weighted[lo:hi])


@dataclass
class SequenceEmbedding:
    """Concatenated block encodings for one sample.

    ``runs`` lists the content stretch of each block as
    (row_start, n_rows, doc_token_start); CLS/SEP rows sit immediately
    around each run and are flagged in ``special_mask``.
    """

    values: np.ndarray  # (L, d)
    special_mask: np.ndarray  # (L,) bool
    runs: list[tuple[int, int, int]]
    block_index: np.ndarray = field(default=None)  # (L,) int32
    within_index: np.ndarray = field(default=None)  # (L,) int32
    sample_index: int = 0


def concat_blocks(
    subseqs: list[np.ndarray],
    blocks: list[TokenBlock] | None = None,
    sample_index: int = 0,
) -> SequenceEmbedding:
    """Vertically concatenate per-block encodings, marking CLS/SEP rows."""
    if not subseqs:
        raise DataError("no block encodings to concatenate")
    d = subseqs[0].shape[1]
    for mat in subseqs[1:]:
        if mat.shape[1] != d:
            raise DataError(f"block width mismatch: {mat.shape[1]} != {d}")
    total = sum(m.shape[0] for m in subseqs)
    special = np.zeros(total, dtype=bool)
    block_index = np.empty(total, dtype=np.int32)
    within_index = np.empty(total, dtype=np.int32)
    runs = []
    row = 0
    doc_tok = 0
    for bi, mat in enumerate(subseqs):
        n = mat.shape[0]
        special[row] = True
        special[row + n - 1] = True
        block_index[row : row + n] = bi
        within_index[row : row + n] = np.arange(n, dtype=np.int32)
        start_tok = blocks[bi].content_range[0] if blocks is not None else doc_tok
        runs.append((row + 1, n - 2, start_tok))
        doc_tok += n - 2
        row += n
    return SequenceEmbedding(
        values=np.concatenate(subseqs, axis=0),
        special_mask=special,
        runs=runs,
        block_index=block_index,
        within_index=within_index,
        sample_index=sample_index,
    )


# ------------------------------------------------- precomputed embeddings


def write_precomputed(
    dir_path: str | Path, doc_id: str, matrices: list[np.ndarray]
) -> None:
    """Dump per-block embeddings as raw little-endian float32 files plus a
    sidecar manifest."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    manifest_path = dir_path / "manifest.json"
    entries = []
    if manifest_path.exists():
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))["blocks"]
        entries = [e for e in entries if e["doc_id"] != doc_id]
    for bi, mat in enumerate(matrices):
        raw = np.ascontiguousarray(mat, dtype="<f4")
        (dir_path / f"{doc_id}.{bi}.f32").write_bytes(raw.tobytes())
        entries.append(
            {"doc_id": doc_id, "block": bi, "rows": int(mat.shape[0]), "d": int(mat.shape[1])}
        )
    manifest_path.write_text(json.dumps({"blocks": entries}, indent=1), encoding="utf-8")


class PrecomputedStore:
    """Read access to a directory of per-block embedding dumps."""

    def __init__(self, dir_path: str | Path):
        self.dir = Path(dir_path)
        manifest_path = self.dir / "manifest.json"
        if not manifest_path.exists():
            raise DataError(f"{self.dir}: missing manifest.json")
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))["blocks"]
        self.by_key = {(e["doc_id"], e["block"]): e for e in entries}
        if not self.by_key:
            raise DataError(f"{self.dir}: manifest lists no blocks")
        self.d = int(next(iter(self.by_key.values()))["d"])

    def block(self, doc_id: str, index: int, expected_rows: int, dtype=np.float64) -> np.ndarray:
        entry = self.by_key.get((doc_id, index))
        if entry is None:
            raise DataError(f"precomputed embeddings missing block ({doc_id}, {index})")
        fpath = self.dir / f"{doc_id}.{index}.f32"
        if not fpath.exists():
            raise DataError(f"precomputed embeddings missing file {fpath.name}")
        raw = np.frombuffer(fpath.read_bytes(), dtype="<f4")
        d = int(entry["d"])
        if raw.size != entry["rows"] * d:
            raise DataError(f"{fpath.name}: size does not match manifest rows x d")
        mat = raw.reshape(int(entry["rows"]), d)
        if mat.shape[0] != expected_rows:
            raise DataError(
                f"({doc_id}, {index}): row count {mat.shape[0]} != block length {expected_rows}"
            )
        bad = np.argwhere(~np.isfinite(mat))
        if bad.size:
            r, c = bad[0]
            raise DataError(f"({doc_id}, {index}): non-finite value at row {r}, col {c}")
        return mat.astype(dtype)


def precomputed_encoder(d: int) -> EncoderParams:
    """Frozen encoder whose rows come from a PrecomputedStore at runtime."""
    return EncoderParams(
        embedding_table=np.zeros((0, d)), mix_window=1, trainable=False, kind=KIND_PRECOMPUTED
    )


def load_precomputed(
    path: str | Path, tdoc: TokenizedDocument, m: int = 512
) -> list[np.ndarray]:
    """Load the per-block embedding matrices for one document, validating
    block coverage, row counts, and finiteness."""
    from .tokenizer import split_blocks  # local import avoids cycle at module load

    store = PrecomputedStore(path)
    blocks = split_blocks(tdoc, m=m)
    return [store.block(tdoc.doc_id, bi, len(block)) for bi, block in enumerate(blocks)]
