import numpy as np
import pytest

from chatkpe.corpus import ChatDocument
from chatkpe.encoder import (
    EncoderParams,
    concat_blocks,
    encode_backward_into,
    encode_block,
    init_encoder,
    load_precomputed,
    write_precomputed,
)
from chatkpe.errors import ConfigError, DataError
from chatkpe.tokenizer import build_vocab, split_blocks, split_samples, tokenize


@pytest.fixture
def setup():
    doc = ChatDocument(id="d", text=" ".join(f"t{i % 37}" for i in range(100)))
    vocab = build_vocab([doc])
    tdoc = tokenize(doc, vocab)
    params = init_encoder(vocab.size, d=8, seed=0)
    return doc, vocab, tdoc, params


class TestEncodeBlock:
    def test_w1_is_pure_lookup(self, setup):
        _, _, tdoc, params = setup
        block = split_blocks(tdoc, m=32)[0]
        out = encode_block(block, params)
        np.testing.assert_array_equal(out, params.embedding_table[block.ids])

    def test_w3_interior_mean(self, setup):
        _, _, tdoc, params = setup
        params.mix_window = 3
        block = split_blocks(tdoc, m=32)[0]
        out = encode_block(block, params)
        rows = params.embedding_table[block.ids]
        np.testing.assert_allclose(out[5], rows[4:7].mean(axis=0), rtol=1e-12)

    def test_w3_clipped_edges(self, setup):
        _, _, tdoc, params = setup
        params.mix_window = 3
        block = split_blocks(tdoc, m=32)[0]
        out = encode_block(block, params)
        rows = params.embedding_table[block.ids]
        np.testing.assert_allclose(out[0], rows[0:2].mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(out[-1], rows[-2:].mean(axis=0), rtol=1e-12)

    def test_id_out_of_range(self, setup):
        _, _, tdoc, params = setup
        block = split_blocks(tdoc, m=32)[0]
        block.ids[3] = params.embedding_table.shape[0] + 5
        with pytest.raises(DataError):
            encode_block(block, params)

    def test_linearity_in_table(self, setup):
        _, _, tdoc, params = setup
        params.mix_window = 3
        block = split_blocks(tdoc, m=32)[0]
        base = encode_block(block, params)
        params.embedding_table *= 2.5
        np.testing.assert_allclose(encode_block(block, params), 2.5 * base, rtol=1e-12)

    def test_mix_window_must_be_odd(self):
        with pytest.raises(ConfigError):
            EncoderParams(embedding_table=np.zeros((4, 2)), mix_window=2)

    def test_context_freeness_at_w1(self, setup):
        # encoding the document as one block set vs split into samples gives
        # identical rows for every content token
        _, _, tdoc, params = setup
        whole = np.concatenate(
            [encode_block(b, params)[1:-1] for b in split_blocks(tdoc, m=64)]
        )
        split = np.concatenate(
            [
                encode_block(b, params)[1:-1]
                for s in split_samples(tdoc, N=128, m=64)
                for b in s.blocks
            ]
        )
        np.testing.assert_array_equal(whole, split)


class TestConcatBlocks:
    def test_special_rows_marked(self, setup):
        _, _, tdoc, params = setup
        blocks = split_blocks(tdoc, m=64)
        mats = [encode_block(b, params) for b in blocks]
        seq = concat_blocks(mats, blocks=blocks)
        total = sum(m.shape[0] for m in mats)
        assert seq.values.shape == (total, params.d)
        idx = np.flatnonzero(seq.special_mask)
        expected = []
        row = 0
        for m in mats:
            expected += [row, row + m.shape[0] - 1]
            row += m.shape[0]
        assert idx.tolist() == sorted(expected)

    def test_single_block_identity(self, setup):
        _, _, tdoc, params = setup
        blocks = split_blocks(tdoc, m=512)
        mats = [encode_block(blocks[0], params)]
        seq = concat_blocks(mats, blocks=blocks)
        np.testing.assert_array_equal(seq.values, mats[0])
        assert seq.runs == [(1, len(tdoc), 0)]

    def test_width_mismatch(self):
        with pytest.raises(DataError):
            concat_blocks([np.zeros((4, 3)), np.zeros((4, 5))])


class TestEncodeBackward:
    def test_w1_scatter(self, setup):
        _, _, tdoc, params = setup
        block = split_blocks(tdoc, m=32)[0]
        g = np.random.default_rng(0).standard_normal((len(block), params.d))
        table_grad = np.zeros_like(params.embedding_table)
        encode_backward_into(table_grad, block, g, mix_window=1)
        manual = np.zeros_like(table_grad)
        for t, tid in enumerate(block.ids):
            manual[tid] += g[t]
        np.testing.assert_allclose(table_grad, manual, rtol=1e-12)

    def test_w3_matches_finite_difference(self, setup):
        _, _, tdoc, params = setup
        params.mix_window = 3
        block = split_blocks(tdoc, m=16)[0]
        rng = np.random.default_rng(1)
        g = rng.standard_normal((len(block), params.d))
        table_grad = np.zeros_like(params.embedding_table)
        encode_backward_into(table_grad, block, g, mix_window=3)
        eps = 1e-6
        flat = params.embedding_table.ravel()
        for k in rng.choice(flat.size, size=20, replace=False):
            orig = flat[k]
            flat[k] = orig + eps
            up = float((encode_block(block, params) * g).sum())
            flat[k] = orig - eps
            down = float((encode_block(block, params) * g).sum())
            flat[k] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - table_grad.ravel()[k]) < 1e-6 * max(1.0, abs(fd))


class TestPrecomputed:
    def test_roundtrip(self, setup, tmp_path):
        _, _, tdoc, params = setup
        blocks = split_blocks(tdoc, m=32)
        mats = [encode_block(b, params) for b in blocks]
        write_precomputed(tmp_path, tdoc.doc_id, mats)
        loaded = load_precomputed(tmp_path, tdoc, m=32)
        assert len(loaded) == len(mats)
        for a, b in zip(loaded, mats):
            np.testing.assert_allclose(a, b, atol=1e-6)

    def test_missing_block_named(self, setup, tmp_path):
        _, _, tdoc, params = setup
        blocks = split_blocks(tdoc, m=32)
        mats = [encode_block(b, params) for b in blocks]
        write_precomputed(tmp_path, tdoc.doc_id, mats)
        (tmp_path / f"{tdoc.doc_id}.1.f32").unlink()
        with pytest.raises(DataError, match=rf"{tdoc.doc_id}\.1"):
            load_precomputed(tmp_path, tdoc, m=32)

    def test_row_count_mismatch(self, setup, tmp_path):
        _, _, tdoc, params = setup
        blocks = split_blocks(tdoc, m=32)
        mats = [encode_block(b, params) for b in blocks]
        mats[1] = mats[1][:-2]
        write_precomputed(tmp_path, tdoc.doc_id, mats)
        with pytest.raises(DataError, match="row count"):
            load_precomputed(tmp_path, tdoc, m=32)

    def test_nan_named_with_location(self, setup, tmp_path):
        _, _, tdoc, params = setup
        blocks = split_blocks(tdoc, m=32)
        mats = [encode_block(b, params).copy() for b in blocks]
        mats[0][5, 2] = np.nan
        write_precomputed(tmp_path, tdoc.doc_id, mats)
        with pytest.raises(DataError, match="row 5"):
            load_precomputed(tmp_path, tdoc, m=32)
