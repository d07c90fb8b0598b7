import math

import numpy as np
import pytest

from conv2attn import (
    DimensionError,
    MhsaWeights,
    NumericError,
    PatchGeometry,
    PatchSequence,
    RelativeBiasTable,
    build_hard_bias,
    mhsa_forward,
    softmax_row,
)
from oracles import mhsa_loops, softmax_longdouble


def zero_table(rows, cols, dtype=np.float64):
    return RelativeBiasTable(
        grid_rows=rows, grid_cols=cols, values=np.zeros((2 * rows - 1, 2 * cols - 1), dtype=dtype)
    )


def make_weights(rng, heads, d, d_head, d_out, rows, cols, tables=None):
    return MhsaWeights(
        w_q=rng.normal(size=(heads, d, d_head)),
        w_k=rng.normal(size=(heads, d, d_head)),
        w_v=rng.normal(size=(heads, d, d_head)),
        w_o=rng.normal(size=(heads * d_head, d_out)),
        bias=tables or tuple(zero_table(rows, cols) for _ in range(heads)),
    )


def make_sequence(rng, rows, cols, d, patch=1):
    geom = PatchGeometry(patch=patch, grid_rows=rows, grid_cols=cols)
    return PatchSequence(geometry=geom, data=rng.normal(size=(rows * cols, d)))


class TestSoftmax:
    def test_equal_scores_give_uniform(self):
        for n in (1, 2, 7):
            np.testing.assert_allclose(softmax_row(np.full(n, 3.25)), np.full(n, 1.0 / n))

    def test_large_spike_saturates(self):
        n = 10
        scores = np.zeros(n)
        scores[0] = 40.0
        out = softmax_row(scores)
        expected = math.exp(40.0) / (math.exp(40.0) + n - 1)
        assert out[0] == pytest.approx(expected, rel=1e-15)
        assert out[0] == pytest.approx(1.0, abs=1e-15)

    def test_matches_extended_precision_oracle(self, rng):
        for _ in range(20):
            scores = rng.normal(scale=5.0, size=17)
            np.testing.assert_allclose(
                softmax_row(scores), softmax_longdouble(scores), atol=1e-14
            )

    def test_sums_to_one(self, rng):
        out = softmax_row(rng.normal(size=(6, 11)))
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            softmax_row(np.array([1.0, np.inf]))


class TestForward:
    def test_uniform_attention_averages_tokens(self, rng):
        d = 3
        seq = make_sequence(rng, 2, 2, d)
        eye = np.eye(d)[None]
        weights = MhsaWeights(
            w_q=np.zeros((1, d, d)),
            w_k=np.zeros((1, d, d)),
            w_v=eye.copy(),
            w_o=np.eye(d),
            bias=(zero_table(2, 2),),
        )
        out = mhsa_forward(seq, weights)
        mean = seq.data.mean(axis=0)
        np.testing.assert_allclose(out.data, np.tile(mean, (4, 1)), atol=1e-12)

    def test_hard_self_attention_is_identity(self, rng):
        d = 4
        geom = PatchGeometry(patch=2, grid_rows=3, grid_cols=3)
        seq = PatchSequence(
            geometry=geom, data=rng.normal(size=(9, d)).astype(np.float32)
        )
        table = build_hard_bias((0, 0), geom, 40.0, dtype=np.float32)
        weights = MhsaWeights(
            w_q=np.zeros((1, d, d), dtype=np.float32),
            w_k=np.zeros((1, d, d), dtype=np.float32),
            w_v=np.eye(d, dtype=np.float32)[None].copy(),
            w_o=np.eye(d, dtype=np.float32),
            bias=(table,),
        )
        out = mhsa_forward(seq, weights)
        assert out.dtype == np.float32
        np.testing.assert_allclose(out.data, seq.data, atol=1e-6)

    def test_matches_loop_oracle(self, rng):
        seq = make_sequence(rng, 3, 3, 4)
        tables = tuple(
            RelativeBiasTable(grid_rows=3, grid_cols=3, values=rng.normal(size=(5, 5)))
            for _ in range(2)
        )
        weights = make_weights(rng, 2, 4, 4, 5, 3, 3, tables=tables)
        bias_full = np.stack([t.expand(seq.geometry) for t in weights.bias])
        want = mhsa_loops(
            seq.data, weights.w_q, weights.w_k, weights.w_v, weights.w_o, bias_full
        )
        got = mhsa_forward(seq, weights)
        assert np.abs(want - got.data).max() <= 1e-10

    def test_trace_rows_are_distributions(self, rng):
        seq = make_sequence(rng, 2, 3, 3)
        weights = make_weights(rng, 2, 3, 4, 2, 2, 3)
        _, trace = mhsa_forward(seq, weights, return_trace=True)
        assert trace.n_heads == 2
        assert trace.matrices.min() >= 0.0
        np.testing.assert_allclose(trace.matrices.sum(axis=2), 1.0, atol=1e-6)

    def test_bias_shift_invariance(self, rng):
        seq = make_sequence(rng, 2, 2, 3)
        weights = make_weights(rng, 2, 3, 3, 3, 2, 2)
        shifted_tables = tuple(
            RelativeBiasTable(grid_rows=2, grid_cols=2, values=t.values + 7.5)
            for t in weights.bias
        )
        shifted = MhsaWeights(
            w_q=weights.w_q, w_k=weights.w_k, w_v=weights.w_v, w_o=weights.w_o,
            bias=shifted_tables,
        )
        np.testing.assert_allclose(
            mhsa_forward(seq, weights).data, mhsa_forward(seq, shifted).data, atol=1e-10
        )

    def test_head_permutation_invariance(self, rng):
        heads, d, d_head, d_out = 3, 4, 2, 5
        seq = make_sequence(rng, 2, 2, d)
        weights = make_weights(rng, heads, d, d_head, d_out, 2, 2)
        perm = [2, 0, 1]
        blocks = weights.w_o.reshape(heads, d_head, d_out)
        permuted = MhsaWeights(
            w_q=weights.w_q[perm],
            w_k=weights.w_k[perm],
            w_v=weights.w_v[perm],
            w_o=blocks[perm].reshape(heads * d_head, d_out),
            bias=tuple(weights.bias[i] for i in perm),
        )
        np.testing.assert_allclose(
            mhsa_forward(seq, weights).data, mhsa_forward(seq, permuted).data, atol=1e-12
        )

    def test_zero_query_key_makes_layer_linear(self, rng):
        d = 3
        tables = tuple(
            RelativeBiasTable(grid_rows=2, grid_cols=2, values=rng.normal(size=(3, 3)))
            for _ in range(2)
        )
        weights = MhsaWeights(
            w_q=np.zeros((2, d, d)),
            w_k=np.zeros((2, d, d)),
            w_v=rng.normal(size=(2, d, d)),
            w_o=rng.normal(size=(2 * d, d)),
            bias=tables,
        )
        geom = PatchGeometry(patch=1, grid_rows=2, grid_cols=2)
        x = rng.normal(size=(4, d))
        y = rng.normal(size=(4, d))
        a, b = rng.normal(), rng.normal()
        lhs = mhsa_forward(PatchSequence(geometry=geom, data=a * x + b * y), weights).data
        rhs = (
            a * mhsa_forward(PatchSequence(geometry=geom, data=x), weights).data
            + b * mhsa_forward(PatchSequence(geometry=geom, data=y), weights).data
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_dimension_mismatch_rejected(self, rng):
        seq = make_sequence(rng, 2, 2, 3)
        weights = make_weights(rng, 1, 4, 4, 4, 2, 2)
        with pytest.raises(DimensionError):
            mhsa_forward(seq, weights)

    def test_wrong_grid_rejected(self, rng):
        seq = make_sequence(rng, 2, 2, 3)
        weights = make_weights(rng, 1, 3, 3, 3, 3, 3)
        with pytest.raises(DimensionError):
            mhsa_forward(seq, weights)

    def test_non_finite_scores_rejected(self, rng):
        d = 2
        geom = PatchGeometry(patch=1, grid_rows=1, grid_cols=2)
        seq = PatchSequence(geometry=geom, data=np.full((2, d), 1e160))
        weights = MhsaWeights(
            w_q=np.full((1, d, d), 1e160),
            w_k=np.full((1, d, d), 1e160),
            w_v=np.zeros((1, d, d)),
            w_o=np.zeros((d, d)),
            bias=(zero_table(1, 2),),
        )
        with pytest.raises(NumericError), np.errstate(over="ignore"):
            mhsa_forward(seq, weights)


def test_bias_table_shape_validated():
    with pytest.raises(DimensionError):
        RelativeBiasTable(grid_rows=2, grid_cols=2, values=np.zeros((3, 4)))


def test_bias_table_expand_matches_offset_lookup(rng):
    table = RelativeBiasTable(grid_rows=2, grid_cols=3, values=rng.normal(size=(3, 5)))
    geom = PatchGeometry(patch=1, grid_rows=2, grid_cols=3)
    full = table.expand(geom)
    for i in range(6):
        for j in range(6):
            qi, qj = divmod(i, 3)
            ki, kj = divmod(j, 3)
            assert full[i, j] == table.offset_value(qi - ki, qj - kj)
