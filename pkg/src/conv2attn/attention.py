"""Multi-head self-attention over patch tokens with relative position bias.

Attention scores for head k are (X Wq_k)(X Wk_k)^T / sqrt(d) + B_k, where
B_k[i, j] is looked up from a per-head table indexed by the grid offset
(query position - key position). Rows are softmaxed, applied to X Wv_k,
heads concatenated in index order and projected by the shared Wo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._arrays import frozen_array
from .errors import DimensionError, NumericError
from .patches import PatchGeometry, PatchSequence


@dataclass(frozen=True)
class RelativeBiasTable:
    """One scalar per relative grid offset, for a grid_rows x grid_cols grid.

    values[dr + grid_rows - 1, dc + grid_cols - 1] is the bias added to the
    score of any (query, key) pair whose positions differ by (dr, dc),
    query minus key.
    """

    grid_rows: int
    grid_cols: int
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.values, name="bias table")
        expected = (2 * self.grid_rows - 1, 2 * self.grid_cols - 1)
        if arr.ndim != 2 or arr.shape != expected:
            raise DimensionError(
                f"bias table for a {self.grid_rows} x {self.grid_cols} grid must have "
                f"shape {expected}, got {arr.shape}"
            )
        object.__setattr__(self, "values", arr)

    def offset_value(self, dr: int, dc: int) -> float:
        if abs(dr) >= self.grid_rows or abs(dc) >= self.grid_cols:
            raise DimensionError(f"offset ({dr}, {dc}) not realizable on this grid")
        return float(self.values[dr + self.grid_rows - 1, dc + self.grid_cols - 1])

    def expand(self, geometry: PatchGeometry) -> np.ndarray:
        """Materialize the full N x N bias matrix for the given grid."""
        if (geometry.grid_rows, geometry.grid_cols) != (self.grid_rows, self.grid_cols):
            raise DimensionError(
                f"table covers a {self.grid_rows} x {self.grid_cols} grid, "
                f"sequence uses {geometry.grid_rows} x {geometry.grid_cols}"
            )
        idx = np.arange(geometry.num_tokens)
        rows, cols = np.divmod(idx, geometry.grid_cols)
        dr = rows[:, None] - rows[None, :] + self.grid_rows - 1
        dc = cols[:, None] - cols[None, :] + self.grid_cols - 1
        return self.values[dr, dc]


@dataclass(frozen=True)
class MhsaWeights:
    """Per-head projections plus per-head bias tables and the shared output map.

    w_q, w_k, w_v are stacked (n_heads, d, d_head); w_o is (n_heads * d_head,
    d_out); bias holds one table per head, all for the same grid.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    bias: tuple[RelativeBiasTable, ...]

    def __post_init__(self) -> None:
        q = frozen_array(self.w_q, name="w_q")
        k = frozen_array(self.w_k, name="w_k")
        v = frozen_array(self.w_v, name="w_v")
        o = frozen_array(self.w_o, name="w_o")
        if q.ndim != 3:
            raise DimensionError(f"w_q must be (heads, d, d_head), got shape {q.shape}")
        if k.shape != q.shape or v.shape != q.shape:
            raise DimensionError(
                f"w_q/w_k/w_v shapes differ: {q.shape}, {k.shape}, {v.shape}"
            )
        heads, _, d_head = q.shape
        if o.ndim != 2 or o.shape[0] != heads * d_head:
            raise DimensionError(
                f"w_o must have {heads * d_head} rows (heads * d_head), got shape {o.shape}"
            )
        bias = tuple(self.bias)
        if len(bias) != heads:
            raise DimensionError(f"{heads} heads need {heads} bias tables, got {len(bias)}")
        grids = {(t.grid_rows, t.grid_cols) for t in bias}
        if len(grids) > 1:
            raise DimensionError(f"bias tables cover different grids: {sorted(grids)}")
        object.__setattr__(self, "w_q", q)
        object.__setattr__(self, "w_k", k)
        object.__setattr__(self, "w_v", v)
        object.__setattr__(self, "w_o", o)
        object.__setattr__(self, "bias", bias)

    @property
    def n_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def dim(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_head(self) -> int:
        return self.w_q.shape[2]

    @property
    def d_out(self) -> int:
        return self.w_o.shape[1]

    @property
    def grid(self) -> tuple[int, int]:
        return (self.bias[0].grid_rows, self.bias[0].grid_cols)

    @property
    def dtype(self) -> np.dtype:
        return self.w_q.dtype


@dataclass(frozen=True)
class AttentionTrace:
    """Post-softmax attention matrices, stacked (n_heads, N, N)."""

    matrices: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.matrices, name="attention matrices")
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise DimensionError(
                f"attention matrices must be (heads, N, N), got shape {arr.shape}"
            )
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise NumericError("attention entries must lie in [0, 1]")
        sums = arr.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise NumericError("attention rows must sum to 1 within 1e-6")
        object.__setattr__(self, "matrices", arr)

    @property
    def n_heads(self) -> int:
        return self.matrices.shape[0]


def softmax_row(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis (max subtraction)."""
    s = np.asarray(scores)
    if not np.all(np.isfinite(s)):
        raise NumericError("softmax received non-finite scores")
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def mhsa_forward(
    seq: PatchSequence, weights: MhsaWeights, return_trace: bool = False
) -> PatchSequence | tuple[PatchSequence, AttentionTrace]:
    """Run the attention layer over a token sequence.

    Returns a sequence of shape N x d_out over the same grid; with
    return_trace=True also returns the per-head attention matrices.
    """
    if seq.dim != weights.dim:
        raise DimensionError(
            f"sequence dimension {seq.dim} does not match layer dimension {weights.dim}"
        )
    geom = seq.geometry
    if (geom.grid_rows, geom.grid_cols) != weights.grid:
        raise DimensionError(
            f"bias tables cover a {weights.grid} grid but the sequence is "
            f"{geom.grid_rows} x {geom.grid_cols}"
        )
    x = seq.data
    scale = 1.0 / math.sqrt(weights.dim)
    head_outputs = []
    traces = []
    for h in range(weights.n_heads):
        q = x @ weights.w_q[h]
        k = x @ weights.w_k[h]
        v = x @ weights.w_v[h]
        scores = (q @ k.T) * scale + weights.bias[h].expand(geom)
        if not np.all(np.isfinite(scores)):
            raise NumericError(f"non-finite attention scores in head {h}")
        attn = softmax_row(scores)
        head_outputs.append(attn @ v)
        if return_trace:
            traces.append(attn)
    concat = np.concatenate(head_outputs, axis=1)
    out = PatchSequence(geometry=geom, data=concat @ weights.w_o)
    if return_trace:
        return out, AttentionTrace(matrices=np.stack(traces))
    return out
