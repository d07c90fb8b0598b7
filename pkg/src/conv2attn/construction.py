"""Build attention weights that reproduce a convolution exactly.

The construction assigns one head to each patch offset a K x K convolution
can reach (the (2R+1)^2 offsets with R = ceil((K-1)/(2P))). Each head uses
zero query/key projections and a large single-offset position bias, so its
softmax row collapses onto the token at that offset; the value projection
is the identity and the entire kernel lands in the shared output
projection. Boundary handling is configurable:

* "phantom": evaluation surrounds the grid with R rings of all-zero tokens
  before the forward pass and crops them after. Every head then finds its
  target token, and the zeros reproduce zero-padded convolution exactly.
* "strict": no extra tokens. Equality is guaranteed only for patches at
  grid distance >= R from every edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MhsaWeights, RelativeBiasTable, mhsa_forward
from .convolution import ConvKernel
from .errors import DimensionError, InvalidArgumentError
from .patches import (
    Image,
    PatchGeometry,
    crop_patch_grid,
    pad_patch_grid,
    patchify,
    unpatchify,
)

DEFAULT_BIAS_SCALE = 40.0

BOUNDARY_PHANTOM = "phantom"
BOUNDARY_STRICT = "strict"
BOUNDARY_MODES = (BOUNDARY_PHANTOM, BOUNDARY_STRICT)


def ring_radius(kernel_size: int, patch: int) -> int:
    """Patch-offset radius reached by a K x K kernel: ceil((K-1)/(2P))."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidArgumentError("kernel size must be odd")
    if patch < 1:
        raise InvalidArgumentError(f"patch resolution must be >= 1, got {patch}")
    return -(-(kernel_size - 1) // (2 * patch))


def head_count(kernel_size: int, patch: int) -> int:
    """Number of heads the construction uses: (2 * ring_radius + 1)^2."""
    return (2 * ring_radius(kernel_size, patch) + 1) ** 2


@dataclass(frozen=True)
class OffsetSet:
    """The patch offsets {-R..R}^2, row-major; one attention head per offset.

    Offsets point from the query patch to the token it gathers (key = query
    + offset).
    """

    radius: int
    offsets: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise InvalidArgumentError(f"radius must be >= 0, got {self.radius}")
        expected = tuple(
            (dr, dc)
            for dr in range(-self.radius, self.radius + 1)
            for dc in range(-self.radius, self.radius + 1)
        )
        if tuple(self.offsets) != expected:
            raise InvalidArgumentError("offsets must enumerate {-R..R}^2 row-major")
        object.__setattr__(self, "offsets", tuple(self.offsets))

    @classmethod
    def for_conv(cls, kernel_size: int, patch: int) -> "OffsetSet":
        r = ring_radius(kernel_size, patch)
        offsets = tuple(
            (dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1)
        )
        return cls(radius=r, offsets=offsets)

    def __len__(self) -> int:
        return len(self.offsets)


def build_hard_bias(
    delta: tuple[int, int], grid: PatchGeometry, scale: float, dtype=np.float64
) -> RelativeBiasTable:
    """Bias table with `scale` at relative offset `delta` and 0 elsewhere.

    Table offsets are query minus key, so after the softmax each query row
    puts weight >= 1 - (N-1) * exp(-scale) on the key at position
    query - delta, whenever that key exists.
    """
    if not np.isfinite(scale) or scale < 0:
        raise InvalidArgumentError(f"bias scale must be finite and >= 0, got {scale}")
    dr, dc = delta
    if abs(dr) >= grid.grid_rows or abs(dc) >= grid.grid_cols:
        raise InvalidArgumentError(
            f"offset ({dr}, {dc}) is not realizable on a "
            f"{grid.grid_rows} x {grid.grid_cols} grid"
        )
    values = np.zeros((2 * grid.grid_rows - 1, 2 * grid.grid_cols - 1), dtype=dtype)
    values[dr + grid.grid_rows - 1, dc + grid.grid_cols - 1] = scale
    return RelativeBiasTable(grid_rows=grid.grid_rows, grid_cols=grid.grid_cols, values=values)


def build_output_projection(kernel: ConvKernel, patch: int) -> np.ndarray:
    """Output projection that turns gathered patch features into conv outputs.

    Shape (N_H * P^2 * D_in, P^2 * D_out). Block (r, s, t) couples pixel s
    of the patch at offset r to output pixel t of the query patch: it holds
    kernel entry (du, dv) when the two pixels are (du, dv) apart and that
    offset lies inside the kernel window, else zero.
    """
    p = patch
    if p < 1:
        raise InvalidArgumentError(f"patch resolution must be >= 1, got {p}")
    offsets = OffsetSet.for_conv(kernel.size, p)
    half = kernel.half
    d_in, d_out = kernel.channels_in, kernel.channels_out
    d = p * p * d_in
    d_o = p * p * d_out

    pix = np.arange(p * p)
    u, v = np.divmod(pix, p)
    # du[s, t] = row distance between key pixel s and query pixel t.
    rel_u = u[:, None] - u[None, :]
    rel_v = v[:, None] - v[None, :]

    w_o = np.zeros((len(offsets) * d, d_o), dtype=kernel.dtype)
    blocks = w_o.reshape(len(offsets), p * p, d_in, p * p, d_out)
    for r, (dr, dc) in enumerate(offsets.offsets):
        du = dr * p + rel_u
        dv = dc * p + rel_v
        in_field = (np.abs(du) <= half) & (np.abs(dv) <= half)
        x = np.where(in_field, du + half, 0)
        y = np.where(in_field, dv + half, 0)
        gathered = kernel.weights[x, y]  # (P^2, P^2, D_in, D_out)
        gathered = np.where(in_field[:, :, None, None], gathered, 0.0)
        blocks[r] = gathered.transpose(0, 2, 1, 3)
    return w_o


@dataclass(frozen=True)
class ConvertedModel:
    """Attention weights that compute the same function as a convolution.

    `weights` carries bias tables for a nominal (2R+1)^2 grid; evaluation
    re-materializes the same hard-bias scheme for the grid of the incoming
    image via :meth:`weights_for_grid` (the tables are fully determined by
    `offsets` and `bias_scale`).
    """

    weights: MhsaWeights
    patch: int
    kernel_size: int
    channels_in: int
    channels_out: int
    bias_scale: float
    boundary: str
    offsets: OffsetSet

    def __post_init__(self) -> None:
        if self.boundary not in BOUNDARY_MODES:
            raise InvalidArgumentError(
                f"boundary mode must be one of {BOUNDARY_MODES}, got {self.boundary!r}"
            )
        if not np.isfinite(self.bias_scale) or self.bias_scale < 0:
            raise InvalidArgumentError(
                f"bias scale must be finite and >= 0, got {self.bias_scale}"
            )
        expected_offsets = OffsetSet.for_conv(self.kernel_size, self.patch)
        if self.offsets != expected_offsets:
            raise InvalidArgumentError(
                f"offset set does not match kernel size {self.kernel_size} and "
                f"patch {self.patch}"
            )
        w = self.weights
        n_h = head_count(self.kernel_size, self.patch)
        d = self.patch * self.patch * self.channels_in
        d_o = self.patch * self.patch * self.channels_out
        if w.n_heads != n_h:
            raise InvalidArgumentError(f"model must have {n_h} heads, got {w.n_heads}")
        if w.dim != d or w.d_head != d or w.d_out != d_o:
            raise DimensionError(
                f"expected dims d = d_head = {d} and d_out = {d_o}, got "
                f"d = {w.dim}, d_head = {w.d_head}, d_out = {w.d_out}"
            )
        if np.any(w.w_q) or np.any(w.w_k):
            raise InvalidArgumentError(
                "converted models use zero query/key projections; found nonzero entries"
            )

    @property
    def n_heads(self) -> int:
        return self.weights.n_heads

    def weights_for_grid(self, grid: PatchGeometry) -> MhsaWeights:
        """Weights with hard-bias tables materialized for the given grid."""
        if (grid.grid_rows, grid.grid_cols) == self.weights.grid:
            return self.weights
        tables = tuple(
            build_hard_bias((-dr, -dc), grid, self.bias_scale, dtype=self.weights.dtype)
            for dr, dc in self.offsets.offsets
        )
        return MhsaWeights(
            w_q=self.weights.w_q,
            w_k=self.weights.w_k,
            w_v=self.weights.w_v,
            w_o=self.weights.w_o,
            bias=tables,
        )


def conv_to_mhsa(
    kernel: ConvKernel,
    patch: int,
    bias_scale: float = DEFAULT_BIAS_SCALE,
    boundary: str = BOUNDARY_PHANTOM,
) -> ConvertedModel:
    """Convert a convolution kernel into an equivalent attention layer.

    Head r gathers the token at patch offset offsets[r] (zero query/key
    projections, identity values, hard bias), and the output projection
    rearranges the gathered features into convolution outputs.
    """
    if boundary not in BOUNDARY_MODES:
        raise InvalidArgumentError(
            f"boundary mode must be one of {BOUNDARY_MODES}, got {boundary!r}"
        )
    offsets = OffsetSet.for_conv(kernel.size, patch)
    n_h = len(offsets)
    d = patch * patch * kernel.channels_in
    dtype = kernel.dtype

    w_q = np.zeros((n_h, d, d), dtype=dtype)
    w_k = np.zeros((n_h, d, d), dtype=dtype)
    w_v = np.broadcast_to(np.eye(d, dtype=dtype), (n_h, d, d)).copy()
    w_o = build_output_projection(kernel, patch)

    # Nominal grid: the smallest one on which every offset is realizable.
    side = 2 * offsets.radius + 1
    nominal = PatchGeometry(patch=patch, grid_rows=side, grid_cols=side)
    # The table offset is query - key, so gathering the token at +delta
    # means placing the spike at -delta.
    tables = tuple(
        build_hard_bias((-dr, -dc), nominal, bias_scale, dtype=dtype)
        for dr, dc in offsets.offsets
    )
    weights = MhsaWeights(w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o, bias=tables)
    return ConvertedModel(
        weights=weights,
        patch=patch,
        kernel_size=kernel.size,
        channels_in=kernel.channels_in,
        channels_out=kernel.channels_out,
        bias_scale=float(bias_scale),
        boundary=boundary,
        offsets=offsets,
    )


def evaluate_converted(model: ConvertedModel, img: Image) -> Image:
    """Run the converted attention layer on an image.

    Phantom mode pads the token grid with R rings of zero tokens, runs the
    forward pass, crops the rings and reassembles the image; strict mode
    runs on the bare grid (outputs are only guaranteed on interior patches).
    """
    if img.channels != model.channels_in:
        raise DimensionError(
            f"image has {img.channels} channels but the model expects {model.channels_in}"
        )
    seq = patchify(img, model.patch)
    if model.boundary == BOUNDARY_PHANTOM:
        rings = model.offsets.radius
        padded = pad_patch_grid(seq, rings)
        out = mhsa_forward(padded, model.weights_for_grid(padded.geometry))
        out = crop_patch_grid(out, rings)
    else:
        out = mhsa_forward(seq, model.weights_for_grid(seq.geometry))
    return unpatchify(out, model.channels_out)


def widen_weights(
    weights: MhsaWeights, d_head: int | None = None, d_out: int | None = None
) -> MhsaWeights:
    """Zero-pad weights to a larger head size and/or output dimension.

    The widened layer computes the same function, with extra output
    coordinates fixed at zero. Useful for embedding a converted model into
    an architecture with prescribed d_head/d_out.
    """
    new_dh = weights.d_head if d_head is None else d_head
    new_do = weights.d_out if d_out is None else d_out
    if new_dh < weights.d_head or new_do < weights.d_out:
        raise InvalidArgumentError(
            f"widening cannot shrink dims: d_head {weights.d_head} -> {new_dh}, "
            f"d_out {weights.d_out} -> {new_do}"
        )
    heads, d = weights.n_heads, weights.dim
    pad_h = new_dh - weights.d_head

    def pad_proj(w: np.ndarray) -> np.ndarray:
        return np.pad(w, ((0, 0), (0, 0), (0, pad_h)))

    old_blocks = weights.w_o.reshape(heads, weights.d_head, weights.d_out)
    new_o = np.zeros((heads, new_dh, new_do), dtype=weights.dtype)
    new_o[:, : weights.d_head, : weights.d_out] = old_blocks
    return MhsaWeights(
        w_q=pad_proj(weights.w_q),
        w_k=pad_proj(weights.w_k),
        w_v=pad_proj(weights.w_v),
        w_o=new_o.reshape(heads * new_dh, new_do),
        bias=weights.bias,
    )
