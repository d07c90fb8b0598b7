"""Reference 2D convolution: stride 1, zero padding, same-size output.

This is the ground truth that every attention-equivalence check in the
package compares against, so it stays deliberately simple: one dense
accumulation per kernel offset, offsets visited row-major, channels summed
inside the matmul.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._arrays import frozen_array
from .errors import CapacityError, DimensionError, InvalidArgumentError
from .patches import Image

DEFAULT_LINEAR_MAP_CAP = 4096


@dataclass(frozen=True)
class ConvKernel:
    """K x K x D_in x D_out weights; spatial index = offset + K // 2."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.weights, name="kernel weights")
        if arr.ndim != 4:
            raise DimensionError(
                f"kernel weights must be K x K x D_in x D_out, got shape {arr.shape}"
            )
        k = arr.shape[0]
        if arr.shape[1] != k:
            raise DimensionError(f"kernel must be square, got {arr.shape[0]} x {arr.shape[1]}")
        if k % 2 == 0:
            raise InvalidArgumentError("kernel size must be odd")
        if min(arr.shape[2:]) < 1:
            raise DimensionError(f"kernel channel counts must be >= 1, got {arr.shape}")
        object.__setattr__(self, "weights", arr)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def channels_in(self) -> int:
        return self.weights.shape[2]

    @property
    def channels_out(self) -> int:
        return self.weights.shape[3]

    @property
    def half(self) -> int:
        return self.weights.shape[0] // 2

    @property
    def dtype(self) -> np.dtype:
        return self.weights.dtype


def identity_kernel(size: int, channels: int, dtype=np.float64) -> ConvKernel:
    """Kernel that maps every image to itself: 1 at the center for c -> c."""
    w = np.zeros((size, size, channels, channels), dtype=dtype)
    mid = size // 2
    for c in range(channels):
        w[mid, mid, c, c] = 1.0
    return ConvKernel(weights=w)


def random_kernel(
    size: int,
    channels_in: int,
    channels_out: int,
    rng: np.random.Generator,
    dtype=np.float64,
) -> ConvKernel:
    """Standard-normal kernel, useful for seeded experiments."""
    w = rng.normal(size=(size, size, channels_in, channels_out)).astype(dtype)
    return ConvKernel(weights=w)


def conv2d(img: Image, kernel: ConvKernel) -> Image:
    """Apply the kernel with zero padding; output is H x W x D_out.

    out[i, j] = sum over offsets (d1, d2) of x[i + d1, j + d2] @ w[d1, d2]
    with out-of-bounds pixels read as zero.
    """
    if img.channels != kernel.channels_in:
        raise DimensionError(
            f"image has {img.channels} channels but kernel expects {kernel.channels_in}"
        )
    h, w = img.height, img.width
    half = kernel.half
    out = np.zeros((h, w, kernel.channels_out), dtype=np.result_type(img.dtype, kernel.dtype))
    x = img.data
    for d1 in range(-half, half + 1):
        for d2 in range(-half, half + 1):
            dst_r = slice(max(0, -d1), min(h, h - d1))
            dst_c = slice(max(0, -d2), min(w, w - d2))
            if dst_r.start >= dst_r.stop or dst_c.start >= dst_c.stop:
                continue
            src_r = slice(dst_r.start + d1, dst_r.stop + d1)
            src_c = slice(dst_c.start + d2, dst_c.stop + d2)
            out[dst_r, dst_c] += x[src_r, src_c] @ kernel.weights[d1 + half, d2 + half]
    return Image(data=out)


def conv_as_linear_map(
    kernel: ConvKernel, height: int, width: int, cap: int = DEFAULT_LINEAR_MAP_CAP
) -> np.ndarray:
    """Dense matrix M with vec(conv2d(X)) = M @ vec(X), row-major vec.

    Only intended for small problems; refuses to materialize anything with
    H * W * max(D_in, D_out) above `cap`.
    """
    if height < 1 or width < 1:
        raise InvalidArgumentError(f"image size must be >= 1, got {height} x {width}")
    budget = height * width * max(kernel.channels_in, kernel.channels_out)
    if budget > cap:
        raise CapacityError(
            f"H*W*max(D_in, D_out) = {budget} exceeds the dense-materialization cap {cap}"
        )
    d_in, d_out = kernel.channels_in, kernel.channels_out
    half = kernel.half
    n = height * width
    mat = np.zeros((n * d_out, n * d_in), dtype=kernel.dtype)
    blocks = mat.reshape(n, d_out, n, d_in)
    for d1 in range(-half, half + 1):
        for d2 in range(-half, half + 1):
            rows = np.arange(max(0, -d1), min(height, height - d1))
            cols = np.arange(max(0, -d2), min(width, width - d2))
            if rows.size == 0 or cols.size == 0:
                continue
            out_pix = (rows[:, None] * width + cols[None, :]).reshape(-1)
            in_pix = ((rows[:, None] + d1) * width + (cols[None, :] + d2)).reshape(-1)
            blocks[out_pix, :, in_pix, :] = kernel.weights[d1 + half, d2 + half].T
    return mat
