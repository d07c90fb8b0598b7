"""Dense image/token containers and the pixel <-> flattened-patch bijection.

Conventions used everywhere in this package:

* all indices are 0-based,
* token order is row-major over the patch grid (token = row * grid_cols + col),
* within a patch, pixels are flattened row-major and each pixel keeps its
  channels contiguous (feature index = (u * P + v) * C + c).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._arrays import frozen_array
from .errors import DimensionError, InvalidArgumentError


@dataclass(frozen=True)
class Image:
    """An H x W x C pixel tensor (row-major, channel-minor)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.data, name="image data")
        if arr.ndim != 3:
            raise DimensionError(f"image data must be H x W x C, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"image dimensions must all be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype


@dataclass(frozen=True)
class PatchGeometry:
    """A grid of non-overlapping P x P patches laid over an image."""

    patch: int
    grid_rows: int
    grid_cols: int

    def __post_init__(self) -> None:
        if self.patch < 1:
            raise InvalidArgumentError(f"patch resolution must be >= 1, got {self.patch}")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise InvalidArgumentError(
                f"grid must be at least 1 x 1, got {self.grid_rows} x {self.grid_cols}"
            )

    @classmethod
    def for_image(cls, height: int, width: int, patch: int) -> "PatchGeometry":
        if patch < 1:
            raise InvalidArgumentError(f"patch resolution must be >= 1, got {patch}")
        if height % patch or width % patch:
            raise DimensionError(
                f"patch resolution {patch} must divide image size {height} x {width}"
            )
        return cls(patch=patch, grid_rows=height // patch, grid_cols=width // patch)

    @property
    def num_tokens(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def height(self) -> int:
        return self.grid_rows * self.patch

    @property
    def width(self) -> int:
        return self.grid_cols * self.patch

    def token_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.grid_rows and 0 <= col < self.grid_cols):
            raise InvalidArgumentError(f"grid position ({row}, {col}) outside {self}")
        return row * self.grid_cols + col

    def token_position(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.num_tokens:
            raise InvalidArgumentError(f"token index {index} outside {self}")
        return divmod(index, self.grid_cols)


@dataclass(frozen=True)
class PatchSequence:
    """An N x d sequence of token features over a patch grid."""

    geometry: PatchGeometry
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = frozen_array(self.data, name="sequence data")
        if arr.ndim != 2:
            raise DimensionError(f"sequence data must be N x d, got shape {arr.shape}")
        if arr.shape[0] != self.geometry.num_tokens:
            raise DimensionError(
                f"sequence has {arr.shape[0]} tokens but geometry expects "
                f"{self.geometry.num_tokens}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def num_tokens(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype


def patchify(img: Image, patch: int) -> PatchSequence:
    """Reshape an image into its sequence of flattened P x P patches.

    Token (g_h, g_w) holds the P*P pixels of that patch, row-major, each
    pixel's channels contiguous, so d = P*P*C.
    """
    geom = PatchGeometry.for_image(img.height, img.width, patch)
    x = img.data.reshape(geom.grid_rows, patch, geom.grid_cols, patch, img.channels)
    tokens = x.transpose(0, 2, 1, 3, 4).reshape(geom.num_tokens, patch * patch * img.channels)
    return PatchSequence(geometry=geom, data=tokens)


def unpatchify(seq: PatchSequence, channels: int) -> Image:
    """Exact inverse of :func:`patchify` under the same index conventions."""
    if channels < 1:
        raise InvalidArgumentError(f"channels must be >= 1, got {channels}")
    p = seq.geometry.patch
    if seq.dim != p * p * channels:
        raise DimensionError(
            f"token dimension {seq.dim} is not patch*patch*channels = {p * p * channels}"
        )
    g = seq.geometry
    x = seq.data.reshape(g.grid_rows, g.grid_cols, p, p, channels)
    pixels = x.transpose(0, 2, 1, 3, 4).reshape(g.height, g.width, channels)
    return Image(data=pixels)


def interior_token_indices(rows: int, cols: int, rings: int) -> np.ndarray:
    """Token indices of an interior rows x cols block inside a grid padded
    with `rings` extra rows/cols on every side. Row-major, int64."""
    if rings < 0:
        raise InvalidArgumentError(f"rings must be >= 0, got {rings}")
    padded_cols = cols + 2 * rings
    r = np.arange(rows, dtype=np.int64) + rings
    c = np.arange(cols, dtype=np.int64) + rings
    return (r[:, None] * padded_cols + c[None, :]).reshape(-1)


def pad_patch_grid(seq: PatchSequence, rings: int) -> PatchSequence:
    """Surround the token grid with `rings` rings of all-zero tokens.

    Original tokens are preserved bit-exactly; the original window sits at
    grid offset (rings, rings) and can be recovered with
    :func:`crop_patch_grid` using the same ring count.
    """
    if rings < 0:
        raise InvalidArgumentError(f"rings must be >= 0, got {rings}")
    if rings == 0:
        return seq
    g = seq.geometry
    padded = PatchGeometry(
        patch=g.patch, grid_rows=g.grid_rows + 2 * rings, grid_cols=g.grid_cols + 2 * rings
    )
    data = np.zeros((padded.num_tokens, seq.dim), dtype=seq.dtype)
    data[interior_token_indices(g.grid_rows, g.grid_cols, rings)] = seq.data
    return PatchSequence(geometry=padded, data=data)


def crop_patch_grid(seq: PatchSequence, rings: int) -> PatchSequence:
    """Drop `rings` rings of tokens from every side of the grid."""
    if rings < 0:
        raise InvalidArgumentError(f"rings must be >= 0, got {rings}")
    if rings == 0:
        return seq
    g = seq.geometry
    rows = g.grid_rows - 2 * rings
    cols = g.grid_cols - 2 * rings
    if rows < 1 or cols < 1:
        raise DimensionError(
            f"cannot crop {rings} rings from a {g.grid_rows} x {g.grid_cols} grid"
        )
    inner = PatchGeometry(patch=g.patch, grid_rows=rows, grid_cols=cols)
    data = seq.data[interior_token_indices(rows, cols, rings)]
    return PatchSequence(geometry=inner, data=data)
