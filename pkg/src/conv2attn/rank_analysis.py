"""Rank certificates for minimum head counts.

A single attention layer whose value/output products span at most N_H
rank-one terms can only reproduce a convolution whose reshaped kernel
matrix has rank <= N_H. These helpers build the two reshaped matrices
(pixel tokens and patch tokens), measure best low-rank residuals via the
SVD, and report whether a head budget is certifiably too small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._arrays import frozen_array
from .convolution import ConvKernel
from .errors import DimensionError, InvalidArgumentError

RANK_THRESHOLD = 1e-9
GAP_THRESHOLD = 1e-6

PIXEL_SETTING = "pixel"
PATCH_SETTING = "patch"

# Patch offsets a kernel no larger than the patch can reach, row-major.
NEIGHBOR_OFFSETS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1))


@dataclass(frozen=True)
class PixelRankProblem:
    """K^2 x d matrix: rows are kernel offsets (row-major), columns channels."""

    matrix: np.ndarray
    kernel_size: int

    def __post_init__(self) -> None:
        arr = frozen_array(self.matrix, name="pixel rank matrix")
        if arr.ndim != 2 or arr.shape[0] != self.kernel_size**2:
            raise DimensionError(
                f"matrix must have K^2 = {self.kernel_size ** 2} rows, got shape {arr.shape}"
            )
        object.__setattr__(self, "matrix", arr)


@dataclass(frozen=True)
class PatchRankProblem:
    """P^4 x 9 matrix: rows are (query pixel, key pixel) pairs, columns the
    nine neighboring patch offsets; entries are the kernel weight coupling
    the two pixels, zero when out of reach."""

    matrix: np.ndarray
    kernel_size: int
    patch: int

    def __post_init__(self) -> None:
        arr = frozen_array(self.matrix, name="patch rank matrix")
        expected = (self.patch**4, len(NEIGHBOR_OFFSETS))
        if arr.ndim != 2 or arr.shape != expected:
            raise DimensionError(f"matrix must have shape {expected}, got {arr.shape}")
        object.__setattr__(self, "matrix", arr)


@dataclass(frozen=True)
class RankResult:
    """Singular values plus best-rank-r residuals; residuals[r] is the
    Frobenius error of the best rank-r approximation."""

    singular_values: np.ndarray
    residuals: np.ndarray
    rank: int

    @property
    def sigma1(self) -> float:
        return float(self.singular_values[0]) if self.singular_values.size else 0.0

    def residual(self, r: int) -> float:
        if r < 0:
            raise InvalidArgumentError(f"rank must be >= 0, got {r}")
        r = min(r, self.residuals.size - 1)
        return float(self.residuals[r])


@dataclass(frozen=True)
class LowerBoundReport:
    setting: str
    heads: int
    rank: int
    sigma1: float
    residual: float
    certified_gap: bool


def build_pixel_rank_matrix(kernel: ConvKernel) -> PixelRankProblem:
    """Reshape a single-output-channel kernel into its K^2 x d matrix."""
    if kernel.channels_out != 1:
        raise InvalidArgumentError(
            f"pixel rank analysis expects a single output channel, got {kernel.channels_out}"
        )
    k = kernel.size
    matrix = kernel.weights[:, :, :, 0].reshape(k * k, kernel.channels_in)
    return PixelRankProblem(matrix=matrix, kernel_size=k)


def build_patch_rank_matrix(kernel: ConvKernel, patch: int) -> PatchRankProblem:
    """Build the (query pixel, key pixel) x offset coupling matrix.

    Requires a scalar-channel kernel and patch >= kernel size, so a key
    pixel is reachable from at most one of the nine neighboring patches.
    """
    if kernel.channels_in != 1 or kernel.channels_out != 1:
        raise InvalidArgumentError(
            "patch rank analysis expects a kernel with one input and one output channel"
        )
    k = kernel.size
    if k < 3:
        raise InvalidArgumentError(f"patch rank analysis needs kernel size >= 3, got {k}")
    if k > patch:
        raise InvalidArgumentError(
            f"patch rank analysis needs patch >= kernel size, got patch {patch} < {k}"
        )
    half = kernel.half
    pix = np.arange(patch * patch)
    u, v = np.divmod(pix, patch)
    # rel_u[p, q] = row distance from query pixel p to key pixel q within a patch.
    rel_u = u[None, :] - u[:, None]
    rel_v = v[None, :] - v[:, None]
    weights = kernel.weights[:, :, 0, 0]
    columns = []
    for dr, dc in NEIGHBOR_OFFSETS:
        du = dr * patch + rel_u
        dv = dc * patch + rel_v
        in_field = (np.abs(du) <= half) & (np.abs(dv) <= half)
        x = np.where(in_field, du + half, 0)
        y = np.where(in_field, dv + half, 0)
        col = np.where(in_field, weights[x, y], 0.0)
        columns.append(col.reshape(-1))
    matrix = np.stack(columns, axis=1)
    return PatchRankProblem(matrix=matrix, kernel_size=k, patch=patch)


def rank_residuals(matrix: np.ndarray) -> RankResult:
    """Full SVD with Eckart-Young residuals and threshold-based rank.

    residuals[r] = sqrt(sum of squared singular values after the first r);
    rank counts singular values above RANK_THRESHOLD * sigma1.
    """
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("matrix contains non-finite values")
    sigma = np.linalg.svd(arr, compute_uv=False)
    tails = np.sqrt(np.concatenate([np.cumsum((sigma**2)[::-1])[::-1], [0.0]]))
    if sigma.size and sigma[0] > 0:
        rank = int(np.sum(sigma > RANK_THRESHOLD * sigma[0]))
    else:
        rank = 0
    return RankResult(
        singular_values=frozen_array(sigma, name="singular values"),
        residuals=frozen_array(tails, name="residuals"),
        rank=rank,
    )


def verify_lower_bound(
    setting: str, kernel: ConvKernel, heads: int, patch: int | None = None
) -> LowerBoundReport:
    """Report whether `heads` rank-one terms certifiably cannot reproduce
    the kernel: certified_gap is true iff the best rank-`heads` residual
    exceeds GAP_THRESHOLD * sigma1."""
    if heads < 0:
        raise InvalidArgumentError(f"head count must be >= 0, got {heads}")
    if setting == PIXEL_SETTING:
        problem_matrix = build_pixel_rank_matrix(kernel).matrix
    elif setting == PATCH_SETTING:
        if patch is None:
            raise InvalidArgumentError("patch setting requires a patch resolution")
        problem_matrix = build_patch_rank_matrix(kernel, patch).matrix
    else:
        raise InvalidArgumentError(
            f"setting must be {PIXEL_SETTING!r} or {PATCH_SETTING!r}, got {setting!r}"
        )
    result = rank_residuals(problem_matrix)
    residual = result.residual(heads)
    certified = bool(residual > GAP_THRESHOLD * result.sigma1)
    return LowerBoundReport(
        setting=setting,
        heads=heads,
        rank=result.rank,
        sigma1=result.sigma1,
        residual=residual,
        certified_gap=certified,
    )
