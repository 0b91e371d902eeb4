"""Background removal and per-band standardization of labeled pixels.

The pipeline order is fixed: mask background first, then standardize, so the
band statistics never include background pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import GroundTruthMap, HyperspectralCube
from .errors import DataError


@dataclass(frozen=True)
class PixelMatrix:
    """Non-background pixels as an (n, N) matrix, one row per pixel.

    ``coords`` maps each row back to its (row, col) image position and
    ``labels`` holds the 1-based class of each pixel.
    """

    values: np.ndarray
    coords: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        coords = np.asarray(self.coords, dtype=np.int32)
        labels = np.asarray(self.labels, dtype=np.int32)
        if values.ndim != 2:
            raise DataError("pixel matrix values must be 2-D (pixels, bands)")
        n = values.shape[0]
        if coords.shape != (n, 2):
            raise DataError(f"coords must have shape ({n}, 2), got {coords.shape}")
        if labels.shape != (n,):
            raise DataError(f"labels must have shape ({n},), got {labels.shape}")
        if n == 0:
            raise DataError("pixel matrix must contain at least one pixel")
        if labels.min() < 1:
            raise DataError("pixel labels must be >= 1 (0 is background)")
        if coords.min() < 0:
            raise DataError("pixel coords must be non-negative")
        key = coords[:, 0].astype(np.int64) << 32 | coords[:, 1].astype(np.int64)
        if np.unique(key).size != n:
            raise DataError("pixel coords must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "labels", labels)

    @property
    def n_pixels(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BandStats:
    """Per-band mean and population standard deviation used to standardize."""

    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray

    @property
    def zero_variance_bands(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.nonzero(self.zero_variance)[0])


def mask_background(cube: HyperspectralCube, gt: GroundTruthMap) -> PixelMatrix:
    """Collect pixels with nonzero label, in row-major scan order.

    Spectra are copied unmodified; no arithmetic is applied.
    """
    if (gt.height, gt.width) != (cube.height, cube.width):
        raise DataError(
            f"ground truth is {gt.height}x{gt.width} but cube is "
            f"{cube.height}x{cube.width}"
        )
    rows, cols = np.nonzero(gt.labels)
    if rows.size == 0:
        raise DataError("every pixel is background; nothing to analyze")
    values = np.ascontiguousarray(cube.data[:, rows, cols].T)
    coords = np.column_stack([rows, cols]).astype(np.int32)
    labels = gt.labels[rows, cols].astype(np.int32)
    return PixelMatrix(values=values, coords=coords, labels=labels)


def standardize(pm: PixelMatrix) -> tuple[PixelMatrix, BandStats]:
    """Z-score each band over the masked pixels, with population (1/n) variance.

    Zero-variance bands are kept as all-zeros columns and flagged in the
    returned stats so band indexing stays aligned with the input cube.
    Statistics accumulate in float64; the output keeps the input dtype.
    """
    if pm.n_pixels < 2:
        raise DataError("standardization needs at least 2 pixels")
    x = pm.values.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    var = np.einsum("ni,ni->i", centered, centered) / pm.n_pixels
    zero = var == 0.0
    std = np.sqrt(var)
    safe_std = np.where(zero, 1.0, std)
    out = centered / safe_std
    out[:, zero] = 0.0
    values = out.astype(pm.values.dtype, copy=False)
    stats = BandStats(mean=mean, std=std, zero_variance=zero)
    return PixelMatrix(values=values, coords=pm.coords, labels=pm.labels), stats
