"""Inter-band correlation analysis and threshold-based band selection.

This is the core method of the package: build the symmetric matrix of
pairwise band correlations, reduce it to one average-absolute-correlation
score per band, and keep the bands scoring below a threshold (default 0.65).
Low scores mean a band carries information the other bands do not.

All accumulation is float64 regardless of the input dtype, and the dense
kernel is blocked so results are bit-identical for any worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cube import HyperspectralCube
from .errors import DataError
from .preprocess import PixelMatrix

DEFAULT_THRESHOLD = 0.65

# Fixed row-block width for the dense kernel. Workers distribute whole
# blocks, and per-element arithmetic is independent of the blocking, so the
# matrix never depends on the schedule.
_BLOCK = 64


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Correlation coefficient of two equal-length sample vectors.

    Accumulates in float64 and clamps the result to [-1, 1]. If either
    vector has zero variance the coefficient is undefined; by convention
    this returns 0.0 (see CorrelationMatrix.zero_variance_bands for the
    matrix-level degeneracy flags).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DataError("correlation needs at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric N x N matrix of pairwise band correlations.

    Entries are clamped to [-1, 1]; the diagonal is 1. Rows and columns of
    zero-variance bands are 0 off-diagonal (their coefficient is undefined,
    and treating them as uncorrelated keeps them out of every other band's
    average) and the band indices are flagged.
    """

    values: np.ndarray
    zero_variance_bands: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataError("correlation matrix must be square")
        if values.shape[0] < 2:
            raise DataError("correlation matrix needs at least 2 bands")
        if not np.array_equal(values, values.T):
            raise DataError("correlation matrix must be exactly symmetric")
        if not np.array_equal(np.diag(values), np.ones(values.shape[0])):
            raise DataError("correlation matrix diagonal must be 1")
        if np.abs(values).max() > 1.0:
            raise DataError("correlation entries must lie in [-1, 1]")
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "zero_variance_bands", frozenset(int(i) for i in self.zero_variance_bands)
        )

    @property
    def n_bands(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AbcVector:
    """Per-band mean absolute correlation against all other bands."""

    abc: np.ndarray

    def __post_init__(self) -> None:
        abc = np.asarray(self.abc, dtype=np.float64)
        if abc.ndim != 1 or abc.size < 2:
            raise DataError("ABC vector must be 1-D with at least 2 entries")
        if abc.min() < 0.0 or abc.max() > 1.0:
            raise DataError("ABC entries must lie in [0, 1]")
        object.__setattr__(self, "abc", abc)

    @property
    def n_bands(self) -> int:
        return self.abc.size


@dataclass(frozen=True)
class Provenance:
    method: str
    parameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BandSelection:
    """An ordered subset of band indices plus how it was produced."""

    selected: tuple[int, ...]
    abc: AbcVector | None
    threshold: float | None
    provenance: Provenance

    def __post_init__(self) -> None:
        if not self.selected:
            raise DataError("band selection must be nonempty")
        sel = tuple(int(i) for i in self.selected)
        if any(b <= a for a, b in zip(sel, sel[1:])):
            raise DataError("selected band indices must be strictly increasing")
        if sel[0] < 0:
            raise DataError("band indices must be non-negative")
        object.__setattr__(self, "selected", sel)
        if self.provenance.method == "abc-threshold":
            if self.threshold is None or self.abc is None:
                raise DataError("abc-threshold selections need a threshold and ABC vector")
            expected = tuple(
                int(i) for i in np.nonzero(self.abc.abc < self.threshold)[0]
            )
            if expected != sel:
                raise DataError("selection does not match 'abc < threshold' rule")

    @property
    def n_selected(self) -> int:
        return len(self.selected)


def _block_starts(n: int) -> list[int]:
    return list(range(0, n, _BLOCK))


def correlation_matrix(pm: PixelMatrix, workers: int = 1) -> CorrelationMatrix:
    """All pairwise band correlations of a pixel matrix.

    Two-pass: center every band on its float64 mean, then form the centered
    Gram matrix in fixed row blocks and normalize. Agrees with per-pair
    pearson() to well below 1e-12 and is deterministic for any ``workers``.
    """
    if pm.n_bands < 2:
        raise DataError("correlation needs at least 2 bands")
    if pm.n_pixels < 2:
        raise DataError("correlation needs at least 2 pixels")
    x = pm.values.astype(np.float64)
    centered = x - x.mean(axis=0)
    ss = np.einsum("ni,ni->i", centered, centered)
    zero = ss == 0.0

    n = pm.n_bands
    gram = np.empty((n, n), dtype=np.float64)

    def fill(start: int) -> None:
        stop = min(start + _BLOCK, n)
        gram[start:stop] = np.einsum(
            "ni,nj->ij", centered[:, start:stop], centered, optimize=False
        )

    starts = _block_starts(n)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for start in starts:
            fill(start)

    denom = np.sqrt(np.where(zero, 1.0, ss))
    r = gram / denom[:, None] / denom[None, :]
    r[zero, :] = 0.0
    r[:, zero] = 0.0
    np.clip(r, -1.0, 1.0, out=r)
    # compute once, mirror: upper triangle is authoritative
    upper = np.triu(r, k=1)
    r = upper + upper.T
    np.fill_diagonal(r, 1.0)
    return CorrelationMatrix(
        values=r, zero_variance_bands=frozenset(int(i) for i in np.nonzero(zero)[0])
    )


def average_band_correlation(cm: CorrelationMatrix) -> AbcVector:
    """Mean absolute correlation of each band against the N-1 others.

    Row sums use math.fsum, which is exactly rounded, so permuting the bands
    permutes the result bit-for-bit.
    """
    n = cm.n_bands
    absr = np.abs(cm.values)
    abc = np.empty(n, dtype=np.float64)
    for i in range(n):
        row = absr[i]
        total = math.fsum(row[j] for j in range(n) if j != i)
        abc[i] = total / (n - 1)
    np.clip(abc, 0.0, 1.0, out=abc)
    return AbcVector(abc=abc)


def select_bands_by_abc(
    abc: AbcVector, threshold: float = DEFAULT_THRESHOLD
) -> BandSelection:
    """Keep bands whose average correlation is strictly below the threshold."""
    if not 0.0 < threshold <= 1.0:
        raise DataError(f"threshold must be in (0, 1], got {threshold}")
    selected = tuple(int(i) for i in np.nonzero(abc.abc < threshold)[0])
    if not selected:
        raise DataError(
            f"no band has average correlation below {threshold}; "
            "try a higher threshold"
        )
    return BandSelection(
        selected=selected,
        abc=abc,
        threshold=threshold,
        provenance=Provenance(method="abc-threshold", parameters={"threshold": threshold}),
    )


def extract_bands(source, selection: BandSelection):
    """Slice the selected bands out of a cube or pixel matrix, bit-identically.

    Returns the same container type as ``source`` with n_bands == |selection|.
    """
    idx = np.asarray(selection.selected, dtype=np.int64)
    if isinstance(source, HyperspectralCube):
        if idx.max() >= source.n_bands:
            raise DataError(
                f"band index {int(idx.max())} out of range for {source.n_bands} bands"
            )
        wl = source.band_wavelengths
        return HyperspectralCube(
            data=source.data[idx].copy(),
            band_wavelengths=None if wl is None else wl[idx].copy(),
        )
    if isinstance(source, PixelMatrix):
        if idx.max() >= source.n_bands:
            raise DataError(
                f"band index {int(idx.max())} out of range for {source.n_bands} bands"
            )
        return PixelMatrix(
            values=np.ascontiguousarray(source.values[:, idx]),
            coords=source.coords,
            labels=source.labels,
        )
    raise DataError(f"cannot extract bands from {type(source).__name__}")


def correlation_to_csv(cm: CorrelationMatrix, path: Path | str) -> None:
    """Dump the matrix row-major as decimal CSV with 17 significant digits."""
    np.savetxt(path, cm.values, fmt="%.17g", delimiter=",")


def abc_to_csv(abc: AbcVector, path: Path | str) -> None:
    """Dump the ABC vector, one value per line, 17 significant digits."""
    np.savetxt(path, abc.abc, fmt="%.17g")


def save_selection(selection: BandSelection, path: Path | str) -> None:
    """Write a selection as a text file of indices plus a JSON provenance
    sidecar (same basename, .json extension)."""
    path = Path(path)
    path.write_text("".join(f"{i}\n" for i in selection.selected))
    meta = {
        "method": selection.provenance.method,
        "parameters": selection.provenance.parameters,
        "threshold": selection.threshold,
        "n_selected": selection.n_selected,
        "abc": None if selection.abc is None else [float(v) for v in selection.abc.abc],
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_selection(path: Path | str) -> BandSelection:
    """Read back a selection written by save_selection()."""
    path = Path(path)
    try:
        indices = tuple(
            int(line) for line in path.read_text().split() if line.strip()
        )
    except OSError as exc:
        raise DataError(f"cannot read selection {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed selection file {path}: {exc}") from exc
    meta_path = path.with_suffix(".json")
    method = "abc-threshold"
    parameters: dict = {}
    threshold = None
    abc = None
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read selection metadata {meta_path}: {exc}") from exc
        method = meta.get("method", method)
        parameters = meta.get("parameters", {})
        threshold = meta.get("threshold")
        if meta.get("abc") is not None:
            abc = AbcVector(abc=np.asarray(meta["abc"], dtype=np.float64))
    return BandSelection(
        selected=indices,
        abc=abc,
        threshold=threshold,
        provenance=Provenance(method=method, parameters=parameters),
    )
