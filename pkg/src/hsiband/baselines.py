"""Comparison methods: PCA feature extraction and a greedy dissimilarity
band picker.

The greedy picker ("sb-greedy") is a documented stand-in for similarity-based
unsupervised selection: it seeds with the band of lowest average correlation
and then repeatedly adds the band farthest (in 1 - |r| distance) from the
chosen set. Its provenance tag keeps it from being confused with any
published algorithm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bandcorr import AbcVector, BandSelection, CorrelationMatrix, Provenance, average_band_correlation
from .errors import ConfigError, DataError, NumericError
from .preprocess import PixelMatrix

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class PcaModel:
    """Top-k principal axes of the band covariance.

    Component rows are orthonormal, ordered by descending eigenvalue, and
    sign-fixed so each row's largest-magnitude entry is positive.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    cumulative_variance_ratio: float

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        comps = np.asarray(self.components, dtype=np.float64)
        eig = np.asarray(self.eigenvalues, dtype=np.float64)
        if comps.ndim != 2 or comps.shape[1] != mean.shape[0]:
            raise DataError("components must be (k, n_bands) matching the mean")
        if eig.shape != (comps.shape[0],):
            raise DataError("need one eigenvalue per component")
        gram = comps @ comps.T
        if np.abs(gram - np.eye(comps.shape[0])).max() > _ORTHO_TOL:
            raise DataError("component rows must be orthonormal")
        if np.any(np.diff(eig) > 0):
            raise DataError("eigenvalues must be non-increasing")
        if eig.size and eig[-1] < 0:
            raise DataError("eigenvalues must be non-negative")
        if not 0.0 <= self.cumulative_variance_ratio <= 1.0 + 1e-12:
            raise DataError("cumulative variance ratio must lie in [0, 1]")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def n_bands(self) -> int:
        return self.components.shape[1]


def pca_fit(pm: PixelMatrix, k: int = 5) -> PcaModel:
    """Eigendecompose the band covariance and keep the top-k axes.

    The covariance is accumulated in float64 with the population (1/n)
    normalization; the variance ratio is invariant to that choice. On data
    with no variance at all the ratio is defined as 1.0.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > pm.n_bands:
        raise ConfigError(f"k={k} exceeds the {pm.n_bands} available bands")
    if pm.n_pixels < 2:
        raise DataError("PCA needs at least 2 pixels")
    x = pm.values.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = (centered.T @ centered) / pm.n_pixels
    try:
        eigvals, eigvecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(-eigvals, kind="stable")
    eigvals = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order[:k]].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    total = float(eigvals.sum())
    ratio = float(eigvals[:k].sum()) / total if total > 0.0 else 1.0
    return PcaModel(
        mean=mean,
        components=components,
        eigenvalues=eigvals[:k],
        cumulative_variance_ratio=min(ratio, 1.0),
    )


def pca_transform(pm: PixelMatrix, model: PcaModel) -> PixelMatrix:
    """Project pixels onto the principal axes: (x - mean) @ components.T."""
    if pm.n_bands != model.n_bands:
        raise DataError(
            f"pixel matrix has {pm.n_bands} bands but model expects {model.n_bands}"
        )
    x = pm.values.astype(np.float64)
    projected = (x - model.mean) @ model.components.T
    return PixelMatrix(values=projected, coords=pm.coords, labels=pm.labels)


def sb_select(cm: CorrelationMatrix, k: int) -> BandSelection:
    """Greedy max-min dissimilarity pick of exactly k bands.

    Seed with the band of minimal average correlation; then repeatedly add
    the band whose minimal dissimilarity d(i,j) = 1 - |r(i,j)| to the chosen
    set is largest. Ties always break toward the lowest band index.
    """
    n = cm.n_bands
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in 1..{n}, got {k}")
    abc = average_band_correlation(cm)
    dissim = 1.0 - np.abs(cm.values)
    seed = int(np.argmin(abc.abc))
    chosen = [seed]
    min_dist = dissim[seed].copy()
    min_dist[seed] = -1.0
    while len(chosen) < k:
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        np.minimum(min_dist, dissim[nxt], out=min_dist)
        min_dist[nxt] = -1.0
    return BandSelection(
        selected=tuple(sorted(chosen)),
        abc=abc,
        threshold=None,
        provenance=Provenance(
            method="sb-greedy", parameters={"k": k, "pick_order": chosen}
        ),
    )


def save_pca(model: PcaModel, base_path: Path | str) -> None:
    """Persist a model as ``<base>.json`` metadata plus ``<base>.raw``
    components (float64 little-endian, row-major)."""
    base = Path(base_path)
    meta = {
        "k": model.k,
        "n_bands": model.n_bands,
        "mean": [float(v) for v in model.mean],
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "cumulative_variance_ratio": model.cumulative_variance_ratio,
        "components_dtype": "f64",
        "byte_order": "little",
    }
    base.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    base.with_suffix(".raw").write_bytes(
        np.ascontiguousarray(model.components, dtype="<f8").tobytes()
    )


def load_pca(base_path: Path | str) -> PcaModel:
    base = Path(base_path)
    try:
        meta = json.loads(base.with_suffix(".json").read_text())
        raw = base.with_suffix(".raw").read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read PCA model {base}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid PCA metadata {base}: {exc}") from exc
    k, n_bands = int(meta["k"]), int(meta["n_bands"])
    expected = k * n_bands * 8
    if len(raw) != expected:
        raise DataError(
            f"{base.with_suffix('.raw')}: expected {expected} bytes, found {len(raw)}"
        )
    components = np.frombuffer(raw, dtype="<f8").reshape(k, n_bands)
    return PcaModel(
        mean=np.asarray(meta["mean"], dtype=np.float64),
        components=components.copy(),
        eigenvalues=np.asarray(meta["eigenvalues"], dtype=np.float64),
        cumulative_variance_ratio=float(meta["cumulative_variance_ratio"]),
    )
