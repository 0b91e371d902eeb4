"""Stratified splitting and one-vs-rest SVM classification of pixels.

Training fits one binary SVM per class (class vs rest) with a shared kernel
cache; prediction takes the argmax of the per-class decision values, with
ties going to the lowest class label. Everything is deterministic for a
fixed seed and independent of the worker count: the binary problems are
independent, and prediction uses a fixed chunk size so the arithmetic never
depends on how chunks are distributed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from .errors import ConfigError, DataError
from .smo import (
    KernelCache,
    default_cache_rows,
    kernel_matrix,
    resolve_gamma,
    smo_solve,
)

_PREDICT_CHUNK = 1024


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/test row indices, both sorted ascending."""

    train: np.ndarray
    test: np.ndarray
    seed: int
    train_fraction: float

    def __post_init__(self) -> None:
        train = np.asarray(self.train, dtype=np.int64)
        test = np.asarray(self.test, dtype=np.int64)
        if np.intersect1d(train, test).size:
            raise DataError("train and test indices overlap")
        if np.any(np.diff(train) <= 0) or np.any(np.diff(test) <= 0):
            raise DataError("split indices must be sorted and unique")
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)


def stratified_split(
    labels: np.ndarray, fraction: float = 0.7, seed: int = 42
) -> SplitIndices:
    """Split per class: round(fraction * count) train rows, the rest test.

    Rounding is half-up; the train count is clamped to [1, count - 1] so both
    sides of every class are nonempty. Classes are shuffled independently with
    a PCG64 stream consumed in ascending class order.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"train fraction must be in (0, 1), got {fraction}")
    labels = np.asarray(labels)
    classes = np.unique(labels)
    rng = np.random.default_rng(seed)
    train_parts = []
    test_parts = []
    for c in classes:
        idx = np.nonzero(labels == c)[0]
        if idx.size < 2:
            raise DataError(f"class {int(c)} has {idx.size} sample(s); need at least 2")
        perm = rng.permutation(idx.size)
        n_train = int(np.floor(fraction * idx.size + 0.5))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_parts.append(idx[perm[:n_train]])
        test_parts.append(idx[perm[n_train:]])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    return SplitIndices(train=train, test=test, seed=seed, train_fraction=fraction)


def stratified_subsample(labels: np.ndarray, cap: int, seed: int) -> np.ndarray:
    """Pick at most ``cap`` row indices, proportionally per class, seeded.

    Per-class quotas are floor(cap * count / total) plus largest-remainder
    top-up, with at least one sample per class; the draw within each class
    is a seeded shuffle. Returns sorted indices into ``labels``.
    """
    labels = np.asarray(labels)
    total = labels.size
    if cap >= total:
        return np.arange(total, dtype=np.int64)
    if cap < 1:
        raise ConfigError(f"subsample cap must be >= 1, got {cap}")
    classes = np.unique(labels)
    counts = np.array([(labels == c).sum() for c in classes], dtype=np.int64)
    exact = cap * counts / total
    quota = np.maximum(np.floor(exact).astype(np.int64), 1)
    quota = np.minimum(quota, counts)
    # distribute the remainder by largest fractional part, ties by class order
    while quota.sum() < cap:
        frac = np.where(quota < counts, exact - quota, -np.inf)
        best = int(np.argmax(frac))
        if not np.isfinite(frac[best]):
            break
        quota[best] += 1
    while quota.sum() > cap:
        frac = np.where(quota > 1, exact - quota, np.inf)
        worst = int(np.argmin(frac))
        if not np.isfinite(frac[worst]):
            break
        quota[worst] -= 1
    rng = np.random.default_rng([seed, 1])
    picks = []
    for c, q in zip(classes, quota):
        idx = np.nonzero(labels == c)[0]
        perm = rng.permutation(idx.size)
        picks.append(idx[perm[:q]])
    return np.sort(np.concatenate(picks))


@dataclass(frozen=True)
class SvmConfig:
    kernel: str = "rbf"
    c: float = 1.0
    gamma: float | None = None
    tolerance: float = 1e-3
    max_iter: int = 100_000
    cache_rows: int = 0  # 0 = auto-size from a memory budget

    def __post_init__(self) -> None:
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel '{self.kernel}'")
        if self.c <= 0:
            raise ConfigError(f"C must be positive, got {self.c}")
        if self.tolerance <= 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class BinarySvm:
    """One class-vs-rest problem: dual coefficients over its support vectors."""

    dual_coef: np.ndarray  # alpha_i * y_i, nonzero entries only
    support_vectors: np.ndarray
    bias: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SvmModel:
    classes: tuple[int, ...]
    binaries: tuple[BinarySvm, ...]
    kernel: str
    gamma: float
    c: float
    tolerance: float
    n_features: int

    @property
    def converged(self) -> bool:
        return all(b.converged for b in self.binaries)


def svm_train(
    features: np.ndarray,
    labels: np.ndarray,
    config: SvmConfig = SvmConfig(),
    workers: int = 1,
) -> SvmModel:
    """Train one-vs-rest SVMs over integer-labeled feature rows.

    Binary problems may run on worker threads; they share the read-only
    kernel cache and write disjoint outputs, so the model is identical for
    any worker count.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise DataError("features must be (n, d) with one label per row")
    if not np.isfinite(x).all():
        raise DataError("features contain non-finite values")
    classes = tuple(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise DataError("training needs at least 2 classes")

    gamma = resolve_gamma(x, config.gamma) if config.kernel == "rbf" else 0.0
    capacity = config.cache_rows if config.cache_rows > 0 else default_cache_rows(x.shape[0])
    cache = KernelCache(x, config.kernel, gamma, capacity)

    def train_one(c: int) -> BinarySvm:
        y = np.where(labels == c, 1.0, -1.0)
        result = smo_solve(cache, y, config.c, config.tolerance, config.max_iter)
        support = result.alpha > 1e-12
        return BinarySvm(
            dual_coef=(result.alpha * y)[support],
            support_vectors=x[support].copy(),
            bias=result.bias,
            iterations=result.iterations,
            converged=result.converged,
        )

    if workers > 1 and len(classes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            binaries = tuple(pool.map(train_one, classes))
    else:
        binaries = tuple(train_one(c) for c in classes)

    return SvmModel(
        classes=classes,
        binaries=binaries,
        kernel=config.kernel,
        gamma=gamma,
        c=config.c,
        tolerance=config.tolerance,
        n_features=x.shape[1],
    )


def decision_values(
    model: SvmModel, features: np.ndarray, workers: int = 1
) -> np.ndarray:
    """Per-class decision values, shape (n_samples, n_classes).

    Samples are processed in fixed-size chunks; workers only distribute
    chunks, so values are bit-identical for any worker count.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DataError(
            f"features must be (n, {model.n_features}), got {x.shape}"
        )
    out = np.empty((x.shape[0], len(model.classes)), dtype=np.float64)

    def fill(start: int) -> None:
        stop = min(start + _PREDICT_CHUNK, x.shape[0])
        chunk = x[start:stop]
        for ci, binary in enumerate(model.binaries):
            k = kernel_matrix(chunk, binary.support_vectors, model.kernel, model.gamma)
            out[start:stop, ci] = k @ binary.dual_coef + binary.bias

    starts = list(range(0, x.shape[0], _PREDICT_CHUNK))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for start in starts:
            fill(start)
    return out


def svm_predict(model: SvmModel, features: np.ndarray, workers: int = 1) -> np.ndarray:
    """argmax-of-decision-value labels; ties go to the lowest class."""
    values = decision_values(model, features, workers=workers)
    class_arr = np.asarray(model.classes)
    return class_arr[np.argmax(values, axis=1)]


def save_model(model: SvmModel, base_path: Path | str) -> None:
    """Persist as ``<base>.json`` plus ``<base>.raw`` holding, per class, the
    support-vector matrix followed by its dual coefficients (float64 LE)."""
    base = Path(base_path)
    meta = {
        "classes": list(model.classes),
        "kernel": model.kernel,
        "gamma": model.gamma,
        "c": model.c,
        "tolerance": model.tolerance,
        "n_features": model.n_features,
        "binaries": [
            {
                "n_support": int(b.dual_coef.shape[0]),
                "bias": float(b.bias),
                "iterations": int(b.iterations),
                "converged": bool(b.converged),
            }
            for b in model.binaries
        ],
        "dtype": "f64",
        "byte_order": "little",
    }
    base.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    blobs = []
    for b in model.binaries:
        blobs.append(np.ascontiguousarray(b.support_vectors, dtype="<f8").tobytes())
        blobs.append(np.ascontiguousarray(b.dual_coef, dtype="<f8").tobytes())
    base.with_suffix(".raw").write_bytes(b"".join(blobs))


def load_model(base_path: Path | str) -> SvmModel:
    base = Path(base_path)
    try:
        meta = json.loads(base.with_suffix(".json").read_text())
        raw = base.with_suffix(".raw").read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read SVM model {base}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid SVM metadata {base}: {exc}") from exc
    d = int(meta["n_features"])
    binaries = []
    offset = 0
    for entry in meta["binaries"]:
        s = int(entry["n_support"])
        sv_bytes = s * d * 8
        sv = np.frombuffer(raw, dtype="<f8", count=s * d, offset=offset).reshape(s, d)
        offset += sv_bytes
        dual = np.frombuffer(raw, dtype="<f8", count=s, offset=offset)
        offset += s * 8
        binaries.append(
            BinarySvm(
                dual_coef=dual.copy(),
                support_vectors=sv.copy(),
                bias=float(entry["bias"]),
                iterations=int(entry["iterations"]),
                converged=bool(entry["converged"]),
            )
        )
    if offset != len(raw):
        raise DataError(f"{base.with_suffix('.raw')}: trailing bytes in model file")
    return SvmModel(
        classes=tuple(int(c) for c in meta["classes"]),
        binaries=tuple(binaries),
        kernel=meta["kernel"],
        gamma=float(meta["gamma"]),
        c=float(meta["c"]),
        tolerance=float(meta["tolerance"]),
        n_features=d,
    )
