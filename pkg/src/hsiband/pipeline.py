"""End-to-end experiment stages behind the CLI subcommands.

Each stage run lands a manifest JSON capturing every effective parameter,
derived default, and stage timing, so a result can always be traced back to
the exact configuration that produced it. Reports and rasters are
deterministic for a fixed config (seed included); manifests additionally
carry wall-clock timings, which are not.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, replace
from pathlib import Path

from . import __version__
from .bandcorr import (
    BandSelection,
    abc_to_csv,
    average_band_correlation,
    correlation_matrix,
    correlation_to_csv,
    extract_bands,
    load_selection,
    save_selection,
    select_bands_by_abc,
)
from .baselines import pca_fit, pca_transform, save_pca, sb_select
from .classify import (
    SvmConfig,
    stratified_split,
    stratified_subsample,
    svm_predict,
    svm_train,
)
from .cube import load_cube, load_ground_truth, save_label_raster
from .errors import ConfigError, DataError
from .evaluate import (
    EvaluationReport,
    confusion,
    render_map,
    report,
    report_table,
    report_to_dict,
    report_to_json,
    scatter_to_raster,
)
from .preprocess import mask_background, standardize

METHODS = ("abc", "pca", "sb")

_BOOL_KEYS = {"emit_correlation_csv", "full_map"}
_INT_KEYS = {"pca_k", "seed", "max_iter", "svm_subsample", "cache_rows", "workers"}
_FLOAT_KEYS = {"threshold", "train_fraction", "svm_c", "gamma", "tolerance"}
_PATH_KEYS = {"cube", "ground_truth", "out_dir", "selection"}
_STR_KEYS = {"method", "kernel"}


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a pipeline run; defaults follow the documented protocol."""

    cube: Path
    ground_truth: Path
    method: str = "abc"
    threshold: float = 0.65
    pca_k: int = 5
    train_fraction: float = 0.7
    seed: int = 42
    kernel: str = "rbf"
    svm_c: float = 1.0
    gamma: float | None = None
    tolerance: float = 1e-3
    max_iter: int = 100_000
    svm_subsample: int | None = None
    cache_rows: int = 0
    workers: int = 1
    out_dir: Path = Path("hsiband_out")
    emit_correlation_csv: bool = False
    full_map: bool = False
    selection: Path | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got '{self.method}'")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in (0, 1], got {self.threshold}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train fraction must be in (0, 1), got {self.train_fraction}"
            )
        if self.pca_k < 1:
            raise ConfigError(f"pca_k must be >= 1, got {self.pca_k}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.svm_subsample is not None and self.svm_subsample < 1:
            raise ConfigError("svm_subsample must be >= 1 when set")
        for name in ("cube", "ground_truth", "out_dir", "selection"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, Path(value))

    def svm_config(self) -> SvmConfig:
        return SvmConfig(
            kernel=self.kernel,
            c=self.svm_c,
            gamma=self.gamma,
            tolerance=self.tolerance,
            max_iter=self.max_iter,
            cache_rows=self.cache_rows,
        )

    def snapshot(self) -> dict:
        snap = asdict(self)
        for key, value in snap.items():
            if isinstance(value, Path):
                snap[key] = str(value)
        return snap


def _coerce(key: str, raw: str):
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key '{key}' expects a boolean, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc
    if key in _PATH_KEYS:
        return Path(raw)
    return raw


def load_config(path: Path | str, overrides: dict | None = None) -> RunConfig:
    """Read a flat ``key = value`` config file; overrides win over the file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    known = set(_BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _PATH_KEYS | _STR_KEYS)
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        values[key] = _coerce(key, raw.strip())
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    if "cube" not in values or "ground_truth" not in values:
        raise ConfigError(f"{path}: config must set 'cube' and 'ground_truth'")
    return RunConfig(**values)


class _Timer:
    """Accumulates per-stage wall-clock milliseconds."""

    def __init__(self) -> None:
        self.timings_ms: dict[str, float] = {}

    def stage(self, name: str):
        timer = self

        class _Stage:
            def __enter__(self) -> None:
                self._start = time.perf_counter()

            def __exit__(self, *exc) -> None:
                timer.timings_ms[name] = round(
                    (time.perf_counter() - self._start) * 1000.0, 3
                )

        return _Stage()


def _new_manifest(config: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "tool_version": __version__,
        "config": config.snapshot(),
        "preprocessing_order": "mask-background-then-standardize",
        "zero_variance_policy": "correlation 0 against zero-variance bands",
        "timings_ms": {},
        "derived": {},
    }


def _write_manifest(manifest: dict, timer: _Timer, path: Path) -> None:
    manifest["timings_ms"] = timer.timings_ms
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_pixels(config: RunConfig, timer: _Timer, manifest: dict):
    with timer.stage("load"):
        cube = load_cube(config.cube)
        gt = load_ground_truth(config.ground_truth)
    with timer.stage("mask"):
        pm = mask_background(cube, gt)
    with timer.stage("standardize"):
        pm_std, stats = standardize(pm)
    manifest["derived"]["n_labeled_pixels"] = int(pm.n_pixels)
    manifest["derived"]["n_bands"] = int(pm.n_bands)
    manifest["derived"]["zero_variance_bands"] = [
        int(i) for i in stats.zero_variance_bands
    ]
    return cube, gt, pm_std


def _abc_selection(config: RunConfig, pm_std, timer: _Timer, manifest: dict):
    with timer.stage("correlation"):
        cm = correlation_matrix(pm_std, workers=config.workers)
    with timer.stage("abc"):
        abc = average_band_correlation(cm)
    with timer.stage("select"):
        selection = select_bands_by_abc(abc, config.threshold)
    manifest["derived"]["correlation_zero_variance_bands"] = sorted(
        cm.zero_variance_bands
    )
    return cm, abc, selection


def run_select(config: RunConfig) -> tuple[BandSelection, dict]:
    """load -> mask -> standardize -> correlation -> average -> threshold.

    Writes selection.txt/.json, abc.csv, optionally correlation.csv, and
    select.manifest.json into the output directory.
    """
    timer = _Timer()
    manifest = _new_manifest(config, "select")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, _, pm_std = _load_pixels(config, timer, manifest)
    cm, abc, selection = _abc_selection(config, pm_std, timer, manifest)
    with timer.stage("write"):
        save_selection(selection, out / "selection.txt")
        abc_to_csv(abc, out / "abc.csv")
        if config.emit_correlation_csv:
            correlation_to_csv(cm, out / "correlation.csv")
    manifest["derived"]["n_selected"] = selection.n_selected
    manifest["derived"]["selected_bands"] = list(selection.selected)
    _write_manifest(manifest, timer, out / "select.manifest.json")
    return selection, manifest


def _features_for_method(config: RunConfig, pm_std, timer: _Timer, manifest: dict):
    """Produce the classifier input matrix for the configured method."""
    if config.method == "pca":
        with timer.stage("pca"):
            model = pca_fit(pm_std, config.pca_k)
            features = pca_transform(pm_std, model)
        manifest["derived"]["pca_cumulative_variance_ratio"] = (
            model.cumulative_variance_ratio
        )
        manifest["derived"]["pca_k"] = model.k
        return features, None, model

    if config.selection is not None:
        with timer.stage("select"):
            selection = load_selection(config.selection)
        manifest["derived"]["selection_source"] = str(config.selection)
    elif config.method == "abc":
        _, _, selection = _abc_selection(config, pm_std, timer, manifest)
    else:  # sb: same band budget as the abc selection on this data
        _, _, abc_selection = _abc_selection(config, pm_std, timer, manifest)
        cm = correlation_matrix(pm_std, workers=config.workers)
        with timer.stage("sb"):
            selection = sb_select(cm, abc_selection.n_selected)
        manifest["derived"]["sb_k"] = abc_selection.n_selected
    with timer.stage("extract"):
        features = extract_bands(pm_std, selection)
    manifest["derived"]["n_selected"] = selection.n_selected
    manifest["derived"]["selected_bands"] = list(selection.selected)
    manifest["derived"]["selection_method"] = selection.provenance.method
    return features, selection, None


def run_classify(config: RunConfig) -> tuple[EvaluationReport, dict]:
    """Full protocol: select features, split, train, predict, report, render.

    The evaluation report always covers the held-out test pixels. The
    rendered map shows test predictions only unless full_map is set, in
    which case every labeled pixel is predicted for the map (metrics are
    unaffected).
    """
    timer = _Timer()
    manifest = _new_manifest(config, "classify")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cube, gt, pm_std = _load_pixels(config, timer, manifest)
    features, selection, pca_model = _features_for_method(
        config, pm_std, timer, manifest
    )
    if selection is not None:
        save_selection(selection, out / "selection.txt")
    if pca_model is not None:
        save_pca(pca_model, out / "pca_model")

    labels = features.labels
    with timer.stage("split"):
        split = stratified_split(labels, config.train_fraction, config.seed)
    train_idx = split.train
    if config.svm_subsample is not None and train_idx.size > config.svm_subsample:
        with timer.stage("subsample"):
            keep = stratified_subsample(
                labels[train_idx], config.svm_subsample, config.seed
            )
            train_idx = train_idx[keep]
        manifest["derived"]["train_subsampled_to"] = int(train_idx.size)
    manifest["derived"]["n_train"] = int(train_idx.size)
    manifest["derived"]["n_test"] = int(split.test.size)

    with timer.stage("train"):
        model = svm_train(
            features.values[train_idx],
            labels[train_idx],
            config.svm_config(),
            workers=config.workers,
        )
    manifest["derived"]["svm_gamma"] = model.gamma
    manifest["derived"]["svm_converged"] = model.converged
    manifest["derived"]["svm_iterations"] = [b.iterations for b in model.binaries]
    manifest["derived"]["svm_support_vectors"] = [
        int(b.dual_coef.shape[0]) for b in model.binaries
    ]

    with timer.stage("predict"):
        predicted = svm_predict(model, features.values[split.test], workers=config.workers)
    with timer.stage("report"):
        cm = confusion(labels[split.test], predicted, n_classes=gt.n_classes)
        rep = report(cm, method=config.method)
    (out / "report.json").write_text(report_to_json(rep))
    (out / "report.txt").write_text(report_table({config.method: rep}))
    manifest["derived"]["overall_accuracy"] = rep.overall_accuracy
    manifest["derived"]["kappa"] = rep.kappa

    with timer.stage("render"):
        if config.full_map:
            all_pred = svm_predict(model, features.values, workers=config.workers)
            raster = scatter_to_raster(
                (gt.height, gt.width), features.coords, all_pred
            )
        else:
            raster = scatter_to_raster(
                (gt.height, gt.width), features.coords[split.test], predicted
            )
        save_label_raster(raster, out / "predictions.hdr")
        render_map(raster, out / "map.png")
    _write_manifest(manifest, timer, out / "classify.manifest.json")
    return rep, manifest


def run_compare(
    config_abc: RunConfig,
    config_pca: RunConfig,
    config_sb: RunConfig,
    out_dir: Path | str,
) -> tuple[dict[str, EvaluationReport], dict]:
    """Run all three methods on one dataset/split and tabulate side by side.

    The three configs must agree on dataset, seed, and split fraction,
    otherwise the comparison is invalid and refused. The sb run reuses the
    band budget of the abc run.
    """
    configs = {"abc": config_abc, "pca": config_pca, "sb": config_sb}
    for name, cfg in configs.items():
        if cfg.method != name:
            raise ConfigError(f"config for '{name}' has method '{cfg.method}'")
    ref = config_abc
    for name, cfg in configs.items():
        if cfg.seed != ref.seed:
            raise ConfigError(
                "seeds differ between methods; comparison would be invalid"
            )
        if (Path(cfg.cube), Path(cfg.ground_truth)) != (
            Path(ref.cube),
            Path(ref.ground_truth),
        ):
            raise ConfigError("all methods must run on the same dataset")
        if cfg.train_fraction != ref.train_fraction:
            raise ConfigError("train fractions differ between methods")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports: dict[str, EvaluationReport] = {}
    manifests: dict[str, dict] = {}
    for name in ("abc", "pca", "sb"):
        cfg = replace(configs[name], out_dir=out / name)
        reports[name], manifests[name] = run_classify(cfg)

    abc_bands = manifests["abc"]["derived"]["n_selected"]
    sb_bands = manifests["sb"]["derived"]["n_selected"]
    if sb_bands != abc_bands:
        raise DataError(
            f"sb selected {sb_bands} bands but abc selected {abc_bands}"
        )
    summary = {
        "tool_version": __version__,
        "dataset": {"cube": str(ref.cube), "ground_truth": str(ref.ground_truth)},
        "seed": ref.seed,
        "train_fraction": ref.train_fraction,
        "abc_band_count": abc_bands,
        "sb_band_count": sb_bands,
        "pca_k": config_pca.pca_k,
        "methods": {name: report_to_dict(rep) for name, rep in reports.items()},
    }
    (out / "compare.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    table = report_table({"pca": reports["pca"], "sb": reports["sb"], "abc": reports["abc"]})
    (out / "compare.txt").write_text(table)
    return reports, summary
