"""Hyperspectral cube and ground-truth rasters with a bit-exact on-disk format.

Storage is a text header (``key = value`` per line) next to a raw file with
the same basename and a ``.raw`` extension. Cubes are 32-bit little-endian
IEEE-754 floats in band-sequential (BSQ) order: band-major, row-major within
each band. Ground truth is a single-band raster of unsigned 16-bit labels
where 0 marks background pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

CUBE_DTYPE = "f32"
GT_DTYPE = "u16"
INTERLEAVE = "bsq"
BYTE_ORDER = "little"

_REQUIRED_KEYS = ("samples", "lines", "bands", "data type", "interleave", "byte order")


@dataclass(frozen=True)
class CubeHeader:
    """Parsed raster header. Tags are validated by the loaders, not here."""

    width: int
    height: int
    n_bands: int
    dtype: str
    interleave: str
    byte_order: str
    wavelengths: tuple[float, ...] | None = None
    classes: int | None = None
    class_names: tuple[str, ...] | None = None


@dataclass(frozen=True)
class HyperspectralCube:
    """W x H x N reflectance raster, stored band-major as an (N, H, W) array.

    The C-contiguous (bands, lines, samples) layout serializes exactly as BSQ.
    Treat instances as immutable after construction.
    """

    data: np.ndarray
    band_wavelengths: np.ndarray | None = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise DataError("cube data must be a 3-D (bands, lines, samples) array")
        n, h, w = data.shape
        if w < 1 or h < 1:
            raise DataError(f"cube must have width >= 1 and height >= 1, got {w}x{h}")
        if n < 2:
            raise DataError(f"cube must have at least 2 bands, got {n}")
        bad = ~np.isfinite(data)
        if bad.any():
            b, r, c = (int(v) for v in np.argwhere(bad)[0])
            raise DataError(
                f"cube contains a non-finite value at band {b}, row {r}, col {c}"
            )
        object.__setattr__(self, "data", np.ascontiguousarray(data))
        if self.band_wavelengths is not None:
            wl = np.asarray(self.band_wavelengths, dtype=np.float64)
            if wl.shape != (n,):
                raise DataError(
                    f"expected {n} wavelengths, got {wl.shape[0] if wl.ndim == 1 else wl.shape}"
                )
            object.__setattr__(self, "band_wavelengths", wl)

    @property
    def n_bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class GroundTruthMap:
    """Per-pixel class labels; 0 is background, classes are 1..n_classes."""

    labels: np.ndarray
    class_names: tuple[str, ...] | None = None
    n_classes: int = field(init=False)

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.uint16)
        if labels.ndim != 2:
            raise DataError("ground truth labels must be a 2-D (lines, samples) array")
        object.__setattr__(self, "labels", np.ascontiguousarray(labels))
        distinct = np.unique(labels)
        nonzero = distinct[distinct != 0]
        n_classes = int(nonzero.size)
        missing = sorted(set(range(1, n_classes + 1)) - {int(v) for v in nonzero})
        if missing:
            raise DataError(
                "class labels must be contiguous 1..n_classes; "
                f"missing label(s) {', '.join(str(m) for m in missing)}"
            )
        object.__setattr__(self, "n_classes", n_classes)
        if self.class_names is not None and len(self.class_names) != n_classes:
            raise DataError(
                f"expected {n_classes} class names, got {len(self.class_names)}"
            )

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def _raw_path(header_path: Path) -> Path:
    return header_path.with_suffix(".raw")


def parse_header(header_path: Path | str) -> CubeHeader:
    """Parse a ``key = value`` text header.

    Raises DataError on missing files, malformed lines, or missing keys.
    """
    path = Path(header_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read header {path}: {exc}") from exc
    fields: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    for key in _REQUIRED_KEYS:
        if key not in fields:
            raise DataError(f"{path}: missing required header key '{key}'")
    try:
        width = int(fields["samples"])
        height = int(fields["lines"])
        n_bands = int(fields["bands"])
    except ValueError as exc:
        raise DataError(f"{path}: non-integer raster dimension: {exc}") from exc

    wavelengths = None
    if "wavelengths" in fields and fields["wavelengths"]:
        try:
            wavelengths = tuple(float(v) for v in fields["wavelengths"].split(","))
        except ValueError as exc:
            raise DataError(f"{path}: malformed wavelengths list: {exc}") from exc
    classes = None
    if "classes" in fields:
        try:
            classes = int(fields["classes"])
        except ValueError as exc:
            raise DataError(f"{path}: non-integer 'classes' value") from exc
    class_names = None
    if "class names" in fields and fields["class names"]:
        class_names = tuple(s.strip() for s in fields["class names"].split(","))

    return CubeHeader(
        width=width,
        height=height,
        n_bands=n_bands,
        dtype=fields["data type"],
        interleave=fields["interleave"],
        byte_order=fields["byte order"],
        wavelengths=wavelengths,
        classes=classes,
        class_names=class_names,
    )


def _check_tags(path: Path, header: CubeHeader, expected_dtype: str) -> None:
    if header.dtype != expected_dtype:
        raise DataError(
            f"{path}: data type must be '{expected_dtype}', got '{header.dtype}'"
        )
    if header.interleave != INTERLEAVE:
        raise DataError(
            f"{path}: interleave must be '{INTERLEAVE}', got '{header.interleave}'"
        )
    if header.byte_order != BYTE_ORDER:
        raise DataError(
            f"{path}: byte order must be '{BYTE_ORDER}', got '{header.byte_order}'"
        )


def _read_raw(header_path: Path, expected_bytes: int) -> bytes:
    raw_path = _raw_path(header_path)
    try:
        raw = raw_path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read raw file {raw_path}: {exc}") from exc
    if len(raw) != expected_bytes:
        raise DataError(
            f"{raw_path}: expected {expected_bytes} bytes, found {len(raw)}"
        )
    return raw


def load_cube(header_path: Path | str) -> HyperspectralCube:
    """Load an f32 BSQ cube described by its header file.

    The sibling ``.raw`` file must hold exactly width*height*bands 32-bit
    little-endian floats. Non-finite values are rejected with the first
    offending (band, row, col) position.
    """
    path = Path(header_path)
    header = parse_header(path)
    _check_tags(path, header, CUBE_DTYPE)
    expected = header.width * header.height * header.n_bands * 4
    raw = _read_raw(path, expected)
    data = np.frombuffer(raw, dtype="<f4").reshape(
        header.n_bands, header.height, header.width
    )
    wavelengths = np.asarray(header.wavelengths) if header.wavelengths else None
    return HyperspectralCube(data=data.copy(), band_wavelengths=wavelengths)


def load_ground_truth(header_path: Path | str) -> GroundTruthMap:
    """Load a u16 single-band ground-truth raster and validate its labels."""
    path = Path(header_path)
    header = parse_header(path)
    _check_tags(path, header, GT_DTYPE)
    if header.n_bands != 1:
        raise DataError(f"{path}: ground truth must be single-band, got {header.n_bands}")
    expected = header.width * header.height * 2
    raw = _read_raw(path, expected)
    labels = np.frombuffer(raw, dtype="<u2").reshape(header.height, header.width)
    gt = GroundTruthMap(labels=labels.copy(), class_names=header.class_names)
    if header.classes is not None and header.classes != gt.n_classes:
        raise DataError(
            f"{path}: header declares {header.classes} classes but raster has {gt.n_classes}"
        )
    return gt


def _write_header_lines(path: Path, lines: list[str]) -> None:
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write header {path}: {exc}") from exc


def save_cube(cube: HyperspectralCube, header_path: Path | str) -> None:
    """Write a cube as header + raw pair; load_cube() round-trips bit-exactly."""
    path = Path(header_path)
    lines = [
        f"samples = {cube.width}",
        f"lines = {cube.height}",
        f"bands = {cube.n_bands}",
        f"data type = {CUBE_DTYPE}",
        f"interleave = {INTERLEAVE}",
        f"byte order = {BYTE_ORDER}",
    ]
    if cube.band_wavelengths is not None:
        wl = ",".join(format(float(v), ".17g") for v in cube.band_wavelengths)
        lines.append(f"wavelengths = {wl}")
    _write_header_lines(path, lines)
    try:
        _raw_path(path).write_bytes(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())
    except OSError as exc:
        raise DataError(f"cannot write raw file {_raw_path(path)}: {exc}") from exc


def save_ground_truth(gt: GroundTruthMap, header_path: Path | str) -> None:
    """Write a ground-truth raster as header + raw pair."""
    path = Path(header_path)
    lines = [
        f"samples = {gt.width}",
        f"lines = {gt.height}",
        "bands = 1",
        f"data type = {GT_DTYPE}",
        f"interleave = {INTERLEAVE}",
        f"byte order = {BYTE_ORDER}",
        f"classes = {gt.n_classes}",
    ]
    if gt.class_names is not None:
        lines.append(f"class names = {','.join(gt.class_names)}")
    _write_header_lines(path, lines)
    try:
        _raw_path(path).write_bytes(np.ascontiguousarray(gt.labels, dtype="<u2").tobytes())
    except OSError as exc:
        raise DataError(f"cannot write raw file {_raw_path(path)}: {exc}") from exc


def save_label_raster(labels: np.ndarray, header_path: Path | str) -> None:
    """Write an arbitrary u16 label raster (e.g. predictions) without
    the contiguity validation applied to ground truth."""
    path = Path(header_path)
    labels = np.ascontiguousarray(labels, dtype="<u2")
    if labels.ndim != 2:
        raise DataError("label raster must be 2-D")
    lines = [
        f"samples = {labels.shape[1]}",
        f"lines = {labels.shape[0]}",
        "bands = 1",
        f"data type = {GT_DTYPE}",
        f"interleave = {INTERLEAVE}",
        f"byte order = {BYTE_ORDER}",
    ]
    _write_header_lines(path, lines)
    try:
        _raw_path(path).write_bytes(labels.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write raw file {_raw_path(path)}: {exc}") from exc


def load_label_raster(header_path: Path | str) -> np.ndarray:
    """Load a u16 single-band raster without ground-truth label validation."""
    path = Path(header_path)
    header = parse_header(path)
    _check_tags(path, header, GT_DTYPE)
    if header.n_bands != 1:
        raise DataError(f"{path}: label raster must be single-band")
    raw = _read_raw(path, header.width * header.height * 2)
    return np.frombuffer(raw, dtype="<u2").reshape(header.height, header.width).copy()


_IMPORT_DTYPES = {"u16": "<u2", "i16": "<i2", "f32": "<f4", "f64": "<f8"}


def import_cube(header_path: Path | str) -> HyperspectralCube:
    """Ingest a cube whose raw file is u16/i16/f32/f64 and convert to f32.

    This is the relaxed reader behind the ``import`` CLI subcommand; the
    regular loader only accepts the canonical f32 format.
    """
    path = Path(header_path)
    header = parse_header(path)
    if header.dtype not in _IMPORT_DTYPES:
        raise DataError(
            f"{path}: cannot import data type '{header.dtype}' "
            f"(supported: {', '.join(sorted(_IMPORT_DTYPES))})"
        )
    if header.interleave != INTERLEAVE:
        raise DataError(f"{path}: only '{INTERLEAVE}' interleave is supported")
    if header.byte_order != BYTE_ORDER:
        raise DataError(f"{path}: only '{BYTE_ORDER}' byte order is supported")
    np_dtype = np.dtype(_IMPORT_DTYPES[header.dtype])
    expected = header.width * header.height * header.n_bands * np_dtype.itemsize
    raw = _read_raw(path, expected)
    data = np.frombuffer(raw, dtype=np_dtype).reshape(
        header.n_bands, header.height, header.width
    )
    wavelengths = np.asarray(header.wavelengths) if header.wavelengths else None
    return HyperspectralCube(
        data=data.astype(np.float32), band_wavelengths=wavelengths
    )
