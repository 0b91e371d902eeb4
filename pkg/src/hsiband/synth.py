"""Seeded synthetic cubes with controlled inter-band correlation.

Bands are organized in groups. Within a group each band is a mix of one
shared latent field and per-band noise:

    band = class_mean + noise_std * (sqrt(rho) * latent + sqrt(1 - rho) * eps)

latent and eps are independent standard normals, so within a class any two
bands of the same group have population correlation exactly rho, while bands
of different groups are uncorrelated. That closed form is what the
correlation tests lean on. Ground truth splits the image into horizontal
class stripes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cube import GroundTruthMap, HyperspectralCube
from .errors import ConfigError


@dataclass(frozen=True)
class BandGroup:
    size: int
    rho: float

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ConfigError(f"band group size must be >= 1, got {self.size}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(
                f"intra-group correlation must be in [0, 1), got {self.rho}"
            )


@dataclass(frozen=True)
class SyntheticSpec:
    width: int
    height: int
    groups: tuple[BandGroup, ...]
    class_means: tuple[tuple[float, ...], ...]
    noise_std: float = 1.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ConfigError("image dimensions must be positive")
        if not self.groups:
            raise ConfigError("at least one band group is required")
        if self.n_bands < 2:
            raise ConfigError("synthetic cube needs at least 2 bands total")
        if not self.class_means:
            raise ConfigError("at least one class mean spectrum is required")
        for i, means in enumerate(self.class_means):
            if len(means) != self.n_bands:
                raise ConfigError(
                    f"class {i + 1} mean spectrum has {len(means)} entries, "
                    f"expected {self.n_bands}"
                )
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.height < self.n_classes:
            raise ConfigError(
                f"height {self.height} too small for {self.n_classes} class stripes"
            )

    @property
    def n_bands(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def n_classes(self) -> int:
        return len(self.class_means)

    @classmethod
    def from_dict(cls, obj: dict) -> SyntheticSpec:
        try:
            groups = tuple(
                BandGroup(size=int(g["size"]), rho=float(g["rho"]))
                for g in obj["groups"]
            )
            n_bands = sum(g.size for g in groups)
            raw_means = obj.get("class_means")
            if raw_means is None:
                class_means: tuple[tuple[float, ...], ...] = ((0.0,) * n_bands,)
            else:
                class_means = tuple(tuple(float(v) for v in row) for row in raw_means)
            return cls(
                width=int(obj["width"]),
                height=int(obj["height"]),
                groups=groups,
                class_means=class_means,
                noise_std=float(obj.get("noise_std", 1.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed synthetic spec: {exc}") from exc

    @classmethod
    def from_json(cls, path: Path | str) -> SyntheticSpec:
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read synthetic spec {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in synthetic spec {path}: {exc}") from exc
        return cls.from_dict(obj)


def _stripe_labels(spec: SyntheticSpec) -> np.ndarray:
    # class c (1-based) covers rows [floor((c-1)*H/k), floor(c*H/k))
    rows = np.arange(spec.height)
    stripe = (rows * spec.n_classes) // spec.height
    return np.repeat((stripe + 1).astype(np.uint16)[:, None], spec.width, axis=1)


def synthesize_cube(
    spec: SyntheticSpec, seed: int
) -> tuple[HyperspectralCube, GroundTruthMap]:
    """Generate a (cube, ground truth) pair; pure function of (spec, seed).

    Randomness comes from a single PCG64 stream consumed in a fixed order
    (per group: latent field, then one noise field per band), so identical
    inputs reproduce identical rasters bit for bit.
    """
    rng = np.random.default_rng(seed)
    labels = _stripe_labels(spec)
    means = np.asarray(spec.class_means, dtype=np.float64)

    data = np.empty((spec.n_bands, spec.height, spec.width), dtype=np.float64)
    band = 0
    for group in spec.groups:
        latent = rng.standard_normal((spec.height, spec.width))
        w_shared = math.sqrt(group.rho)
        w_noise = math.sqrt(1.0 - group.rho)
        for _ in range(group.size):
            eps = rng.standard_normal((spec.height, spec.width))
            signal = w_shared * latent + w_noise * eps
            data[band] = means[labels - 1, band] + spec.noise_std * signal
            band += 1

    cube = HyperspectralCube(data=data.astype(np.float32))
    gt = GroundTruthMap(labels=labels)
    return cube, gt
