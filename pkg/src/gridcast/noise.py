"""Measurement corruption: object dropout (miss) and position jitter (shift).

Noise acts on continuous objects before rasterization, so a dropped object
leaves free space and a shifted object moves as a whole disk.  Every random
decision is drawn from a stream keyed by (seed, kind, frame index, object
index), which makes each frame's corruption independent of the processing
order of every other frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .boids import SceneObject, rasterize
from .errors import ConfigError

_MISS_STREAM = 0
_SHIFT_STREAM = 1


@dataclass(frozen=True)
class NoiseConfig:
    miss_rate: float = 0.8
    shift_rate: float = 0.1
    max_shift: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ConfigError(f"miss_rate must be in [0,1], got {self.miss_rate}")
        if not 0.0 <= self.shift_rate <= 1.0:
            raise ConfigError(f"shift_rate must be in [0,1], got {self.shift_rate}")
        if self.max_shift < 1:
            raise ConfigError(f"max_shift must be >= 1, got {self.max_shift}")


def _stream(config: NoiseConfig, kind: int, frame_index: int, obj_index: int):
    return np.random.default_rng(
        [config.seed & 0xFFFFFFFFFFFFFFFF, kind, frame_index, obj_index]
    )


def apply_miss(
    objects: list[SceneObject], config: NoiseConfig, frame_index: int
) -> list[SceneObject]:
    """Drop each object independently with probability ``miss_rate``."""
    kept = []
    for k, obj in enumerate(objects):
        u = _stream(config, _MISS_STREAM, frame_index, k).random()
        if u >= config.miss_rate:
            kept.append(obj)
    return kept


def apply_shift(
    objects: list[SceneObject],
    config: NoiseConfig,
    frame_index: int,
    width: float,
    height: float,
) -> list[SceneObject]:
    """Displace each object with probability ``shift_rate`` by a uniform
    nonzero integer offset with |dx|,|dy| <= max_shift, clamped to the world."""
    out = []
    m = config.max_shift
    for k, obj in enumerate(objects):
        rng = _stream(config, _SHIFT_STREAM, frame_index, k)
        if rng.random() >= config.shift_rate:
            out.append(obj)
            continue
        dx = dy = 0
        while dx == 0 and dy == 0:
            dx = int(rng.integers(-m, m + 1))
            dy = int(rng.integers(-m, m + 1))
        x = min(max(obj.x + dx, 0.0), math.nextafter(width, 0.0))
        y = min(max(obj.y + dy, 0.0), math.nextafter(height, 0.0))
        out.append(replace(obj, x=x, y=y))
    return out


def corrupt_frame(
    objects: list[SceneObject],
    config: NoiseConfig,
    frame_index: int,
    height: int,
    width: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (measurement, truth) frames; miss is applied before shift."""
    truth = rasterize(objects, height, width)
    corrupted = apply_shift(
        apply_miss(objects, config, frame_index),
        config,
        frame_index,
        width,
        height,
    )
    measurement = rasterize(corrupted, height, width)
    return measurement, truth
