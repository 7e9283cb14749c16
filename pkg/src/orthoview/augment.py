"""Training-time point-cloud augmentations and per-protocol presets.

All ops are pure: they take an explicit numpy Generator (see
:mod:`orthoview.rng`) and return a new cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import PointCloud

PROTOCOL_NAMES = ("pointnet2", "dgcnn", "rscnn", "simpleview")


@dataclass(frozen=True)
class AugmentSpec:
    """Which augmentations run, their parameters, and their order."""

    jitter: bool = False
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    rotate_y: bool = False
    scale: bool = False
    scale_lo: float = 0.8
    scale_hi: float = 1.25
    translate: bool = False
    translate_range: float = 0.1
    order: tuple = ("rotate_y", "scale", "translate", "jitter")

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.jitter_clip < 0:
            raise ValueError("jitter_clip must be >= 0")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ValueError("need 0 < scale_lo <= scale_hi")
        if self.translate_range < 0:
            raise ValueError("translate_range must be >= 0")
        if set(self.order) != {"rotate_y", "scale", "translate", "jitter"}:
            raise ValueError(f"order must be a permutation of the four ops, got {self.order}")

    def enabled(self) -> tuple:
        return tuple(op for op in self.order if getattr(self, op))


def jitter(cloud: PointCloud, sigma: float, clip: float, rng: np.random.Generator) -> PointCloud:
    """Add per-coordinate Gaussian noise N(0, sigma^2), clipped to [-clip, clip]."""
    if sigma < 0 or clip < 0:
        raise ValueError("sigma and clip must be >= 0")
    if sigma == 0.0:
        return cloud
    noise = np.clip(rng.normal(0.0, sigma, size=cloud.points.shape), -clip, clip)
    return replace(cloud, points=cloud.points + noise)


def rotate_y(cloud: PointCloud, angle: float) -> PointCloud:
    """Rotate about the y axis: x' = x cos + z sin, z' = -x sin + z cos."""
    if not np.isfinite(angle):
        raise ValueError("angle must be finite")
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    pts = np.stack([x * c + z * s, y, -x * s + z * c], axis=1)
    return replace(cloud, points=pts)


def random_rotate_y(cloud: PointCloud, rng: np.random.Generator) -> PointCloud:
    return rotate_y(cloud, rng.uniform(0.0, 2.0 * np.pi))


def random_scale(cloud: PointCloud, lo: float, hi: float, rng: np.random.Generator) -> PointCloud:
    """Multiply all coordinates by a single scalar drawn from U[lo, hi]."""
    if not 0 < lo <= hi:
        raise ValueError("need 0 < lo <= hi")
    return replace(cloud, points=cloud.points * rng.uniform(lo, hi))


def random_translate(cloud: PointCloud, rng: np.random.Generator, rng_range: float) -> PointCloud:
    """Add a single offset vector drawn from U[-range, range]^3."""
    if rng_range < 0:
        raise ValueError("range must be >= 0")
    return replace(cloud, points=cloud.points + rng.uniform(-rng_range, rng_range, size=3))


def apply(spec: AugmentSpec, cloud: PointCloud, rng: np.random.Generator) -> PointCloud:
    """Apply the enabled augmentations in spec.order."""
    for op in spec.order:
        if op == "rotate_y" and spec.rotate_y:
            cloud = random_rotate_y(cloud, rng)
        elif op == "scale" and spec.scale:
            cloud = random_scale(cloud, spec.scale_lo, spec.scale_hi, rng)
        elif op == "translate" and spec.translate:
            cloud = random_translate(cloud, rng, spec.translate_range)
        elif op == "jitter" and spec.jitter:
            cloud = jitter(cloud, spec.jitter_sigma, spec.jitter_clip, rng)
    return cloud


def preset(protocol: str) -> AugmentSpec:
    """Augmentation set used by each named protocol.

    pointnet2 enables everything; dgcnn, rscnn and simpleview use only
    random scaling and translation.
    """
    if protocol not in PROTOCOL_NAMES:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOL_NAMES}")
    if protocol == "pointnet2":
        return AugmentSpec(jitter=True, rotate_y=True, scale=True, translate=True)
    return AugmentSpec(scale=True, translate=True)
