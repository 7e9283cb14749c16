"""Model configurations and the two desk-scale architectures.

SimpleViewNet: shared ResNet18/q backbone over V single-channel depth
views, feature fusion (concat or max pool over views), two-layer head.

PointNetLite: shared per-point MLP, global max pool, two-layer head.
Exactly permutation invariant.  The input/feature transform sub-networks
of the original PointNet are omitted at this scale.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..rng import stream
from . import tensor as T
from .layers import BatchNorm, Conv2d, Linear, Module, ResNet18Backbone
from .tensor import Tensor

ARCHS = ("simpleview", "pointnet")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "simpleview"
    n_classes: int = 8
    q: int = 4  # ResNet width divisor; 4 = "one-fourth filters"
    resolution: int = 32
    n_views: int = 6
    projection: str = "perspective"  # perspective | orthographic
    depth_mode: str = "wavg"  # min | wavg
    fusion: str = "concat"  # concat | pool
    head_hidden: int = 128
    pointnet_widths: tuple = (64, 64, 128, 256)
    pointnet_head_hidden: int = 128

    def __post_init__(self):
        object.__setattr__(self, "pointnet_widths", tuple(self.pointnet_widths))
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.n_views not in (1, 3, 6):
            raise ValueError("n_views must be 1, 3 or 6")
        if self.fusion not in ("concat", "pool"):
            raise ValueError("fusion must be 'concat' or 'pool'")
        if self.depth_mode not in ("min", "wavg"):
            raise ValueError("depth_mode must be 'min' or 'wavg'")
        if self.projection not in ("perspective", "orthographic"):
            raise ValueError("projection must be 'perspective' or 'orthographic'")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.resolution < 16:
            raise ValueError("resolution must be >= 16 for the ResNet strides")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pointnet_widths"] = list(self.pointnet_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["pointnet_widths"] = tuple(d.get("pointnet_widths", (64, 64, 128, 256)))
        return cls(**d)


def fuse_views(features: Tensor, mode: str) -> Tensor:
    """(B, V, F) per-view features -> fused vector.

    concat flattens to (B, V*F) and is order-sensitive; pool takes the
    elementwise max over views and is order-free.
    """
    b, v, f = features.shape
    if mode == "concat":
        return T.reshape(features, (b, v * f))
    if mode == "pool":
        return T.amax(features, axis=1)
    raise ValueError(f"unknown fusion mode {mode!r}")


class SimpleViewNet(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.backbone = ResNet18Backbone(cfg.q, rng)
        fused = self.backbone.out_width * (cfg.n_views if cfg.fusion == "concat" else 1)
        self.head1 = Linear(fused, cfg.head_hidden, rng=rng)
        self.head2 = Linear(cfg.head_hidden, cfg.n_classes, rng=rng)

    def forward(self, images: Tensor) -> Tensor:
        """images (B, V, R, R) -> logits (B, K)."""
        b, v = images.shape[0], images.shape[1]
        if v != self.cfg.n_views:
            raise ValueError(f"expected {self.cfg.n_views} views, got {v}")
        flat = T.reshape(images, (b * v, images.shape[2], images.shape[3], 1))
        feats = self.backbone.forward(flat)  # (B*V, F)
        feats = T.reshape(feats, (b, v, self.backbone.out_width))
        fused = fuse_views(feats, self.cfg.fusion)
        return self.head2.forward(T.relu(self.head1.forward(fused)))


class PointNetLite(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.mlps = []
        self.bns = []
        cin = 3
        for w in cfg.pointnet_widths:
            self.mlps.append(Linear(cin, w, bias=False, rng=rng))
            self.bns.append(BatchNorm(w))
            cin = w
        self.head1 = Linear(cin, cfg.pointnet_head_hidden, rng=rng)
        self.head2 = Linear(cfg.pointnet_head_hidden, cfg.n_classes, rng=rng)

    def forward(self, points: Tensor) -> Tensor:
        """points (B, N, 3) -> logits (B, K)."""
        h = points
        for lin, bn in zip(self.mlps, self.bns):
            h = T.relu(bn.forward(lin.forward(h)))
        pooled = T.amax(h, axis=1)  # global max over points
        return self.head2.forward(T.relu(self.head1.forward(pooled)))


def build_model(cfg: ModelConfig, seed: int) -> Module:
    """Deterministically initialized model (He-normal weights)."""
    rng = stream(seed, "init", cfg.arch)
    if cfg.arch == "simpleview":
        return SimpleViewNet(cfg, rng)
    return PointNetLite(cfg, rng)
