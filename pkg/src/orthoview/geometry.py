"""Point-cloud data types, synthetic shape generation, corruption, and I/O.

Coordinates are dimensionless model units.  Clouds that feed the renderer
are expected to be normalized into the [-1, 1] cube first (see
:func:`normalize_unit_cube`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import stream

SHAPE_KINDS = (
    "sphere",
    "box",
    "cylinder",
    "cone",
    "torus",
    "plane",
    "capsule",
    "ellipsoid",
)

SHAPE_DEFAULTS = {
    "sphere": {"radius": 1.0},
    "box": {"extents": (1.6, 1.1, 0.8)},
    "cylinder": {"radius": 0.45, "height": 1.5},
    "cone": {"radius": 0.6, "height": 1.3},
    "torus": {"ring_radius": 0.7, "tube_radius": 0.25},
    "plane": {"width": 1.4, "depth": 1.0},
    "capsule": {"radius": 0.4, "height": 1.0},
    "ellipsoid": {"radii": (1.0, 0.7, 0.55)},
}


class DegenerateCloudWarning(UserWarning):
    """All points coincide; the cloud was centered but not scaled."""


class XyzFormatError(ValueError):
    """Malformed .xyz file."""


@dataclass
class PointCloud:
    """N points (x, y, z) with an optional class label and a stable uid.

    The uid identifies the object inside a dataset split; per-object random
    streams (sampling, augmentation) are keyed on it.
    """

    points: np.ndarray
    label: int | None = None
    uid: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        self.points = pts

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass
class DatasetSplit:
    """A labelled set of clouds plus the class-name table."""

    clouds: list[PointCloud]
    class_names: list[str]
    role: str = "train"  # train | validation | test

    def __post_init__(self):
        if not self.class_names:
            raise ValueError("class_names must be non-empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class_names must be unique")
        k = len(self.class_names)
        for c in self.clouds:
            if c.label is None or not (0 <= c.label < k):
                raise ValueError(f"cloud uid={c.uid} has label {c.label} outside [0, {k})")

    def __len__(self) -> int:
        return len(self.clouds)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def normalize_unit_cube(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale uniformly into [-1, 1]^3.

    The scale is the largest absolute centered coordinate, so at least one
    coordinate lands exactly on +-1.  A degenerate cloud (all points equal)
    is centered, left unscaled, and a DegenerateCloudWarning is issued.
    Idempotent up to floating-point roundoff.
    """
    centered = cloud.points - cloud.points.mean(axis=0)
    s = np.abs(centered).max()
    if s == 0.0:
        warnings.warn(
            "degenerate cloud (all points identical): centered but not scaled",
            DegenerateCloudWarning,
            stacklevel=2,
        )
        return replace(cloud, points=centered)
    return replace(cloud, points=centered / s)


# ---------------------------------------------------------------------------
# synthetic shapes, sampled uniformly by surface area
# ---------------------------------------------------------------------------


def _unit_directions(rng, n):
    v = rng.normal(size=(n, 3))
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    return v / norm


def _sample_sphere(rng, n, radius):
    return radius * _unit_directions(rng, n)


def _sample_box(rng, n, extents):
    h = np.asarray(extents, dtype=np.float64) / 2.0
    # face pair i has area 2 * product of the other two half-extents
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
    pts[np.arange(n), axis] = sign * h[axis]
    return pts


def _sample_cylinder(rng, n, radius, height):
    # axis along y; lateral area 2*pi*r*h, two caps pi*r^2 each
    side_area = 2.0 * np.pi * radius * height
    cap_area = np.pi * radius**2
    u = rng.random(n) * (side_area + 2 * cap_area)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    on_side = u < side_area
    pts[on_side, 0] = radius * np.cos(theta[on_side])
    pts[on_side, 2] = radius * np.sin(theta[on_side])
    pts[on_side, 1] = rng.uniform(-height / 2, height / 2, size=on_side.sum())
    on_cap = ~on_side
    r = radius * np.sqrt(rng.random(on_cap.sum()))
    pts[on_cap, 0] = r * np.cos(theta[on_cap])
    pts[on_cap, 2] = r * np.sin(theta[on_cap])
    pts[on_cap, 1] = np.where(
        u[on_cap] < side_area + cap_area, -height / 2, height / 2
    )
    return pts


def _sample_cone(rng, n, radius, height):
    # base disk at y = -h/2, apex at y = +h/2
    slant = np.hypot(radius, height)
    lateral_area = np.pi * radius * slant
    base_area = np.pi * radius**2
    u = rng.random(n) * (lateral_area + base_area)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    lateral = u < lateral_area
    # area grows quadratically with distance from the apex
    t = np.sqrt(rng.random(lateral.sum()))
    pts[lateral, 0] = t * radius * np.cos(theta[lateral])
    pts[lateral, 2] = t * radius * np.sin(theta[lateral])
    pts[lateral, 1] = height / 2 - t * height
    base = ~lateral
    r = radius * np.sqrt(rng.random(base.sum()))
    pts[base, 0] = r * np.cos(theta[base])
    pts[base, 2] = r * np.sin(theta[base])
    pts[base, 1] = -height / 2
    return pts


def _sample_torus(rng, n, ring_radius, tube_radius):
    # hole axis along y; area element ~ (R + r*cos(phi)) -> rejection on phi
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = 2 * (n - filled) + 16
        phi = rng.uniform(0.0, 2.0 * np.pi, size=m)
        accept = rng.random(m) * (ring_radius + tube_radius) <= (
            ring_radius + tube_radius * np.cos(phi)
        )
        phi = phi[accept][: n - filled]
        k = phi.shape[0]
        theta = rng.uniform(0.0, 2.0 * np.pi, size=k)
        rad = ring_radius + tube_radius * np.cos(phi)
        out[filled : filled + k, 0] = rad * np.cos(theta)
        out[filled : filled + k, 1] = tube_radius * np.sin(phi)
        out[filled : filled + k, 2] = rad * np.sin(theta)
        filled += k
    return out


def _sample_plane(rng, n, width, depth):
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(-width / 2, width / 2, size=n)
    pts[:, 2] = rng.uniform(-depth / 2, depth / 2, size=n)
    return pts


def _sample_capsule(rng, n, radius, height):
    # cylinder of the given height with hemispherical caps, axis along y
    side_area = 2.0 * np.pi * radius * height
    caps_area = 4.0 * np.pi * radius**2
    u = rng.random(n) * (side_area + caps_area)
    pts = np.empty((n, 3))
    on_side = u < side_area
    theta = rng.uniform(0.0, 2.0 * np.pi, size=on_side.sum())
    pts[on_side, 0] = radius * np.cos(theta)
    pts[on_side, 2] = radius * np.sin(theta)
    pts[on_side, 1] = rng.uniform(-height / 2, height / 2, size=on_side.sum())
    on_cap = ~on_side
    v = _unit_directions(rng, on_cap.sum()) * radius
    top = rng.random(on_cap.sum()) < 0.5
    v[:, 1] = np.where(top, np.abs(v[:, 1]), -np.abs(v[:, 1]))
    v[:, 1] += np.where(top, height / 2, -height / 2)
    pts[on_cap] = v
    return pts


def _sample_ellipsoid(rng, n, radii):
    a, b, c = radii
    gmax = max(b * c, a * c, a * b)
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = 2 * (n - filled) + 16
        u = _unit_directions(rng, m)
        g = np.sqrt((b * c * u[:, 0]) ** 2 + (a * c * u[:, 1]) ** 2 + (a * b * u[:, 2]) ** 2)
        u = u[rng.random(m) * gmax <= g][: n - filled]
        k = u.shape[0]
        out[filled : filled + k] = u * np.asarray(radii)
        filled += k
    return out


_SAMPLERS = {
    "sphere": lambda rng, n, p: _sample_sphere(rng, n, p["radius"]),
    "box": lambda rng, n, p: _sample_box(rng, n, p["extents"]),
    "cylinder": lambda rng, n, p: _sample_cylinder(rng, n, p["radius"], p["height"]),
    "cone": lambda rng, n, p: _sample_cone(rng, n, p["radius"], p["height"]),
    "torus": lambda rng, n, p: _sample_torus(rng, n, p["ring_radius"], p["tube_radius"]),
    "plane": lambda rng, n, p: _sample_plane(rng, n, p["width"], p["depth"]),
    "capsule": lambda rng, n, p: _sample_capsule(rng, n, p["radius"], p["height"]),
    "ellipsoid": lambda rng, n, p: _sample_ellipsoid(rng, n, p["radii"]),
}


def _check_positive(kind, params):
    for key, val in params.items():
        vals = val if isinstance(val, (tuple, list)) else (val,)
        if any(v <= 0 for v in vals):
            raise ValueError(f"{kind}: parameter {key}={val} must be positive")


def synth_shape(kind: str, n_points: int, seed: int, params: dict | None = None) -> PointCloud:
    """Sample ``n_points`` uniformly by area from the surface of a shape.

    Deterministic given (kind, n_points, seed, params).  The label is the
    shape's index in SHAPE_KINDS.
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}; choose from {SHAPE_KINDS}")
    if n_points < 8:
        raise ValueError("n_points must be >= 8")
    p = dict(SHAPE_DEFAULTS[kind])
    if params:
        p.update(params)
    _check_positive(kind, p)
    rng = stream(seed, "synth", kind, n_points)
    pts = _SAMPLERS[kind](rng, n_points, p)
    return PointCloud(points=pts, label=SHAPE_KINDS.index(kind))


# ---------------------------------------------------------------------------
# corruption (scan-style noise: clutter, holes, occlusion, misalignment)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    """Which corruptions to apply.  All off -> identity.

    background: fraction of points replaced by uniform clutter in [-1,1]^3.
    hole_radius: remove points inside a ball of this radius centered on a
        randomly chosen cloud point, then resample back to N.
    occlusion_tau: remove points with p.d > tau for a random direction d,
        then resample back to N.  None disables.
    rotate: None, "y" (random yaw) or "any" (random angle about a random axis).
    """

    background: float = 0.0
    hole_radius: float = 0.0
    occlusion_tau: float | None = None
    rotate: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.background <= 1.0:
            raise ValueError(f"background fraction must be in [0, 1], got {self.background}")
        if self.hole_radius < 0.0:
            raise ValueError("hole_radius must be >= 0")
        if self.rotate not in (None, "y", "any"):
            raise ValueError(f"rotate must be None, 'y' or 'any', got {self.rotate!r}")


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    ax = np.asarray(axis, dtype=np.float64)
    ax = ax / np.linalg.norm(ax)
    k = np.array(
        [[0.0, -ax[2], ax[1]], [ax[2], 0.0, -ax[0]], [-ax[1], ax[0], 0.0]]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _resample_to(points: np.ndarray, n: int, rng) -> np.ndarray:
    """Pad survivors back to n points by duplicating uniformly at random."""
    if points.shape[0] == 0:
        raise ValueError("corruption removed every point; cannot resample")
    if points.shape[0] == n:
        return points
    extra = rng.integers(0, points.shape[0], size=n - points.shape[0])
    return np.concatenate([points, points[extra]], axis=0)


def corrupt(cloud: PointCloud, spec: CorruptionSpec, seed: int) -> PointCloud:
    """Apply the selected corruptions; output has exactly N points.

    Application order: rotate, occlusion, hole, background.  Deterministic
    given (cloud, spec, seed).
    """
    n = cloud.n_points
    pts = cloud.points.copy()

    if spec.rotate is not None:
        rng = stream(seed, "corrupt-rotate")
        angle = rng.uniform(0.0, 2.0 * np.pi)
        axis = np.array([0.0, 1.0, 0.0]) if spec.rotate == "y" else _unit_directions(rng, 1)[0]
        pts = pts @ rotation_about_axis(axis, angle).T

    if spec.occlusion_tau is not None:
        rng = stream(seed, "corrupt-occlusion")
        d = _unit_directions(rng, 1)[0]
        pts = _resample_to(pts[pts @ d <= spec.occlusion_tau], n, rng)

    if spec.hole_radius > 0.0:
        rng = stream(seed, "corrupt-hole")
        center = pts[rng.integers(0, pts.shape[0])]
        keep = np.linalg.norm(pts - center, axis=1) >= spec.hole_radius
        pts = _resample_to(pts[keep], n, rng)

    if spec.background > 0.0:
        rng = stream(seed, "corrupt-background")
        k = int(round(spec.background * n))
        idx = rng.choice(n, size=k, replace=False)
        pts[idx] = rng.uniform(-1.0, 1.0, size=(k, 3))

    return replace(cloud, points=pts)


def hole_center(cloud: PointCloud, spec: CorruptionSpec, seed: int) -> np.ndarray:
    """The ball center :func:`corrupt` uses for this (cloud, spec, seed).

    Replays the upstream corruption stages so the returned center matches
    the point actually drawn inside :func:`corrupt`.
    """
    probe = replace(spec, hole_radius=0.0, background=0.0)
    pts = corrupt(cloud, probe, seed).points if (probe.rotate or probe.occlusion_tau is not None) else cloud.points
    rng = stream(seed, "corrupt-hole")
    return pts[rng.integers(0, pts.shape[0])].copy()


# ---------------------------------------------------------------------------
# point sampling strategies (fixed vs resampled training points)
# ---------------------------------------------------------------------------


def sample_points(cloud: PointCloud, n: int, strategy: str, epoch: int, seed: int) -> PointCloud:
    """Pick n training points from a cloud.

    fixed: the first n entries of a one-time seed-determined permutation,
    the same at every epoch.  resampled: a fresh uniform subset per
    (seed, epoch, cloud uid), with replacement when the cloud is smaller
    than n.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    big = cloud.n_points
    if strategy == "fixed":
        if big < n:
            raise ValueError(f"fixed strategy needs >= {n} points, cloud has {big}")
        perm = stream(seed, "sample-fixed", cloud.uid).permutation(big)
        idx = perm[:n]
    elif strategy == "resampled":
        rng = stream(seed, "sample-resampled", cloud.uid, epoch)
        idx = rng.choice(big, size=n, replace=big < n)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return replace(cloud, points=cloud.points[idx])


# ---------------------------------------------------------------------------
# .xyz files and dataset directories
# ---------------------------------------------------------------------------


def save_xyz(cloud: PointCloud, path) -> None:
    """One 'x y z' line per point, 6 decimal places."""
    lines = [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in cloud.points]
    Path(path).write_text("\n".join(lines) + "\n")


def load_xyz(path) -> PointCloud:
    """Parse a .xyz file; '#' lines and blank lines are skipped."""
    pts = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise XyzFormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            xyz = [float(v) for v in parts]
        except ValueError:
            raise XyzFormatError(f"{path}:{lineno}: non-numeric value") from None
        if not all(np.isfinite(v) for v in xyz):
            raise XyzFormatError(f"{path}:{lineno}: non-finite value")
        pts.append(xyz)
    if not pts:
        raise XyzFormatError(f"{path}: no points")
    return PointCloud(points=np.array(pts))


def save_dataset(split: DatasetSplit, root) -> None:
    """Write <root>/<class_name>/<uid>.xyz plus <root>/classes.txt."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text("\n".join(split.class_names) + "\n")
    counters = [0] * split.n_classes
    for cloud in split.clouds:
        cdir = root / split.class_names[cloud.label]
        cdir.mkdir(exist_ok=True)
        save_xyz(cloud, cdir / f"{counters[cloud.label]:04d}.xyz")
        counters[cloud.label] += 1


def load_dataset(root, role: str = "train") -> DatasetSplit:
    """Load a dataset directory written by :func:`save_dataset`.

    Files are visited in sorted (class, filename) order so uids are stable.
    """
    root = Path(root)
    classes_file = root / "classes.txt"
    if not classes_file.exists():
        raise FileNotFoundError(f"{root}: missing classes.txt")
    class_names = [l for l in classes_file.read_text().splitlines() if l.strip()]
    clouds = []
    uid = 0
    for label, name in enumerate(class_names):
        cdir = root / name
        files = sorted(cdir.glob("*.xyz")) if cdir.is_dir() else []
        if not files:
            raise FileNotFoundError(f"{root}: class {name!r} has no .xyz files")
        for f in files:
            cloud = load_xyz(f)
            clouds.append(replace(cloud, label=label, uid=uid))
            uid += 1
    return DatasetSplit(clouds=clouds, class_names=list(class_names), role=role)


# ---------------------------------------------------------------------------
# synthetic dataset generation
# ---------------------------------------------------------------------------

# proper rotations sending the canonical y axis onto each signed axis
_FACING_ROTATIONS = [
    rotation_about_axis(np.array([0.0, 0.0, 1.0]), -np.pi / 2),  # y -> +x
    rotation_about_axis(np.array([0.0, 0.0, 1.0]), +np.pi / 2),  # y -> -x
    np.eye(3),                                                   # y -> +y
    rotation_about_axis(np.array([1.0, 0.0, 0.0]), np.pi),       # y -> -y
    rotation_about_axis(np.array([1.0, 0.0, 0.0]), +np.pi / 2),  # y -> +z
    rotation_about_axis(np.array([1.0, 0.0, 0.0]), -np.pi / 2),  # y -> -z
]


@dataclass
class SynthDatasetConfig:
    """Knobs for the synthetic 8-class benchmark.

    Defaults are sized so the full views/projection/fusion/depth ablation
    grid is tractable on a single CPU core.
    """

    n_train: int = 48  # objects per class
    n_test: int = 25
    n_points: int = 512  # stored per object
    size_jitter: float = 0.2  # per-dimension relative jitter
    tilt_max: float = 0.5  # radians, tilt about a random axis
    random_facing: bool = True  # orient the canonical axis along a random signed axis
    seed: int = 0
    kinds: tuple = SHAPE_KINDS


def _jitter_params(kind: str, rng, jitter: float) -> dict:
    out = {}
    for key, val in SHAPE_DEFAULTS[kind].items():
        if isinstance(val, tuple):
            out[key] = tuple(v * rng.uniform(1 - jitter, 1 + jitter) for v in val)
        else:
            out[key] = val * rng.uniform(1 - jitter, 1 + jitter)
    return out


def make_instance(cfg: SynthDatasetConfig, kind: str, instance_seed: int) -> PointCloud:
    """One randomized, normalized object of the given class."""
    rng = stream(instance_seed, "instance", kind)
    params = _jitter_params(kind, rng, cfg.size_jitter)
    cloud = synth_shape(kind, cfg.n_points, instance_seed, params)
    rot = np.eye(3)
    if cfg.random_facing:
        rot = _FACING_ROTATIONS[rng.integers(0, 6)] @ rot
    if cfg.tilt_max > 0.0:
        axis = _unit_directions(rng, 1)[0]
        rot = rotation_about_axis(axis, rng.uniform(0.0, cfg.tilt_max)) @ rot
    cloud = replace(cloud, points=cloud.points @ rot.T)
    return normalize_unit_cube(cloud)


def generate_dataset(cfg: SynthDatasetConfig) -> tuple[DatasetSplit, DatasetSplit]:
    """Deterministic (train, test) splits of randomized shape instances."""
    splits = []
    for role, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        clouds = []
        uid = 0
        for label, kind in enumerate(cfg.kinds):
            for i in range(count):
                inst_seed = int(stream(cfg.seed, "dataset", role, kind, i).integers(0, 2**63))
                cloud = make_instance(cfg, kind, inst_seed)
                clouds.append(replace(cloud, label=label, uid=uid))
                uid += 1
        splits.append(DatasetSplit(clouds=clouds, class_names=list(cfg.kinds), role=role))
    return splits[0], splits[1]
