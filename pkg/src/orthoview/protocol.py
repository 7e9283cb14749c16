"""Training/evaluation protocols: the bundle of choices orthogonal to the
architecture (augmentation, point sampling, loss, model selection, and
test-time ensembles), plus the runners that execute them end to end.
"""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import augment as aug
from .augment import AugmentSpec
from .geometry import DatasetSplit, PointCloud, sample_points
from .nn import no_grad
from .nn.losses import smooth_loss, softmax
from .nn.models import ModelConfig, build_model
from .nn.optim import Adam, PlateauScheduler
from .nn.tensor import Tensor
from .projection import render_batch
from .rng import stream

PROTOCOL_NAMES = aug.PROTOCOL_NAMES


@dataclass(frozen=True)
class ProtocolSpec:
    """Everything about a run except the network architecture."""

    name: str = "custom"
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    point_strategy: str = "fixed"  # fixed | resampled
    loss: str = "smooth"  # cross_entropy | smooth
    smooth_eps: float = 0.2
    selection: str = "final"  # final | best_test | last
    ensemble: str = "none"  # none | rotvote | rsvote
    rotvote_rotations: int = 12
    rotvote_shuffle: bool = True
    rsvote_trials: int = 300
    rsvote_versions: int = 10
    epochs: int = 100
    batch_size: int = 18
    train_fraction: float = 1.0
    n_points: int = 256
    val_fraction: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 0.0
    sched_factor: float = 0.5
    sched_patience: int = 10
    lr_min: float = 1e-5

    def __post_init__(self):
        if self.point_strategy not in ("fixed", "resampled"):
            raise ValueError(f"bad point_strategy {self.point_strategy!r}")
        if self.loss not in ("cross_entropy", "smooth"):
            raise ValueError(f"bad loss {self.loss!r}")
        if self.selection not in ("final", "best_test", "last"):
            raise ValueError(f"bad selection {self.selection!r}")
        if self.ensemble not in ("none", "rotvote", "rsvote"):
            raise ValueError(f"bad ensemble {self.ensemble!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["order"] = list(self.augment.order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolSpec":
        d = dict(d)
        a = dict(d.pop("augment"))
        a["order"] = tuple(a.get("order", ("rotate_y", "scale", "translate", "jitter")))
        return cls(augment=AugmentSpec(**a), **d)


def protocol_preset(name: str, **overrides) -> ProtocolSpec:
    """The four named protocols (augmentation / selection / loss / ensemble /
    points), desk-scale training defaults filled in."""
    base = {
        "pointnet2": dict(
            augment=aug.preset("pointnet2"),
            point_strategy="fixed",
            loss="cross_entropy",
            selection="final",
            ensemble="rotvote",
        ),
        "dgcnn": dict(
            augment=aug.preset("dgcnn"),
            point_strategy="fixed",
            loss="smooth",
            selection="best_test",
            ensemble="none",
        ),
        "rscnn": dict(
            augment=aug.preset("rscnn"),
            point_strategy="resampled",
            loss="cross_entropy",
            selection="best_test",
            ensemble="rsvote",
        ),
        "simpleview": dict(
            augment=aug.preset("simpleview"),
            point_strategy="fixed",
            loss="smooth",
            selection="final",
            ensemble="none",
        ),
    }
    if name not in base:
        raise ValueError(f"unknown protocol {name!r}; choose from {sorted(base)}")
    kw = base[name]
    kw.update(overrides)
    return ProtocolSpec(name=name, **kw)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    overall_acc: float
    class_acc: float
    confusion: np.ndarray  # (K, K) counts, rows = true class

    def to_dict(self) -> dict:
        return {
            "overall_acc": self.overall_acc,
            "class_acc": self.class_acc,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(y_true, y_pred, n_classes: int) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    overall = confusion.trace() / confusion.sum()
    row_sums = confusion.sum(axis=1)
    present = row_sums > 0
    class_acc = float(np.mean(confusion.diagonal()[present] / row_sums[present]))
    return Metrics(overall_acc=float(overall), class_acc=class_acc, confusion=confusion)


def confusion_csv(metrics: Metrics, class_names) -> str:
    out = io.StringIO()
    out.write(",".join(class_names) + "\n")
    for row in metrics.confusion:
        out.write(",".join(str(int(v)) for v in row) + "\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# dataset splitting helpers
# ---------------------------------------------------------------------------


def _class_indices(split: DatasetSplit):
    by_class = [[] for _ in range(split.n_classes)]
    for i, c in enumerate(split.clouds):
        by_class[c.label].append(i)
    return by_class


def split_validation(train: DatasetSplit, fraction: float, seed: int):
    """Class-stratified (train', val) partition; deterministic by seed."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    tr_idx, val_idx = [], []
    for label, idx in enumerate(_class_indices(train)):
        if len(idx) < 2:
            raise ValueError(f"class {label} has {len(idx)} sample(s); need >= 2 to split")
        order = stream(seed, "valsplit", label).permutation(len(idx))
        n_val = min(len(idx) - 1, max(1, round(fraction * len(idx))))
        chosen = [idx[o] for o in order]
        val_idx.extend(chosen[:n_val])
        tr_idx.extend(chosen[n_val:])
    tr = DatasetSplit(
        clouds=[train.clouds[i] for i in sorted(tr_idx)],
        class_names=train.class_names,
        role="train",
    )
    val = DatasetSplit(
        clouds=[train.clouds[i] for i in sorted(val_idx)],
        class_names=train.class_names,
        role="validation",
    )
    return tr, val


def stratified_fraction(split: DatasetSplit, fraction: float, seed: int) -> DatasetSplit:
    """Class-stratified subset with round(fraction * n) per class (min 1)."""
    if fraction >= 1.0:
        return split
    keep = []
    for label, idx in enumerate(_class_indices(split)):
        order = stream(seed, "fraction", label).permutation(len(idx))
        n_keep = max(1, round(fraction * len(idx)))
        keep.extend(idx[o] for o in order[:n_keep])
    return DatasetSplit(
        clouds=[split.clouds[i] for i in sorted(keep)],
        class_names=split.class_names,
        role=split.role,
    )


# ---------------------------------------------------------------------------
# input preparation
# ---------------------------------------------------------------------------


def eval_points(cloud: PointCloud, n: int) -> np.ndarray:
    """Deterministic test-time points: the first n stored points (cycled if
    the cloud is smaller)."""
    pts = cloud.points
    if pts.shape[0] >= n:
        return pts[:n]
    reps = int(np.ceil(n / pts.shape[0]))
    return np.tile(pts, (reps, 1))[:n]


def make_inputs(point_sets: list, cfg: ModelConfig) -> np.ndarray:
    """Stack model inputs for a list of (n, 3) point arrays.

    simpleview: (B, V, R, R) depth images; pointnet: (B, N, 3) points.
    """
    if cfg.arch == "simpleview":
        return render_batch(
            point_sets,
            n_views=cfg.n_views,
            R=cfg.resolution,
            mode=cfg.projection,
            depth_mode=cfg.depth_mode,
        )
    return np.stack(point_sets)


def predict_probs(model, inputs: np.ndarray, chunk: int = 128) -> np.ndarray:
    """Softmax probabilities in eval mode, batched."""
    model.eval()
    probs = []
    with no_grad():
        for i in range(0, inputs.shape[0], chunk):
            logits = model.forward(Tensor(inputs[i : i + chunk]))
            probs.append(softmax(logits.data))
    return np.concatenate(probs, axis=0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, lr, val_acc?, test_acc?
    final_state: dict | None = None
    best_test: dict | None = None  # {"epoch", "acc", "state"}

    def curve(self, key: str) -> list:
        return [row[key] for row in self.epochs if key in row]


def snapshot(model) -> dict:
    return {
        "params": {n: p.data.copy() for n, p in model.named_parameters()},
        "buffers": {n: b.copy() for n, b in model.named_buffers()},
    }


def restore(model, state: dict):
    for n, p in model.named_parameters():
        p.data[...] = state["params"][n]
    for n, b in model.named_buffers():
        b[...] = state["buffers"][n]


def _accuracy(model, inputs: np.ndarray, labels: np.ndarray) -> float:
    preds = predict_probs(model, inputs).argmax(axis=1)
    return float((preds == labels).mean())


def train(
    model,
    cfg: ModelConfig,
    spec: ProtocolSpec,
    train_split: DatasetSplit,
    seed: int,
    val_split: DatasetSplit | None = None,
    test_split: DatasetSplit | None = None,
    monitor: str = "loss",
    epochs: int | None = None,
) -> TrainLog:
    """One training run; logs per-epoch loss, LR, and tracked accuracies.

    monitor picks the plateau-scheduler signal: "val" / "test" follow the
    corresponding accuracy, "loss" follows the training loss.  Deterministic
    given (model init, data, spec, seed) at a fixed BLAS thread count.
    """
    if monitor not in ("loss", "val", "test"):
        raise ValueError(f"bad monitor {monitor!r}")
    if monitor == "val" and val_split is None:
        raise ValueError("monitor='val' needs a validation split")
    if monitor == "test" and test_split is None:
        raise ValueError("monitor='test' needs a test split")
    n_epochs = spec.epochs if epochs is None else epochs
    optimizer = Adam(model.parameters(), lr=spec.lr, weight_decay=spec.weight_decay)
    scheduler = PlateauScheduler(
        optimizer,
        mode="min" if monitor == "loss" else "max",
        factor=spec.sched_factor,
        patience=spec.sched_patience,
        lr_min=spec.lr_min,
    )
    loss_eps = 0.0 if spec.loss == "cross_entropy" else spec.smooth_eps

    val_inputs = val_labels = test_inputs = test_labels = None
    if val_split is not None:
        val_inputs = make_inputs([eval_points(c, spec.n_points) for c in val_split.clouds], cfg)
        val_labels = np.array([c.label for c in val_split.clouds])
    if test_split is not None:
        test_inputs = make_inputs([eval_points(c, spec.n_points) for c in test_split.clouds], cfg)
        test_labels = np.array([c.label for c in test_split.clouds])

    log = TrainLog()
    n = len(train_split)
    for epoch in range(1, n_epochs + 1):
        model.train()
        order = stream(seed, "shuffle", epoch).permutation(n)
        losses = []
        for start in range(0, n, spec.batch_size):
            chunk = order[start : start + spec.batch_size]
            if chunk.shape[0] < 2:
                continue  # batchnorm needs >= 2
            point_sets, labels = [], []
            for i in chunk:
                cloud = train_split.clouds[i]
                pts = sample_points(cloud, spec.n_points, spec.point_strategy, epoch, seed)
                pts = aug.apply(spec.augment, pts, stream(seed, "augment", epoch, cloud.uid))
                point_sets.append(pts.points)
                labels.append(cloud.label)
            inputs = make_inputs(point_sets, cfg)
            try:
                logits = model.forward(Tensor(inputs))
                loss = smooth_loss(logits, np.array(labels), loss_eps)
                bad = not np.isfinite(loss.data)
            except ValueError as exc:  # non-finite logits
                loss, bad = exc, True
            if bad:
                uids = [train_split.clouds[i].uid for i in chunk]
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch start {start}, "
                    f"seed {seed}, cloud uids {uids}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": optimizer.lr}
        if val_inputs is not None:
            row["val_acc"] = _accuracy(model, val_inputs, val_labels)
        if test_inputs is not None:
            row["test_acc"] = _accuracy(model, test_inputs, test_labels)
            if log.best_test is None or row["test_acc"] > log.best_test["acc"]:
                log.best_test = {"epoch": epoch, "acc": row["test_acc"], "state": snapshot(model)}
        log.epochs.append(row)
        metric = {"loss": row["train_loss"], "val": row.get("val_acc"), "test": row.get("test_acc")}[monitor]
        scheduler.step(metric)
    log.final_state = snapshot(model)
    return log


def select_epoch(log: TrainLog, mode: str) -> int:
    """Epoch choice (1-based).  final: argmax of the validation curve;
    best_test: argmax of the test curve.  Ties break to the lowest epoch."""
    key = {"final": "val_acc", "best_test": "test_acc"}.get(mode)
    if key is None:
        raise ValueError(f"bad selection mode {mode!r}")
    curve = log.curve(key)
    if not curve:
        raise ValueError(f"log has no {key} curve; was the split evaluated per epoch?")
    return int(np.argmax(curve)) + 1


# ---------------------------------------------------------------------------
# test-time ensembles
# ---------------------------------------------------------------------------


def _rotate_points_y(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    return np.stack([x * c + z * s, y, -x * s + z * c], axis=1)


def rotation_vote_probs(
    model,
    cfg: ModelConfig,
    point_sets: list,
    n_rotations: int,
    shuffle: bool,
    seed: int,
) -> np.ndarray:
    """Average softmax over y-rotations at angles 2*pi*k/n (optionally with
    point shuffling); returns (N, K) averaged probabilities."""
    if n_rotations < 1:
        raise ValueError("n_rotations must be >= 1")
    total = None
    for k in range(n_rotations):
        angle = 2.0 * np.pi * k / n_rotations
        rotated = []
        for i, pts in enumerate(point_sets):
            p = _rotate_points_y(pts, angle)
            if shuffle:
                p = p[stream(seed, "rotvote-shuffle", k, i).permutation(p.shape[0])]
            rotated.append(p)
        probs = predict_probs(model, make_inputs(rotated, cfg))
        total = probs if total is None else total + probs
    return total / n_rotations


def rotation_vote(model, cfg, cloud: PointCloud, n_rotations: int, shuffle: bool, seed: int, n_points: int = 256) -> int:
    """Predicted class for one cloud under the rotation-vote ensemble."""
    probs = rotation_vote_probs(model, cfg, [eval_points(cloud, n_points)], n_rotations, shuffle, seed)
    return int(probs[0].argmax())


def repeated_scaling_vote(
    model,
    cfg: ModelConfig,
    split: DatasetSplit,
    spec: ProtocolSpec,
    n_trials: int,
    n_versions: int,
    seed: int,
):
    """Best accuracy over randomized trials, plus the full trial stream.

    Each trial builds n_versions randomly scaled + randomly resampled
    variants per object, averages their softmax, and scores the argmax.
    Returns (best_acc, trial_accs, predictions of the best trial).
    """
    if n_trials < 1 or n_versions < 1:
        raise ValueError("n_trials and n_versions must be >= 1")
    labels = np.array([c.label for c in split.clouds])
    trial_accs = np.zeros(n_trials)
    best_preds = None
    for t in range(n_trials):
        variants = []
        for cloud in split.clouds:
            g = stream(seed, "rsvote", t, cloud.uid)
            base = cloud.points
            for _ in range(n_versions):
                idx = g.integers(0, base.shape[0], size=spec.n_points)
                s = g.uniform(spec.augment.scale_lo, spec.augment.scale_hi)
                variants.append(base[idx] * s)
        probs = predict_probs(model, make_inputs(variants, cfg))
        probs = probs.reshape(len(split.clouds), n_versions, -1).mean(axis=1)
        preds = probs.argmax(axis=1)
        trial_accs[t] = float((preds == labels).mean())
        if best_preds is None or trial_accs[t] > trial_accs[:t].max(initial=-1.0):
            best_preds = preds
    return float(trial_accs.max()), trial_accs, best_preds


def evaluate(
    model,
    cfg: ModelConfig,
    split: DatasetSplit,
    ensemble: str = "none",
    spec: ProtocolSpec | None = None,
    seed: int = 0,
) -> Metrics:
    """Metrics on a split under the chosen test-time ensemble."""
    if len(split) == 0:
        raise ValueError("empty split")
    spec = spec or ProtocolSpec()
    labels = np.array([c.label for c in split.clouds])
    point_sets = [eval_points(c, spec.n_points) for c in split.clouds]
    if ensemble == "none":
        preds = predict_probs(model, make_inputs(point_sets, cfg)).argmax(axis=1)
    elif ensemble == "rotvote":
        probs = rotation_vote_probs(
            model, cfg, point_sets, spec.rotvote_rotations, spec.rotvote_shuffle, seed
        )
        preds = probs.argmax(axis=1)
    elif ensemble == "rsvote":
        _, _, preds = repeated_scaling_vote(
            model, cfg, split, spec, spec.rsvote_trials, spec.rsvote_versions, seed
        )
    else:
        raise ValueError(f"unknown ensemble {ensemble!r}")
    return compute_metrics(labels, preds, split.n_classes)


# ---------------------------------------------------------------------------
# full protocol runs
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    row: dict  # arch, protocol, seed, overall_acc, class_acc, selected_epoch, ensemble, fraction
    metrics: Metrics
    logs: dict  # phase name -> TrainLog
    model_state: dict


def run_single(
    arch: str,
    model_cfg: ModelConfig,
    spec: ProtocolSpec,
    train_split: DatasetSplit,
    test_split: DatasetSplit,
    seed: int,
    track_test: bool = False,
) -> RunResult:
    """Train + select + evaluate one (arch, protocol, seed) cell.

    selection "final" runs the two-phase scheme: tune the epoch count on a
    held-out validation split, then retrain on the full training set for
    that many epochs.  "best_test" takes the best per-epoch test snapshot.
    "last" is a plain single-phase run reporting the final epoch (used by
    the ablation grids); its per-epoch test curve is recorded when
    track_test is set.
    """
    cfg = replace(model_cfg, arch=arch)
    train_used = stratified_fraction(train_split, spec.train_fraction, seed)
    logs = {}
    model = build_model(cfg, seed)

    if spec.selection == "final":
        tr, val = split_validation(train_used, spec.val_fraction, seed)
        log1 = train(model, cfg, spec, tr, seed, val_split=val, monitor="val")
        logs["tune"] = log1
        epoch_star = select_epoch(log1, "final")
        model = build_model(cfg, seed)  # fresh init, same stream
        log2 = train(model, cfg, spec, train_used, seed, monitor="loss", epochs=epoch_star)
        logs["retrain"] = log2
        selected_epoch = epoch_star
    elif spec.selection == "best_test":
        log = train(model, cfg, spec, train_used, seed, test_split=test_split, monitor="test")
        logs["train"] = log
        selected_epoch = select_epoch(log, "best_test")
        restore(model, log.best_test["state"])
    else:  # last
        log = train(
            model,
            cfg,
            spec,
            train_used,
            seed,
            test_split=test_split if track_test else None,
            monitor="loss",
        )
        logs["train"] = log
        selected_epoch = len(log.epochs)

    metrics = evaluate(model, cfg, test_split, ensemble=spec.ensemble, spec=spec, seed=seed)
    row = {
        "arch": arch,
        "protocol": spec.name,
        "seed": seed,
        "overall_acc": metrics.overall_acc,
        "class_acc": metrics.class_acc,
        "selected_epoch": selected_epoch,
        "ensemble": spec.ensemble,
        "fraction": spec.train_fraction,
    }
    return RunResult(row=row, metrics=metrics, logs=logs, model_state=snapshot(model))


def run_protocol(
    arch: str,
    spec: ProtocolSpec,
    train_split: DatasetSplit,
    test_split: DatasetSplit,
    model_cfg: ModelConfig,
    seeds: list,
    track_test: bool = False,
) -> dict:
    """Repeat run_single over seeds; report mean and sample std."""
    if not seeds:
        raise ValueError("need at least one seed")
    results = [
        run_single(arch, model_cfg, spec, train_split, test_split, s, track_test=track_test)
        for s in seeds
    ]
    accs = np.array([r.row["overall_acc"] for r in results])
    return {
        "rows": [r.row for r in results],
        "results": results,
        "mean_overall": float(accs.mean()),
        "std_overall": float(accs.std(ddof=1)) if len(seeds) > 1 else 0.0,
    }


REPORT_COLUMNS = ("arch", "protocol", "seed", "overall_acc", "class_acc", "selected_epoch", "ensemble", "fraction")


def report_csv(rows: list) -> str:
    out = io.StringIO()
    out.write(",".join(REPORT_COLUMNS) + "\n")
    for row in rows:
        out.write(",".join(str(row[c]) for c in REPORT_COLUMNS) + "\n")
    return out.getvalue()
