"""Command-line surface: dataset generation, rendering, training, grids.

Every command resolves its configuration (config file < flags), writes a
manifest.json first, then writes artifacts atomically.  Re-running a
command from its manifest at BLAS thread count 1 reproduces all numeric
outputs bit-exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import augment as augmod
from . import protocol as proto
from .geometry import (
    SHAPE_KINDS,
    SynthDatasetConfig,
    generate_dataset,
    load_dataset,
    load_xyz,
    normalize_unit_cube,
    save_dataset,
)
from .nn.checkpoint import load_model, save_checkpoint
from .nn.models import ModelConfig, build_model
from .projection import render_multiview, write_pgm16

PROJECTION_FLAGS = {"persp": "perspective", "ortho": "orthographic"}
PROJECTION_NAMES = {v: k for k, v in PROJECTION_FLAGS.items()}


def write_atomic(path, data) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    tmp.replace(path)


def write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _parse_seeds(arg: str | None, default: list) -> list:
    if arg:
        return [int(s) for s in arg.split(",") if s.strip() != ""]
    env = os.environ.get("ORTHOVIEW_SEED")
    if env is not None:
        return [int(env)]
    return list(default)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _resolve(flag_value, config: dict, *keys, default=None):
    """Flags beat config-file values beat defaults."""
    if flag_value is not None:
        return flag_value
    node = config
    for key in keys:
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


def _model_config(args, config: dict) -> ModelConfig:
    base = config.get("model", {})
    projection = PROJECTION_FLAGS[args.projection] if args.projection else base.get("projection", "perspective")
    return ModelConfig(
        arch=_resolve(args.arch, base, "arch", default="simpleview"),
        n_classes=base.get("n_classes", 8),
        q=base.get("q", 4),
        resolution=_resolve(args.resolution, base, "resolution", default=32),
        n_views=_resolve(args.views, base, "n_views", default=6),
        projection=projection,
        depth_mode=_resolve(args.depth, base, "depth_mode", default="wavg"),
        fusion=_resolve(args.fusion, base, "fusion", default="concat"),
        head_hidden=base.get("head_hidden", 128),
        pointnet_widths=tuple(base.get("pointnet_widths", (64, 64, 128, 256))),
        pointnet_head_hidden=base.get("pointnet_head_hidden", 128),
    )


def _protocol_spec(args, config: dict) -> proto.ProtocolSpec:
    base = config.get("protocol")
    name = _resolve(getattr(args, "protocol", None), base or {}, "name", default="simpleview")
    if base is not None and getattr(args, "protocol", None) in (None, base.get("name")):
        spec = proto.ProtocolSpec.from_dict(base)
    else:
        spec = proto.protocol_preset(name)
    overrides = {}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "points", None) is not None:
        overrides["n_points"] = args.points
    if getattr(args, "fraction", None) is not None:
        overrides["train_fraction"] = args.fraction
    if getattr(args, "ensemble", None) is not None:
        overrides["ensemble"] = args.ensemble
    if getattr(args, "batch_size", None) is not None:
        overrides["batch_size"] = args.batch_size
    return replace(spec, **overrides) if overrides else spec


def _manifest(command: str, out: Path, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "orthoview_version": __version__,
        "kernel_backend": kernels.backend_name(),
        **payload,
    }
    write_json(out / "manifest.json", doc)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    config = _load_config(args.config)
    base = config.get("dataset", {})
    cfg = SynthDatasetConfig(
        n_train=_resolve(args.train, base, "n_train", default=100),
        n_test=_resolve(args.test, base, "n_test", default=25),
        n_points=_resolve(args.points, base, "n_points", default=512),
        size_jitter=_resolve(args.size_jitter, base, "size_jitter", default=0.2),
        tilt_max=_resolve(args.tilt, base, "tilt_max", default=0.5),
        random_facing=base.get("random_facing", True) if args.no_facing is False else False,
        seed=_parse_seeds(args.seeds, [base.get("seed", 0)])[0],
    )
    out = Path(args.out)
    _manifest("gen", out, {"out": str(out), "dataset": cfg.__dict__ | {"kinds": list(cfg.kinds)}})
    train, test = generate_dataset(cfg)
    save_dataset(train, out / "train")
    save_dataset(test, out / "test")
    print(f"gen: wrote {len(train)} train / {len(test)} test clouds to {out}")
    return 0


def cmd_render(args) -> int:
    config = _load_config(args.config)
    mcfg = _model_config(args, config)
    out = Path(args.out)
    if args.xyz:
        clouds = [(Path(args.xyz).stem, normalize_unit_cube(load_xyz(args.xyz)))]
    elif args.data:
        split = load_dataset(Path(args.data), role="render")
        clouds = [(f"{split.class_names[c.label]}_{c.uid:04d}", c) for c in split.clouds[: args.limit]]
    else:
        raise ValueError("render needs --xyz FILE or --data DIR")
    _manifest(
        "render",
        out,
        {
            "out": str(out),
            "source": args.xyz or args.data,
            "model": mcfg.to_dict(),
            "limit": args.limit,
        },
    )
    count = 0
    for name, cloud in clouds:
        stack = render_multiview(cloud, mcfg.n_views, mcfg.resolution, mcfg.projection, mcfg.depth_mode)
        for k, img in enumerate(stack.images):
            write_pgm16(out / f"{name}_view{k}.pgm", img)
            count += 1
    print(f"render: wrote {count} PGM files to {out}")
    return 0


def _load_splits(data_dir):
    root = Path(data_dir)
    return load_dataset(root / "train", "train"), load_dataset(root / "test", "test")


def cmd_train(args) -> int:
    config = _load_config(args.config)
    data = _resolve(args.data, config, "data")
    if not data:
        raise ValueError("train needs --data DIR (or a config with 'data')")
    seeds = _parse_seeds(args.seeds, config.get("seeds", [0]))
    if len(seeds) != 1:
        raise ValueError("train runs one seed; use ablate/compare for sweeps")
    seed = seeds[0]
    mcfg = _model_config(args, config)
    spec = _protocol_spec(args, config)
    out = Path(args.out)
    _manifest(
        "train",
        out,
        {
            "out": str(out),
            "data": str(data),
            "seeds": [seed],
            "model": mcfg.to_dict(),
            "protocol": spec.to_dict(),
        },
    )
    train_split, test_split = _load_splits(data)
    result = proto.run_single(mcfg.arch, mcfg, spec, train_split, test_split, seed)
    model = build_model(mcfg, seed)
    proto.restore(model, result.model_state)
    save_checkpoint(out / "model.ovck", mcfg, model)
    curves = {name: log.epochs for name, log in result.logs.items()}
    write_json(out / "log.json", {"row": result.row, "curves": curves})
    write_json(out / "metrics.json", result.metrics.to_dict() | {"row": result.row})
    write_atomic(out / "report.csv", proto.report_csv([result.row]))
    write_atomic(out / "confusion.csv", proto.confusion_csv(result.metrics, train_split.class_names))
    print(
        f"train: arch={mcfg.arch} protocol={spec.name} seed={seed} "
        f"acc={result.row['overall_acc']:.4f} class_acc={result.row['class_acc']:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    data = _resolve(args.data, config, "data")
    ckpt = _resolve(args.checkpoint, config, "checkpoint")
    if not data or not ckpt:
        raise ValueError("eval needs --checkpoint FILE and --data DIR")
    model, mcfg = load_model(ckpt)
    spec = _protocol_spec(args, config)
    ensemble = args.ensemble or "none"
    seeds = _parse_seeds(args.seeds, config.get("seeds", [0]))
    out = Path(args.out)
    _manifest(
        "eval",
        out,
        {
            "out": str(out),
            "data": str(data),
            "checkpoint": str(ckpt),
            "ensemble": ensemble,
            "seeds": seeds,
            "model": mcfg.to_dict(),
            "protocol": spec.to_dict(),
        },
    )
    test_split = load_dataset(Path(data) / "test" if (Path(data) / "test").is_dir() else Path(data), "test")
    metrics = proto.evaluate(model, mcfg, test_split, ensemble=ensemble, spec=spec, seed=seeds[0])
    write_json(out / "metrics.json", metrics.to_dict())
    write_atomic(out / "confusion.csv", proto.confusion_csv(metrics, test_split.class_names))
    print(f"eval: acc={metrics.overall_acc:.4f} class_acc={metrics.class_acc:.4f}")
    return 0


def _run_cell(cell, train_split, test_split):
    arch, mcfg, spec, seed, label = cell
    result = proto.run_single(arch, mcfg, spec, train_split, test_split, seed)
    row = dict(result.row)
    row["protocol"] = label
    return row


def _run_cells(cells, train_split, test_split, jobs: int) -> list:
    runner = partial(_run_cell, train_split=train_split, test_split=test_split)
    if jobs > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(jobs) as pool:
            return list(pool.map(runner, cells, chunksize=1))
    return [runner(c) for c in cells]


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    data = _resolve(args.data, config, "data")
    if not data:
        raise ValueError("ablate needs --data DIR")
    seeds = _parse_seeds(args.seeds, config.get("seeds", [0, 1, 2, 3]))
    mcfg = _model_config(args, config)
    spec = replace(_protocol_spec(args, config), selection="last", ensemble="none")
    out = Path(args.out)
    _manifest(
        "ablate",
        out,
        {
            "out": str(out),
            "data": str(data),
            "seeds": seeds,
            "model": mcfg.to_dict(),
            "protocol": spec.to_dict(),
            "jobs": args.jobs,
        },
    )
    train_split, test_split = _load_splits(data)
    cells = []
    for views in (1, 3, 6):
        for projection in ("perspective", "orthographic"):
            for fusion in ("pool", "concat"):
                for depth in ("min", "wavg"):
                    cell_cfg = replace(
                        mcfg, arch="simpleview", n_views=views, projection=projection,
                        fusion=fusion, depth_mode=depth,
                    )
                    label = f"v{views}-{PROJECTION_NAMES[projection]}-{fusion}-{depth}"
                    for seed in seeds:
                        cells.append(("simpleview", cell_cfg, spec, seed, label))
    rows = _run_cells(cells, train_split, test_split, args.jobs)
    write_atomic(out / "report.csv", proto.report_csv(rows))
    print(f"ablate: wrote {len(rows)} rows ({len(rows) // len(seeds)} cells x {len(seeds)} seeds)")
    return 0


def cmd_compare(args) -> int:
    config = _load_config(args.config)
    data = _resolve(args.data, config, "data")
    if not data:
        raise ValueError("compare needs --data DIR")
    seeds = _parse_seeds(args.seeds, config.get("seeds", [0, 1, 2, 3]))
    mcfg = _model_config(args, config)
    base_spec = _protocol_spec(args, config)
    archs = (args.archs or "simpleview,pointnet").split(",")
    fractions = [float(f) for f in (args.fractions or "1.0").split(",")]
    out = Path(args.out)

    grid = []
    if args.protocols:
        for name in args.protocols.split(","):
            grid.append((name, proto.protocol_preset(name, epochs=base_spec.epochs,
                                                     n_points=base_spec.n_points,
                                                     batch_size=base_spec.batch_size)))
    else:
        # loss x selection grid around the shared scale+translate augmentation
        for loss in ("cross_entropy", "smooth"):
            for selection in ("final", "best_test"):
                label = f"{'ce' if loss == 'cross_entropy' else 'smooth'}-{selection}"
                grid.append((label, replace(base_spec, name=label, loss=loss, selection=selection)))
    _manifest(
        "compare",
        out,
        {
            "out": str(out),
            "data": str(data),
            "seeds": seeds,
            "archs": archs,
            "fractions": fractions,
            "model": mcfg.to_dict(),
            "grid": {label: spec.to_dict() for label, spec in grid},
            "jobs": args.jobs,
        },
    )
    train_split, test_split = _load_splits(data)
    cells = []
    for label, spec in grid:
        for frac in fractions:
            frac_spec = replace(spec, train_fraction=frac)
            cell_label = label if len(fractions) == 1 else f"{label}-f{frac}"
            for arch in archs:
                for seed in seeds:
                    cells.append((arch, mcfg, frac_spec, seed, cell_label))
    rows = _run_cells(cells, train_split, test_split, args.jobs)
    write_atomic(out / "report.csv", proto.report_csv(rows))
    print(f"compare: wrote {len(rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", help="comma-separated seeds (else ORTHOVIEW_SEED, else defaults)")


def _add_model_flags(p):
    p.add_argument("--arch", choices=("simpleview", "pointnet"))
    p.add_argument("--views", type=int, choices=(1, 3, 6))
    p.add_argument("--projection", choices=tuple(PROJECTION_FLAGS))
    p.add_argument("--fusion", choices=("pool", "concat"))
    p.add_argument("--depth", choices=("min", "wavg"))
    p.add_argument("--resolution", type=int)


def _add_protocol_flags(p):
    p.add_argument("--protocol", choices=proto.PROTOCOL_NAMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--points", type=int, help="training/eval points per object")
    p.add_argument("--fraction", type=float)
    p.add_argument("--ensemble", choices=("none", "rotvote", "rsvote"))
    p.add_argument("--batch-size", type=int, dest="batch_size")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="orthoview", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize the shape dataset")
    _add_common(p)
    p.add_argument("--train", type=int, help="train objects per class")
    p.add_argument("--test", type=int, help="test objects per class")
    p.add_argument("--points", type=int, help="stored points per object")
    p.add_argument("--size-jitter", type=float, dest="size_jitter")
    p.add_argument("--tilt", type=float, help="max tilt angle (radians)")
    p.add_argument("--no-facing", action="store_true", help="disable random axis facing")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", help="dump depth-image PGMs")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--xyz", help="render a single .xyz file")
    p.add_argument("--data", help="render clouds from a dataset directory")
    p.add_argument("--limit", type=int, default=8, help="max clouds from --data")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="one (arch, protocol, seed) training run")
    _add_common(p)
    _add_model_flags(p)
    _add_protocol_flags(p)
    p.add_argument("--data", help="dataset root (with train/ and test/)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with an ensemble")
    _add_common(p)
    _add_protocol_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="views x projection x fusion x depth grid")
    _add_common(p)
    _add_model_flags(p)
    _add_protocol_flags(p)
    p.add_argument("--data")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="protocol x architecture grid / fraction sweep")
    _add_common(p)
    _add_model_flags(p)
    _add_protocol_flags(p)
    p.add_argument("--data")
    p.add_argument("--archs", help="comma-separated: simpleview,pointnet")
    p.add_argument("--fractions", help="comma-separated training fractions")
    p.add_argument("--protocols", help="run named presets instead of the loss/selection grid")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
