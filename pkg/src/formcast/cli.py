"""Command-line orchestration: doe | generate | train | evaluate | predict
| sweep | reconstruct | serve.

A JSON config file may name the grid, bounds, oracle config, thresholds,
net config and seeds; --seed and --res override it.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import engine as eg
from .io_formats import load_checkpoint, read_fqt, write_fqt
from .network import NetConfig, ResSEUNet
from .oracle import DEFAULT_ORACLE, OracleConfig
from .params import (
    DEFAULT_BOUNDS,
    ParameterBounds,
    ParameterVector,
    export_doe,
    from_unit,
    lhs_sample,
)
from .raster_in import GridSpec
from .raster_target import ClipThresholds
from .reconstruct import (
    as_formed_mesh,
    export_mesh,
    formed_height_map,
    mesh_summary,
    wrinkle_height,
)
from .train_eval import (
    evaluate,
    generate_dataset,
    load_dataset,
    save_dataset,
    speed_sweep,
    split,
    train,
)


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "grid": {"n_pixels": 64, "frame_mm": 740.0},
    "bounds": DEFAULT_BOUNDS.as_dict(),
    "oracle": DEFAULT_ORACLE.as_dict(),
    "clip_thresholds": {"c1": 0.40, "c2": -0.40},
    "net": {"out_channels": 1},
    "seed": 0,
    "train": {"epochs": 50, "batch": 20, "test_frac": 0.1},
}


def load_config(path=None, seed=None, res=None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            user = json.load(f)
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in user.items():
            if isinstance(cfg[key], dict):
                missing = set(value) - set(cfg[key])
                if missing:
                    raise ConfigError(
                        f"unknown keys under {key!r}: {sorted(missing)}")
                cfg[key].update(value)
            else:
                cfg[key] = value
    if seed is not None:
        cfg["seed"] = seed
    if res is not None:
        cfg["grid"]["n_pixels"] = res
    return cfg


def _grid(cfg) -> GridSpec:
    return GridSpec(**cfg["grid"])


def _bounds(cfg) -> ParameterBounds:
    return ParameterBounds(**{k: tuple(v) for k, v in cfg["bounds"].items()})


def _midpoint_pv(bounds: ParameterBounds) -> ParameterVector:
    return from_unit(np.full(9, 0.5), bounds)


def _load_net_checkpoint(path, expected_channels=None) -> ResSEUNet:
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    net, _, _ = load_checkpoint(path)
    if expected_channels and net.config.out_channels != expected_channels:
        raise ConfigError(
            f"checkpoint {path} has {net.config.out_channels} output "
            f"channels, expected {expected_channels}")
    return net


# ---------------------------------------------------------------------------
# subcommands


def cmd_doe(args):
    cfg = load_config(args.config, args.seed, args.res)
    samples = lhs_sample(args.n, _bounds(cfg), seed=cfg["seed"])
    with open(args.out, "w") as f:
        f.write(export_doe(samples, cfg["seed"], _bounds(cfg)))
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_generate(args):
    cfg = load_config(args.config, args.seed, args.res)
    dataset = generate_dataset(
        args.n, seed=cfg["seed"], grid=_grid(cfg), bounds=_bounds(cfg),
        thresholds=ClipThresholds(**cfg["clip_thresholds"]),
        oracle_config=OracleConfig(**cfg["oracle"]))
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.seed, args.res)
    if not os.path.isdir(args.dataset):
        raise ConfigError(f"dataset path not found: {args.dataset}")
    dataset = load_dataset(args.dataset)
    if dataset.grid.n_pixels != cfg["grid"]["n_pixels"]:
        raise ConfigError(
            f"dataset resolution {dataset.grid.n_pixels} does not match "
            f"config resolution {cfg['grid']['n_pixels']}")
    tr = cfg["train"]
    train_set, test_set = split(dataset, tr["test_frac"], seed=cfg["seed"])
    out_channels = 1 if args.target == "thinning" else 3
    net = ResSEUNet(NetConfig(resolution=dataset.grid.n_pixels,
                              out_channels=out_channels), seed=cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, f"{args.target}.fqt")
    epochs = args.epochs if args.epochs is not None else tr["epochs"]
    run = train(net, train_set, test_set, epochs=epochs, batch=tr["batch"],
                seed=cfg["seed"], checkpoint_path=ckpt)
    run.export_json(os.path.join(args.out, f"{args.target}_run.json"))
    print(f"trained {run.epochs_run} epochs; final test loss "
          f"{run.test_losses[-1]:.6e}; checkpoint {ckpt}")
    return 0


def cmd_evaluate(args):
    if not os.path.isdir(args.dataset):
        raise ConfigError(f"dataset path not found: {args.dataset}")
    dataset = load_dataset(args.dataset)
    net = _load_net_checkpoint(args.checkpoint)
    if net.config.resolution != dataset.grid.n_pixels:
        raise ConfigError("checkpoint resolution does not match the dataset")
    scores = evaluate(net, dataset)
    print(json.dumps(scores, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(scores, f, indent=2, sort_keys=True)
    return 0


def _predict_one(pv, grid, bounds, thinning_net, displacement_net):
    from .service import ModelBundle, predict_fields
    bundle = ModelBundle(thinning=thinning_net, displacement=displacement_net,
                         thinning_id="local", displacement_id="local",
                         bounds=bounds)
    return predict_fields(bundle, pv, grid)


def cmd_predict(args):
    cfg = load_config(args.config, args.seed, args.res)
    grid, bounds = _grid(cfg), _bounds(cfg)
    if args.params:
        with open(args.params) as f:
            pv = ParameterVector.from_dict(json.load(f))
    else:
        pv = _midpoint_pv(bounds)
    n = grid.n_pixels
    if args.thinning_ckpt:
        thin_net = _load_net_checkpoint(args.thinning_ckpt, 1)
        disp_net = _load_net_checkpoint(args.displacement_ckpt, 3) \
            if args.displacement_ckpt else ResSEUNet(
                NetConfig(resolution=n, out_channels=3), seed=cfg["seed"])
    else:
        # smoke mode: untrained, seeded networks
        thin_net = ResSEUNet(NetConfig(resolution=n, out_channels=1),
                             seed=cfg["seed"])
        disp_net = ResSEUNet(NetConfig(resolution=n, out_channels=3),
                             seed=cfg["seed"])
    fields = _predict_one(pv, grid, bounds, thin_net, disp_net)
    write_fqt(args.out, {"thinning": fields["thinning"],
                         "displacement": fields["displacement"],
                         "mask": fields["mask"].astype(np.float32)},
              trailing_json={"params": pv.as_dict()})
    print(f"wrote thinning {fields['thinning'].shape} and displacement "
          f"{fields['displacement'].shape} to {args.out}")
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config, args.seed, args.res)
    grid, bounds = _grid(cfg), _bounds(cfg)
    net = _load_net_checkpoint(args.checkpoint, 1)
    if args.params:
        with open(args.params) as f:
            pv = ParameterVector.from_dict(json.load(f))
    else:
        pv = _midpoint_pv(bounds)
    speeds = list(np.linspace(args.speed_min, args.speed_max, args.n_speeds))
    temps = [float(t) for t in args.temps.split(",")]
    result = speed_sweep(pv, speeds, temps, net, grid, bounds)
    write_fqt(args.out, {"images": result.images},
              trailing_json={"metadata": result.metadata})
    print(f"wrote {len(result.images)} sweep images to {args.out}")
    return 0


def cmd_reconstruct(args):
    cfg = load_config(args.config, args.seed, args.res)
    grid = _grid(cfg)
    if not os.path.exists(args.fields):
        raise ConfigError(f"fields file not found: {args.fields}")
    tensors, meta = read_fqt(args.fields)
    if meta is None or "params" not in meta:
        raise ConfigError("fields file lacks the params JSON block")
    pv = ParameterVector.from_dict(meta["params"])
    mask = tensors["mask"].astype(np.uint8)
    mesh = as_formed_mesh(tensors["displacement"], tensors["thinning"],
                          mask, grid)
    z, coverage = formed_height_map(mesh, grid)
    wrinkles = wrinkle_height(z, pv, grid, mask=coverage)
    summary = mesh_summary(mesh, wrinkles, pv, grid)
    export_mesh(mesh, args.out, summary, args.summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app, load_models

    models = load_models(args.thinning_ckpt, args.displacement_ckpt)
    app = create_app(models)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formcast")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--res", type=int, default=None)

    p = sub.add_parser("doe", help="Latin hypercube design of experiments")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_doe)

    p = sub.add_parser("generate", help="oracle-backed dataset generation")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", choices=("thinning", "displacement"),
                   default="thinning")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict")
    common(p)
    p.add_argument("--params", default=None, help="JSON parameter file")
    p.add_argument("--thinning-ckpt", default=None)
    p.add_argument("--displacement-ckpt", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--speed-min", type=float, default=50.0)
    p.add_argument("--speed-max", type=float, default=500.0)
    p.add_argument("--n-speeds", type=int, default=10)
    p.add_argument("--temps", default="350,500")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reconstruct")
    common(p)
    p.add_argument("--fields", required=True, help="FQT from `predict`")
    p.add_argument("--out", required=True, help="FQM mesh path")
    p.add_argument("--summary", default=None, help="JSON summary path")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("serve")
    common(p)
    p.add_argument("--thinning-ckpt", required=True)
    p.add_argument("--displacement-ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
