"""Command-line pipeline: collect -> fit -> predict / track.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
numerical failure (including constraint violations in ``track``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, plant_from_config
from .edmd import (CollectionError, collect_dataset, fit, load_model, read_dataset_csv, save_model,
                   write_dataset_csv)
from .harness import (ReferenceSignal, run_prediction_experiment, run_tracking_experiment,
                      square_wave, trace_metrics, write_metrics, write_prediction_csv,
                      write_trace_csv)
from .lifting import make_dictionary
from .mpc import KoopmanMPC, MpcConfig

log = logging.getLogger("koopman_auv")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _num(section: dict, key: str, kind=float):
    try:
        return kind(section[key])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"invalid or missing setting {key!r}: {section.get(key)!r}") from None


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    return path


def cmd_collect(args, cfg) -> int:
    c = cfg["collect"]
    data = collect_dataset(
        plant_from_config(cfg),
        n_traj=_num(c, "n_traj", int),
        steps_per_traj=_num(c, "steps", int),
        dt=_num(c, "dt"),
        input_low=_num(c, "input_low"),
        input_high=_num(c, "input_high"),
        v0_low=_num(c, "v0_low"),
        v0_high=_num(c, "v0_high"),
        seed=int(cfg["seed"]),
    )
    path = _outdir(args) / "dataset.csv"
    write_dataset_csv(data, path)
    print(f"wrote {path}")
    print(f"L = {len(data)} snapshots")
    for name, col in (("x", data.x), ("u", data.u), ("y", data.y)):
        print(f"  {name}: mean={col.mean():.6g} std={col.std():.6g} min={col.min():.6g} max={col.max():.6g}")
    return EXIT_OK


def cmd_fit(args, cfg) -> int:
    data = read_dataset_csv(_require_file(args.dataset))
    d = cfg["dictionary"]
    dictionary = make_dictionary(
        n=data.n,
        n_rbf=_num(d, "n_rbf", int),
        center_low=_num(d, "center_low"),
        center_high=_num(d, "center_high"),
        seed=int(cfg["seed"]),
        width=_num(d, "width"),
    )
    model = fit(data, dictionary, alpha=_num(cfg["fit"], "alpha"))
    path = _outdir(args) / "model.json"
    save_model(model, path)
    print(f"wrote {path}")
    print(f"A: {model.a.shape[0]}x{model.a.shape[1]}  B: {model.b.shape[0]}x{model.b.shape[1]}  "
          f"C: {model.c.shape[0]}x{model.c.shape[1]}")
    print(f"fit_residual = {model.fit_residual:.6e}")
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    model = load_model(_require_file(args.model))
    plant = plant_from_config(cfg)
    pc = cfg["predict"]
    v0s = args.v0 if args.v0 else pc["v0"]
    if not isinstance(v0s, (list, tuple)):
        v0s = [v0s]
    dt = _num(pc, "dt")
    duration = _num(pc, "duration")
    signal = square_wave(_num(pc, "amplitude"), _num(pc, "period"), duration, dt)
    out = _outdir(args)
    for v0 in v0s:
        v0 = float(v0)
        res = run_prediction_experiment(plant, model, v0, signal, duration, dt)
        path = out / f"prediction_v0={v0:g}.csv"
        write_prediction_csv(res, path)
        ratio = res.rmse / res.truth_rms if res.truth_rms > 0 else 0.0
        print(f"v0={v0:g}: rmse={res.rmse:.6e} truth_rms={res.truth_rms:.6e} ratio={ratio:.4f} -> {path}")
    return EXIT_OK


def mpc_config_from(cfg, preset=None) -> MpcConfig:
    m = dict(cfg["mpc"])
    name = preset or m.pop("preset", "matlab")
    m.pop("preset", None)
    try:
        return MpcConfig.preset(name, **m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mpc: {exc}") from None


def cmd_track(args, cfg) -> int:
    model = load_model(_require_file(args.model))
    plant = plant_from_config(cfg)
    mpc_cfg = mpc_config_from(cfg, args.preset)
    tc = cfg["track"]
    try:
        reference = ReferenceSignal(tuple(tuple(bp) for bp in tc["reference"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"track.reference: {exc}") from None
    dt = _num(tc, "dt")
    controller = KoopmanMPC(model, mpc_cfg)
    trace = run_tracking_experiment(plant, controller, reference, _num(tc, "duration"), dt,
                                    v0=_num(tc, "v0"))
    metrics = trace_metrics(trace, preview=mpc_cfg.horizon * dt)
    out = _outdir(args)
    write_trace_csv(trace, out / "trace.csv")
    write_metrics(metrics, out / "metrics.json")
    print(f"wrote {out / 'trace.csv'} and {out / 'metrics.json'}")
    print(f"max|u| = {metrics['max_abs_u']:.6g} (bounds {metrics['u_bounds']})  "
          f"max|du| = {metrics['max_abs_du']:.6g} (bounds {metrics['du_bounds']})")
    for seg in metrics["segments"]:
        print(f"  segment t={seg['t_start']:g}s ref={seg['reference']:g}: "
              f"steady-state error {seg['steady_state_error']:.3e}, settling {seg['settling_time']}")
    if metrics["violations"]:
        print(f"error: {metrics['violations']} constraint violation(s)", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. mpc.horizon=5 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="koopman-auv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("collect", parents=[common], help="simulate random-input snapshot data")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("fit", parents=[common], help="fit a lifted linear model to a dataset CSV")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="compare model prediction with the plant")
    p.add_argument("model")
    p.add_argument("--v0", type=float, action="append", help="initial speed (repeatable)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("track", parents=[common], help="closed-loop MPC reference tracking")
    p.add_argument("model")
    p.add_argument("--preset", choices=["matlab", "gazebo"], help="MPC constraint preset")
    p.set_defaults(func=cmd_track)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.seed)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # malformed input files and invalid parameter values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CollectionError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
