"""Command-line entry point: ``uduc {train,eval,ablate,export-curves,inspect-checkpoint}``.

Exit codes: 0 success, 1 bad input (config, checkpoint, flags), 2 runtime
failure (diverged training).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import DEFAULT_CEM, DEFAULT_CONFIG, ConfigError, apply_overrides, dump_config, load_config
from .ensemble import CheckpointError, ensemble_digest, load_checkpoint, save_checkpoint
from .env import DEFAULT_RANGES, NOMINAL, PARAMETER_NAMES, make_grid
from .robustness import (evaluate_sweep, make_baseline_ensemble, make_report, summary_dict,
                         write_curve_csv, write_summary_json)
from .trainer import TrainingDiverged, run_training, write_loss_log, write_train_log

log = logging.getLogger("uduc")

ABLATIONS = {
    "temperature": ("inverse_tau", (0.25, 0.5, 1.0, 2.0, 4.0)),
    "ensemble_size": ("ensemble_size", (1, 3, 5, 9, 16)),
    "self_reg": ("self_regularization", (True, False)),
}


class UsageError(Exception):
    pass


# ---- shared helpers -----------------------------------------------------------

def _configs(args):
    if args.config is None:
        return apply_overrides(DEFAULT_CONFIG, DEFAULT_CEM, args.override, args.seed)
    return load_config(args.config, args.override, args.seed)


def _grid(args):
    lo, hi = DEFAULT_RANGES[args.parameter]
    lo = args.lo if args.lo is not None else lo
    hi = args.hi if args.hi is not None else hi
    return make_grid(args.parameter, lo, hi, args.points, args.episodes, args.spacing)


def _train_into(out, cfg, cem, checkpoint_every=None):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(dump_config(cfg, cem))
    ckdir = out / "checkpoints"

    def hook(run):
        if run.log.n_updates % checkpoint_every == 0:
            save_checkpoint(run.ensemble, ckdir / f"step{run.step:07d}.bin")

    if checkpoint_every:
        ckdir.mkdir(exist_ok=True)
    ensemble, train_log = run_training(cfg, cem, on_update=hook if checkpoint_every else None)
    save_checkpoint(ensemble, out / "checkpoint.bin")
    write_train_log(train_log, out / "train_log.csv")
    write_loss_log(train_log, out / "loss_log.csv")
    return ensemble, train_log


def _eval_into(out, ensemble, cem, grid, seed, method, jobs, spacing):
    curves = out / "curves"
    curves.mkdir(parents=True, exist_ok=True)
    curve = evaluate_sweep(ensemble, cem, grid, seed, jobs=jobs)
    write_curve_csv(curve, curves / f"{grid.parameter_name}.csv")
    report = make_report(curve, getattr(NOMINAL, grid.parameter_name))
    entry = summary_dict(method, report, [seed], spacing)
    path = out / "summary.json"
    payload = {"results": []}
    if path.exists():
        payload = json.loads(path.read_text())
    payload["results"] = [r for r in payload.get("results", [])
                          if (r["method"], r["parameter"]) != (method, grid.parameter_name)] + [entry]
    payload["results"].sort(key=lambda r: (r["parameter"], r["method"]))
    write_summary_json(payload, path)
    return report


# ---- subcommands --------------------------------------------------------------

def cmd_train(args):
    cfg, cem = _configs(args)
    _, train_log = _train_into(Path(args.out), cfg, cem, args.checkpoint_every)
    print(f"trained {cfg.max_training_steps} steps, {train_log.n_updates} model updates, "
          f"episode returns {train_log.episode_returns}")
    return 0


def _eval_ensemble(args):
    if args.baseline:
        if args.checkpoint:
            raise UsageError("give either a checkpoint or --baseline, not both")
        return make_baseline_ensemble(args.baseline, NOMINAL, args.baseline_size, args.baseline_spread)
    if not args.checkpoint:
        raise UsageError("a checkpoint path (or --baseline) is required")
    return load_checkpoint(args.checkpoint)


def cmd_eval(args):
    grid = _grid(args)
    _, cem = _configs(args)
    ensemble = _eval_ensemble(args)
    method = args.method or (args.baseline or Path(args.checkpoint).stem)
    report = _eval_into(Path(args.out), ensemble, cem, grid, args.seed or 0, method, args.jobs, args.spacing)
    print(f"{method} {grid.parameter_name}: robust-auc {report.auc:.4f}")
    return 0


def _ablation_points(study, cfg):
    knob, values = ABLATIONS[study]
    for v in values:
        if study == "temperature":
            yield knob, v, cfg.replace(tau=1.0 / v)
        elif study == "ensemble_size":
            yield knob, v, cfg.replace(ensemble_size=v)
        else:
            yield knob, v, cfg.replace(self_regularization=v)


def cmd_ablate(args):
    cfg, cem = _configs(args)
    eval_cem = apply_overrides(cfg, cem, args.eval_override)[1]
    grid = _grid(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for knob, value, point_cfg in _ablation_points(args.study, cfg):
        label = f"{knob}={str(value).lower()}"
        run_dir = out / label
        ensemble, _ = _train_into(run_dir, point_cfg, cem)
        report = _eval_into(run_dir, ensemble, eval_cem, grid, point_cfg.seed, label, args.jobs, args.spacing)
        rows.append((knob, value, report.auc))
        print(f"{label}: robust-auc {report.auc:.4f}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["knob", "value", "parameter", "auc"])
        for knob, value, auc in rows:
            w.writerow([knob, str(value).lower(), grid.parameter_name, repr(auc)])
    return 0


def cmd_export_curves(args):
    """Concatenate curves/*.csv of several run directories into one long table."""
    rows = []
    for run in args.runs:
        files = sorted((Path(run) / "curves").glob("*.csv"))
        if not files:
            raise UsageError(f"no curves found under {run}")
        for f in files:
            with open(f, newline="") as fh:
                for r in csv.DictReader(fh):
                    rows.append([Path(run).name, f.stem, r["value"], r["median"], r["q25"], r["q75"]])
    fh = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "parameter", "value", "median", "q25", "q75"])
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_inspect_checkpoint(args):
    ens = load_checkpoint(args.checkpoint)
    info = {"kind": ens.kind, "ensemble_size": ens.size,
            "n_params": int(ens.members[0].params.values.size), "sha256": ensemble_digest(ens)}
    if ens.kind == "physics":
        info["members"] = [{"pole_mass": m.pole_mass, "pole_length": m.pole_length} for m in ens.members]
        info["targets"] = [{"pole_mass": t.pole_mass, "pole_length": t.pole_length} for t in ens.targets]
        logs = np.log([[m["pole_mass"], m["pole_length"]] for m in info["targets"]])
        info["target_log_std"] = logs.std(axis=0).tolist()
    else:
        info["param_norms"] = [float(np.linalg.norm(m.params.values)) for m in ens.members]
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        for k, v in info.items():
            print(f"{k}: {v}")
    return 0


# ---- parser -------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file (defaults built in if omitted)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; planner keys take a 'cem.' prefix; repeatable")
    p.add_argument("--seed", type=int, help="overrides the seed in the config")


def _add_grid_flags(p):
    p.add_argument("--parameter", choices=PARAMETER_NAMES, default="pole_mass", help="physical parameter to sweep")
    p.add_argument("--points", type=int, default=20, help="number of grid values (>= 2)")
    p.add_argument("--episodes", type=int, default=100, help="episodes per grid value")
    p.add_argument("--spacing", choices=("log", "linear"), default="log", help="grid spacing")
    p.add_argument("--lo", type=float, help="lower end of the sweep (default: testing range)")
    p.add_argument("--hi", type=float, help="upper end of the sweep (default: testing range)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")


def build_parser():
    parser = argparse.ArgumentParser(prog="uduc", description="Train, evaluate and ablate contrastive ensemble models on cart-pole.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an ensemble online with CEM-MPC")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--checkpoint-every", type=int, default=None, metavar="K",
                   help="also save a checkpoint after every K-th model update")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perturbation sweep and Robust-AUC for one ensemble")
    p.add_argument("checkpoint", nargs="?", help="checkpoint.bin from a training run")
    p.add_argument("--baseline", choices=("single", "uniform"), help="evaluate a hand-set ensemble instead")
    p.add_argument("--baseline-size", type=int, default=9, help="members in a --baseline ensemble")
    p.add_argument("--baseline-spread", type=float, default=2.0, help="uniform baseline spans nominal/s..nominal*s")
    p.add_argument("--method", help="label used in summary.json (default: checkpoint stem)")
    p.add_argument("--out", required=True, help="output directory (curves/ and summary.json)")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train+eval over one knob: temperature, ensemble_size or self_reg")
    p.add_argument("study", choices=tuple(ABLATIONS))
    p.add_argument("--out", required=True, help="output directory, one subdirectory per point")
    p.add_argument("--eval-override", action="append", default=[], metavar="cem.KEY=VALUE",
                   help="planner override used only for evaluation; repeatable")
    _add_config_flags(p)
    _add_grid_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-curves", help="merge curves/*.csv of run directories into one CSV")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", default="-", help="output file ('-' for stdout)")
    p.set_defaults(func=cmd_export_curves)

    p = sub.add_parser("inspect-checkpoint", help="print the contents of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_inspect_checkpoint)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print("config error:\n  " + "\n  ".join(e.errors), file=sys.stderr)
        return 1
    except (CheckpointError, UsageError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
