"""Command-line entry point: ``nbge <subcommand> ...``.

Failures exit nonzero and print ``{"error": ..., "type": ..., ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bondgraph import DSLError, load_dsl, validate
from .bondmatrix import build_bond_matrix
from .dcmotor import ExcitationSpec, build_dataset, simulate, write_csv, write_manifest
from .dualgraph import compile_dual_graph, parse_mapping
from .experiment import (ExperimentConfig, format_table, forecast_traces, make_dataset, run_experiment,
                         write_results)
from .training import Forecaster, Scenario, evaluate

log = logging.getLogger("nbge")


class CLIError(Exception):
    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1))


# --------------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    report = validate(load_dsl(args.dsl))
    _print_json(report.to_dict())
    if not report.ok:
        raise CLIError("bond graph is invalid", rules=sorted(report.rules()))
    return 0


def cmd_matrix(args) -> int:
    bm = build_bond_matrix(load_dsl(args.dsl))
    print(bm.dumps() if args.format == "json" else bm)
    return 0


def cmd_compile(args) -> int:
    g = load_dsl(args.dsl)
    dual = compile_dual_graph(build_bond_matrix(g), parse_mapping(args.map or []))
    text = dual.dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths, recs = [], []
    import numpy as np

    for k, s in enumerate(np.random.SeedSequence(args.seed).spawn(args.recordings)):
        rec = simulate(None, ExcitationSpec(), args.fs, args.duration, np.random.default_rng(s))
        p = out / f"dcmotor_{k:02d}.csv"
        write_csv(rec, p)
        paths.append(str(p))
        recs.append(rec)
    result = {"recordings": paths}
    if args.windows:
        ds = build_dataset(recs, args.window, args.windows, args.seed)
        write_manifest(ds, out / "manifest.json", paths)
        result["manifest"] = str(out / "manifest.json")
    _print_json(result)
    return 0


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for key in ("runs", "keep", "epochs", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if getattr(args, "csv", None):
        cfg.csv = list(args.csv)
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    scenario = Scenario.parse(args.scenario, cfg.window)
    res, best = run_experiment(cfg, scenario, args.model, args.informed, with_sdtw=not args.no_sdtw)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{res.name}_{scenario.name}".replace("+", "_")
    write_results(res, out / f"{tag}.json", cfg)
    best.save(out / f"{tag}.npz", extra={"config": cfg.to_dict(), "scenario": scenario.name})
    _print_json({**res.summary(), "results": str(out / f"{tag}.json"), "checkpoint": str(out / f"{tag}.npz")})
    return 0


def _load_checkpoint(path):
    model, extra = Forecaster.load(path)
    cfg = ExperimentConfig.from_dict(extra["config"])
    return model, cfg, Scenario.parse(extra["scenario"], cfg.window)


def cmd_evaluate(args) -> int:
    model, cfg, scenario = _load_checkpoint(args.checkpoint)
    if args.csv:
        cfg.csv = list(args.csv)
    rep = evaluate(model, make_dataset(cfg), scenario, args.split, with_sdtw=not args.no_sdtw)
    _print_json({"checkpoint": str(args.checkpoint), "scenario": scenario.name, "split": args.split,
                 **rep.to_dict()})
    return 0


def cmd_report(args) -> int:
    summaries = []
    for p in args.results:
        data = json.loads(Path(p).read_text())
        if "summary" not in data:
            raise CLIError(f"{p} is not a results file", path=str(p))
        summaries.append(data["summary"])
    text = format_table(summaries, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    model, cfg, scenario = _load_checkpoint(args.checkpoint)
    ds = make_dataset(cfg)
    x, y, pred = forecast_traces(model, ds, scenario, args.index)
    t_in = np.arange(scenario.n_in) / ds.fs
    t_out = (scenario.n_in + np.arange(scenario.k_out)) / ds.fs
    fig, axes = plt.subplots(len(ds.names), 1, figsize=(8, 2.5 * len(ds.names)), sharex=True, squeeze=False)
    for c, ax in enumerate(axes[:, 0]):
        ax.plot(t_in, x[c], color="k", lw=1, label="input")
        ax.plot(t_out, y[c], color="tab:blue", lw=1, label="target")
        ax.plot(t_out, pred[c], color="tab:orange", lw=1, label="prediction")
        ax.set_ylabel(ds.names[c])
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)
    _print_json({"plot": str(args.out)})
    return 0


# ----------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nbge", description="Bond-graph tooling and informed forecasting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a bond-graph DSL file")
    s.add_argument("dsl")
    s.set_defaults(func=cmd_validate)

    for name in ("matrix", "bondmatrix"):
        s = sub.add_parser(name, help="print the bond matrix")
        if name == "bondmatrix":
            s.add_argument("action", choices=["dump"])
        s.add_argument("dsl")
        s.add_argument("--format", choices=["table", "json"], default="json" if name == "bondmatrix" else "table")
        s.set_defaults(func=cmd_matrix)

    s = sub.add_parser("compile", help="compile the dual graph as JSON")
    s.add_argument("dsl")
    s.add_argument("--map", nargs="*", metavar="chK=eN")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate-dcmotor", help="simulate DC-motor recordings to CSV")
    s.add_argument("--fs", type=float, default=100.0)
    s.add_argument("--duration", type=float, default=660.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--recordings", type=int, default=1)
    s.add_argument("--windows", type=int, default=0, help="also write a manifest with this many windows")
    s.add_argument("--window", type=int, default=600)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="run the multi-seed training protocol")
    s.add_argument("--scenario", default="100-500")
    s.add_argument("--model", choices=["linear", "mlp"], default="linear")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--informed", dest="informed", action="store_true", default=True)
    g.add_argument("--raw", dest="informed", action="store_false")
    s.add_argument("--config")
    s.add_argument("--csv", nargs="*", help="recordings to use instead of the simulator")
    s.add_argument("--runs", type=int)
    s.add_argument("--keep", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-sdtw", action="store_true")
    s.add_argument("--out-dir", default="runs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="metrics of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--csv", nargs="*")
    s.add_argument("--no-sdtw", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="tabulate results files")
    s.add_argument("results", nargs="+")
    s.add_argument("--format", choices=["csv", "json", "md"], default="md")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("plot", help="input/target/prediction traces as SVG")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", default="forecast.svg")
    s.add_argument("--index", type=int, default=0)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        err = {"error": str(exc), "type": "CLIError", **exc.details}
    except DSLError as exc:
        err = {"error": str(exc), "type": type(exc).__name__,
               "line": getattr(exc, "line", None), "column": getattr(exc, "column", None)}
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        err = {"error": str(exc), "type": type(exc).__name__}
    sys.stderr.write(json.dumps(err) + "\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())
