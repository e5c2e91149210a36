"""Command-line front end: sweep | train | analyze | robustness | complexity."""

import argparse
import json
import sys

import numpy as np

from .analysis import condition_binned_ser, posterior_metrics_report
from .bench import (
    ROBUSTNESS_COLUMNS,
    Scenario,
    build_detector,
    run_robustness,
    run_sweep,
    write_csv,
    write_json,
)
from .checkpoint import CheckpointError
from .complexity import GnnCostDims, complexity_estimate
from .constellation import make_constellation
from .system import RngStream
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_RUNTIME = 4


def _load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _add_common(parser):
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output file prefix")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--deterministic", action="store_true", default=True)
    parser.add_argument(
        "--no-deterministic", dest="deterministic", action="store_false",
        help="keep wall-clock timings in result rows",
    )


def cmd_sweep(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    scenario = Scenario.from_json(cfg)
    rows = run_sweep(scenario, workers=args.workers, deterministic=args.deterministic)
    prefix = args.out or "sweep"
    write_csv(rows, prefix + ".csv")
    write_json(rows, prefix + ".json")
    failures = [r for r in rows if r.status != "ok"]
    for row in failures:
        print(f"error: {row.detector}: {row.error}", file=sys.stderr)
    print(f"wrote {prefix}.csv ({len(rows)} rows)")
    return EXIT_MODEL if failures and len(failures) == len(rows) else EXIT_OK


def cmd_train(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg.setdefault("checkpoint_path", args.out + ".ckpt")
        cfg.setdefault("log_path", args.out + "_log.csv")
    config = TrainConfig(**cfg)
    result = train(
        config,
        progress=lambda row: print(
            f"epoch {row.epoch}: train {row.train_loss:.4f} "
            f"val {row.val_loss:.4f} lr {row.lr:.3g}",
            flush=True,
        ),
    )
    print(f"best validation loss {result.best_val_loss:.4f}")
    if result.diverged:
        print("training diverged; kept last good checkpoint", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_analyze(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    scenario = Scenario.from_json(
        {k: v for k, v in cfg.items() if k in Scenario.__dataclass_fields__}
    )
    constellation = make_constellation(scenario.qam_order)
    prefix = args.out or "analysis"
    mode = cfg.get("mode", "posterior")
    if mode == "condition":
        detector = build_detector(scenario.detectors[0], scenario)
        rows = condition_binned_ser(
            detector,
            scenario.n_tx,
            scenario.n_rx,
            constellation,
            cfg["snr_db"],
            cfg.get("n_channels", 1000),
            cfg.get("samples_per_channel", 5000),
            RngStream(scenario.seed),
            bins=cfg.get("bins", 20),
        )
        with open(prefix + "_condition.csv", "w", encoding="utf-8") as fh:
            fh.write("bin,cond_low,cond_high,cond_mean,ser,n_channels\n")
            for row in rows:
                fh.write(
                    ",".join(
                        str(row[c])
                        for c in ("bin", "cond_low", "cond_high", "cond_mean", "ser", "n_channels")
                    )
                    + "\n"
                )
        print(f"wrote {prefix}_condition.csv")
        return EXIT_OK
    metrics_rows = []
    for name in scenario.detectors:
        detector = build_detector(name, scenario)
        report = posterior_metrics_report(
            detector,
            name,
            scenario.n_tx,
            scenario.n_rx,
            constellation,
            cfg["snr_db"],
            cfg.get("instances", 2000),
            RngStream(scenario.seed),
            n_residual_instances=cfg.get("residual_instances"),
        )
        metrics_rows.append(report)
        np.savetxt(
            f"{prefix}_{name}_qq.csv",
            report.qq_quantiles.T,
            delimiter=",",
            header="theoretical,empirical",
            comments="",
        )
    with open(prefix + "_metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("detector,delta_mu,delta_sigma,r_final,c_final,ser,ser_ci95,instances\n")
        for rep in metrics_rows:
            fh.write(
                f"{rep.detector},{rep.delta_mu:.6g},{rep.delta_sigma:.6g},"
                f"{rep.r_per_iter[-1]:.6g},{rep.c_per_iter[-1]:.6g},"
                f"{rep.ser:.6g},{rep.ser_ci95:.6g},{rep.n_instances}\n"
            )
    print(f"wrote {prefix}_metrics.csv")
    return EXIT_OK


def cmd_robustness(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    checkpoints = cfg.pop("checkpoints")
    k_tests = cfg.pop("k_tests")
    scenario = Scenario.from_json(cfg)
    rows = run_robustness(
        scenario, checkpoints, k_tests, workers=args.workers, deterministic=args.deterministic
    )
    prefix = args.out or "robustness"
    write_csv(rows, prefix + ".csv", columns=ROBUSTNESS_COLUMNS)
    write_json(rows, prefix + ".json", columns=ROBUSTNESS_COLUMNS)
    print(f"wrote {prefix}.csv ({len(rows)} rows)")
    return EXIT_OK


def cmd_complexity(args):
    dims = GnnCostDims()
    if args.config:
        cfg = _load_config(args.config)
        rows = cfg["rows"]
    else:
        rows = [
            {
                "detector": args.detector,
                "n": args.n,
                "k": args.k,
                "m": args.m,
                "t": args.t,
            }
        ]
    for row in rows:
        count = complexity_estimate(
            row["detector"], row["n"], row["k"], row["m"], row.get("t", 10), dims
        )
        print(f"{row['detector']},{row['n']},{row['k']},{row['m']},{row.get('t', 10)},{count:.6g}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mimodet", description="MU-MIMO detection benchmark toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("sweep", cmd_sweep),
        ("train", cmd_train),
        ("analyze", cmd_analyze),
        ("robustness", cmd_robustness),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("complexity")
    p.add_argument("--config", default=None)
    p.add_argument("--detector", default="ep")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--t", type=int, default=10)
    p.set_defaults(fn=cmd_complexity)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
