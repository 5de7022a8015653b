"""Command-line driver: run / sweep / coverage / bench.

Exit codes: 0 success, 2 config validation failure, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError
from .harness import (
    CSV_COLUMNS,
    SWEEP_AXES,
    ExperimentConfig,
    config_from_dict,
    coverage_report,
    default_experiment_config,
    run_experiment,
    sweep,
)
from .plots import render_heatmap, render_line_chart


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _load_config(args) -> ExperimentConfig:
    if args.config:
        data = json.loads(Path(args.config).read_text())
        cfg = config_from_dict(data)
    else:
        cfg = default_experiment_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg


def _report_rows(report) -> list[dict]:
    from .harness import report_csv_row  # single source for the column layout

    return [report_csv_row("", "", report)]


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(cfg)
    if args.format == "json":
        _write_json(out / "report.json", report.to_json_dict())
    else:
        _write_csv(out / "report.csv", _report_rows(report), CSV_COLUMNS)
    print(f"accuracy={report.accuracy:.4f} coverage={report.any_trial_coverage:.4f}")
    return 0


_PLOT_FILES = {
    "alpha_grid": "speedup_heatmap.svg",
    "m_values": "m_scaling.svg",
    "k_values": "topk_sweep.svg",
}


def _emit_sweep_plots(axis: str, rows: list[dict], out: Path) -> None:
    name = _PLOT_FILES.get(axis)
    if name is None:
        return
    ok = [r for r in rows if not r["error"]]
    if axis == "alpha_grid":
        a1s = sorted({float(r["point"].split(",")[0]) for r in ok})
        a2s = sorted({float(r["point"].split(",")[1]) for r in ok})
        lookup = {
            (float(r["point"].split(",")[0]), float(r["point"].split(",")[1])): float(
                r["theoretical_speedup"]
            )
            for r in ok
        }
        grid = [[lookup.get((a1, a2)) for a2 in a2s] for a1 in a1s]
        render_heatmap(
            out / name,
            [f"{a:g}" for a in a2s],
            [f"{a:g}" for a in a1s],
            grid,
            title="theoretical speedup",
            x_label="ratio of trial 2",
            y_label="ratio of trial 1",
        )
    else:
        xs = [float(r["point"].split("=")[1]) for r in ok]
        acc = [float(r["accuracy"]) for r in ok]
        label = "trials" if axis == "m_values" else "top-k"
        render_line_chart(
            out / name,
            xs,
            {"accuracy": acc},
            title=f"accuracy vs {label}",
            x_label=label,
            y_label="accuracy",
        )


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep(args.axis, cfg)
    _write_csv(out / f"sweep_{args.axis}.csv", rows, CSV_COLUMNS)
    if args.format == "json":
        _write_json(out / f"sweep_{args.axis}.json", rows)
    if args.plots == "on":
        _emit_sweep_plots(args.axis, rows, out)
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} points, {failed} failed -> {out / f'sweep_{args.axis}.csv'}")
    return 0


def _cmd_coverage(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = coverage_report(
        cfg.sampler.total_frames,
        cfg.sampler.frames_per_trial,
        cfg.sampler.trials,
        args.draws,
        seed=cfg.seed,
    )
    if args.format == "json":
        _write_json(out / "coverage.json", rep.to_json_dict())
    else:
        d = rep.to_json_dict()
        _write_csv(out / "coverage.csv", [{k: str(v) for k, v in d.items()}], list(d))
    print(
        f"empirical={rep.empirical:.4f} closed_form={rep.closed_form:.4f} "
        f"z={rep.z_score:+.2f}"
    )
    return 0


def _cmd_bench(args) -> int:
    cfg = replace(
        _load_config(args),
        timing=True,
        backend="seeded_transformer",
        repeats=1,
        timing_repeats=args.repeats,
    )
    cfg.validate()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(cfg)
    cost = report.cost
    _write_json(out / "cost_report.json", cost.to_json_dict())
    if args.format == "csv":
        _write_csv(out / "cost_report.csv", _report_rows(report), CSV_COLUMNS)
    print(
        f"theoretical={cost.theoretical_speedup:.3f}x "
        f"measured={cost.measured_speedup:.3f}x "
        f"(tau1={cost.tau1 * 1e3:.1f}ms tau2={cost.tau2 * 1e3:.1f}ms, "
        f"fallback_serial={cost.fallback_serial})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="t3s",
        description="Multi-trial temporal sampling experiments at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--plots", choices=("on", "off"), default="off")

    p_run = sub.add_parser("run", help="one experiment (accuracy + cost report)")
    common(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid of experiments along one axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_cov = sub.add_parser("coverage", help="Monte-Carlo vs closed-form coverage")
    common(p_cov)
    p_cov.add_argument("--draws", type=int, default=10000)
    p_cov.set_defaults(fn=_cmd_coverage)

    p_bench = sub.add_parser("bench", help="first-token latency measurement")
    common(p_bench)
    p_bench.add_argument("--repeats", type=int, default=5, help="timing repeats")
    p_bench.set_defaults(fn=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
