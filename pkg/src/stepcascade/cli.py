"""Operator entry point.

Subcommands wrap the library into reproducible runs: ``simulate`` rolls
the small policy over a task suite and writes trace files, ``run``
executes a cascade or baseline and emits a report, ``label`` builds
detector datasets, ``eval-detectors`` scores them, ``sweep`` walks a
threshold grid, and ``report`` merges saved run reports.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .controller import EpisodeRecord, parse_record
from .harness import baseline_factories, run_suite
from .labeling import (
    LabelKind,
    OracleTeacher,
    consensus_label_episode,
    export_dataset,
    load_dataset,
    run_teacher,
)
from .metrics import (
    cascade_stats,
    failure_signatures,
    render_report_table,
    report_rows_to_csv,
    sweep_frontier,
)
from .monitors import evaluate_detector
from .synthenv import StepTruth

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _write_manifest(out: Path, command: str, config: RunConfig, seed: int, extra: Optional[dict] = None) -> None:
    manifest = {
        "command": command,
        "config_digest": config.digest(),
        "seed": seed,
        "output_dir": str(out),
        "tool_version": __version__,
    }
    if extra:
        manifest.update(extra)
    out.joinpath("manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        merged = dict(config.raw)
        merged["seed"] = args.seed
        from .config import config_from_dict

        config = config_from_dict(merged)
    return config


def _prepare_out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_records(records: Sequence[EpisodeRecord], out: Path) -> list[str]:
    episodes_dir = out / "episodes"
    episodes_dir.mkdir(exist_ok=True)
    digests = []
    for record in records:
        blob = record.serialize()
        path = episodes_dir / f"{record.episode.task.task_id}.jsonl"
        path.write_text(blob, encoding="utf-8")
        digests.append(hashlib.sha256(blob.encode("utf-8")).hexdigest())
    return digests


def _read_records(path: Path) -> list[EpisodeRecord]:
    episodes_dir = path / "episodes" if (path / "episodes").is_dir() else path
    records = []
    for file in sorted(episodes_dir.glob("*.jsonl")):
        records.append(parse_record(file.read_text(encoding="utf-8")))
    if not records:
        raise FileNotFoundError(f"no episode records under {path}")
    return records


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    out = _prepare_out(args.out)
    manifest = config.build_suite()
    manifest.save(out / "suite.json")
    records = run_suite(
        manifest, config.cascade,
        run_mode="small-only",
        prices=config.prices,
        config_digest=config.digest(),
        jobs=args.jobs,
        **baseline_factories("small-only"),
    )
    digests = _write_records(records, out)
    _write_manifest(out, "simulate", config, config.seed, {"episodes": len(records)})
    sig = failure_signatures([r.episode for r in records])
    print(sig.render())
    print(f"wrote {len(records)} traces to {out / 'episodes'}", file=sys.stderr)
    print(f"suite digest: {hashlib.sha256(''.join(digests).encode()).hexdigest()[:16]}", file=sys.stderr)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    cascade = config.cascade
    run_mode = args.mode
    if args.periodic_k is not None:
        run_mode = "periodic"
        cascade = replace(cascade, periodic_k=args.periodic_k)
    if args.theta_s is not None:
        cascade = replace(cascade, theta_s=args.theta_s)
    if args.theta_m is not None:
        cascade = replace(cascade, theta_m=args.theta_m)

    out = _prepare_out(args.out)
    manifest = config.build_suite()
    manifest.save(out / "suite.json")
    factories: dict[str, Any] = {}
    if run_mode in ("small-only", "large-only"):
        factories = baseline_factories(run_mode)
    elif run_mode == "periodic":
        # the fixed-interval baseline runs no monitors, only the verifier
        factories = {"stuck_factory": None, "milestone_factory": None}
    records = run_suite(
        manifest, cascade,
        run_mode=run_mode,
        prices=config.prices,
        config_digest=config.digest(),
        jobs=args.jobs,
        **factories,
    )
    aborted = sum(1 for r in records if r.abort_reason)
    _write_records(records, out)
    report = cascade_stats(records, config.prices)
    row = report.to_row()
    row["mode"] = run_mode
    out.joinpath("report.json").write_text(json.dumps(row, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    out.joinpath("report.csv").write_text(report_rows_to_csv([row]), encoding="utf-8")
    _write_manifest(out, "run", config, config.seed, {"mode": run_mode, "episodes": len(records)})
    small_name = "sim-small" if run_mode != "large-only" else ""
    large_name = "sim-large" if run_mode != "small-only" else ""
    print(render_report_table([(small_name, large_name, report)]))
    if aborted > 0.10 * len(records):
        print(f"{aborted}/{len(records)} episodes aborted", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


def cmd_label(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    out = _prepare_out(args.out)
    records = _read_records(Path(args.traces))
    teacher_runs = args.runs
    samples = {LabelKind.STUCK: [], LabelKind.MILESTONE: []}
    for record in records:
        if not record.truth:
            print(f"trace {record.episode.task.task_id} carries no ground truth; skipping", file=sys.stderr)
            continue
        teacher = OracleTeacher(record.truth, noise=args.noise, seed=config.seed)
        results = run_teacher(teacher, record.episode, runs=teacher_runs)
        for kind in (LabelKind.STUCK, LabelKind.MILESTONE):
            samples[kind].extend(consensus_label_episode(record.episode, results, kind))
    summaries = {}
    for kind, kept in samples.items():
        if not kept:
            print(f"no {kind.value} samples survived consensus", file=sys.stderr)
            return RUNTIME_ERROR
        summary = export_dataset(kept, out, split=args.split, seed=config.seed, prefix=kind.value)
        summaries[kind.value] = {
            "train": str(summary.train_path), "eval": str(summary.eval_path),
            "train_counts": summary.train_counts, "eval_counts": summary.eval_counts,
            "warnings": list(summary.warnings),
        }
        print(f"{kind.value}: train={summary.train_counts} eval={summary.eval_counts}")
    _write_manifest(out, "label", config, config.seed, {"datasets": summaries, "teacher_runs": teacher_runs})
    return 0


def cmd_eval_detectors(args: argparse.Namespace) -> int:
    records = load_dataset(args.dataset)
    if not records:
        print("empty dataset", file=sys.stderr)
        return USAGE_ERROR
    labels = [bool(r["label"]) for r in records]
    if args.scores:
        scores = [float(s) for s in json.loads(Path(args.scores).read_text(encoding="utf-8"))]
        if len(scores) != len(records):
            print("scores file length does not match the dataset", file=sys.stderr)
            return USAGE_ERROR
    elif args.scorer == "oracle":
        if not args.traces:
            print("--scorer oracle needs --traces for ground truth", file=sys.stderr)
            return USAGE_ERROR
        truth_index: dict[str, dict[int, StepTruth]] = {}
        for rec in _read_records(Path(args.traces)):
            truth_index[rec.episode.task.task_id] = rec.truth
        flag = "in_stuck_region" if records[0]["kind"] == "stuck" else "completes_milestone"
        scores = []
        for r in records:
            prov = r["provenance"]
            truth = truth_index.get(prov["trajectory_id"], {}).get(prov["step_index"])
            scores.append(1.0 if truth and getattr(truth, flag) else 0.0)
    else:
        # repetition heuristic over the stored window
        from .monitors import heuristic_stuck_score
        from .trace import Action, Window, WindowEntry

        scores = []
        for r in records:
            entries = tuple(WindowEntry(e["rationale"], Action.from_dict(e["action"])) for e in r["entries"])
            scores.append(heuristic_stuck_score(Window(entries=entries, end_index=len(entries))))
    metrics = evaluate_detector(scores, labels, threshold=args.threshold)
    print(json.dumps({
        "accuracy": round(metrics.accuracy, 4), "precision": round(metrics.precision, 4),
        "recall": round(metrics.recall, 4), "f1": round(metrics.f1, 4),
        "confusion": {"tp": metrics.confusion[0], "fp": metrics.confusion[1],
                      "tn": metrics.confusion[2], "fn": metrics.confusion[3]},
        "threshold": args.threshold,
    }, indent=2))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    out = _prepare_out(args.out)
    manifest = config.build_suite()
    thetas_s = [float(x) for x in args.theta_s.split(",")]
    thetas_m = [float(x) for x in args.theta_m.split(",")]
    grid = [(ts, tm) for ts in thetas_s for tm in thetas_m]

    def runner(theta_s: float, theta_m: float):
        cascade = replace(config.cascade, theta_s=theta_s, theta_m=theta_m)
        return run_suite(manifest, cascade, run_mode="cascade", prices=config.prices,
                         config_digest=config.digest(), jobs=args.jobs)

    points = sweep_frontier(grid, runner, config.prices)
    csv_text = report_rows_to_csv([p.to_row() for p in points])
    out.joinpath("frontier.csv").write_text(csv_text, encoding="utf-8")
    _write_manifest(out, "sweep", config, config.seed, {"grid_points": len(points)})
    print(csv_text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = []
    for run_dir in args.runs:
        path = Path(run_dir) / "report.json"
        if not path.exists():
            print(f"missing report: {path}", file=sys.stderr)
            return USAGE_ERROR
        rows.append(json.loads(path.read_text(encoding="utf-8")))
    print(report_rows_to_csv(rows))
    if args.out:
        out = _prepare_out(args.out)
        out.joinpath("combined.csv").write_text(report_rows_to_csv(rows), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepcascade", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", help="run-config JSON (defaults merged underneath)")
        p.add_argument("--seed", type=int, help="override the config root seed")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel episodes")

    p = sub.add_parser("simulate", help="roll the small policy over the task suite")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run a cascade or baseline over the suite")
    common(p)
    p.add_argument("--mode", choices=["cascade", "small-only", "large-only"], default="cascade")
    p.add_argument("--periodic-k", type=int, help="fixed-interval verification baseline")
    p.add_argument("--theta-s", type=float, help="stuck threshold override")
    p.add_argument("--theta-m", type=float, help="milestone threshold override")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("label", help="teacher-label traces into detector datasets")
    common(p)
    p.add_argument("--traces", required=True, help="directory of episode traces")
    p.add_argument("--runs", type=int, default=5, help="independent teacher runs")
    p.add_argument("--noise", type=float, default=0.0, help="oracle teacher label noise")
    p.add_argument("--split", type=float, default=0.8, help="train fraction")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval-detectors", help="score a labeled dataset")
    p.add_argument("--dataset", required=True, help="dataset JSONL file")
    p.add_argument("--scorer", choices=["heuristic", "oracle"], default="heuristic")
    p.add_argument("--traces", help="trace directory for the oracle scorer")
    p.add_argument("--scores", help="JSON array of externally computed scores")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval_detectors)

    p = sub.add_parser("sweep", help="threshold-grid frontier sweep")
    common(p)
    p.add_argument("--theta-s", default="0.3,0.5,0.7", help="comma list")
    p.add_argument("--theta-m", default="0.3,0.5,0.7", help="comma list")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="merge saved run reports")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--out", help="optional output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - top-level CLI guard
        print(f"runtime failure: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
