"""Train and serve commands."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .probe import probe_files
from .train import TrainConfig, train_detector


def cmd_train(args: argparse.Namespace) -> int:
    overrides = json.loads(args.overrides) if args.overrides else {}
    cfg = TrainConfig(**overrides)
    if args.probe_first:
        probe = probe_files(args.train, args.eval, args.kind)
        print(f"probe F1 {probe.f1:.4f} (acc {probe.accuracy:.4f})")
    artifact, metrics = train_detector(args.kind, args.train, args.eval, args.out, cfg)
    print(f"saved {artifact}")
    print(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    artifacts = {}
    if args.stuck:
        artifacts["stuck"] = Path(args.stuck)
    if args.milestone:
        artifacts["milestone"] = Path(args.milestone)
    if not artifacts:
        print("nothing to serve: pass --stuck and/or --milestone", file=sys.stderr)
        return 2
    uvicorn.run(create_app(artifacts), host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monitor-service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit one detector on exported datasets")
    p.add_argument("--kind", choices=["stuck", "milestone"], required=True)
    p.add_argument("--train", required=True, help="train JSONL")
    p.add_argument("--eval", required=True, help="eval JSONL")
    p.add_argument("--out", required=True, help="artifact root directory")
    p.add_argument("--overrides", help="TrainConfig overrides as JSON")
    p.add_argument("--probe-first", action="store_true",
                   help="report the bag-of-tokens probe F1 before training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="serve trained detectors over HTTP")
    p.add_argument("--stuck", help="stuck artifact directory")
    p.add_argument("--milestone", help="milestone artifact directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8601)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI guard
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
