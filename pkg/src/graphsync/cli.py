"""Command line interface.

Subcommands: gen, simulate, sweep, thresholds, recursion, verify.
Common flags: --config PATH, --seed U64, --trials N, --jobs N, --out PATH,
--force.  GRAPHSYNC_JOBS sets the default worker count.
"""

from __future__ import annotations

import argparse
import sys

from . import harness


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="YAML config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--trials", type=int, default=None)
    sub.add_argument("--jobs", type=int, default=None)
    sub.add_argument("--out", default=None)
    sub.add_argument("--force", action="store_true")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphsync")
    subs = parser.add_subparsers(dest="kind", required=True)
    for kind in ("gen", "simulate", "sweep", "thresholds", "recursion", "verify"):
        sub = subs.add_parser(kind)
        _add_common(sub)
        if kind == "gen":
            sub.add_argument("--family", default=None,
                             choices=["torus", "box", "cycle", "random_regular", "tree", "ary_tree"])
            sub.add_argument("--d", type=int, default=None)
            sub.add_argument("--L", type=int, default=None)
            sub.add_argument("--n", type=int, default=None)
            sub.add_argument("--k", type=int, default=None)
            sub.add_argument("--depth", type=int, default=None)
        if kind in ("simulate", "sweep"):
            sub.add_argument("--metric", default=None,
                             choices=["risk", "overlap", "tv", "second_moment"])
            sub.add_argument("--q", type=int, default=None)
            sub.add_argument("--p", type=float, default=None)
            sub.add_argument("--eps", type=float, default=None)
            sub.add_argument("--kernel", default=None, help="custom kernel file")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    over: dict = {"kind": args.kind}
    for key in ("seed", "trials", "jobs", "out"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "force", False):
        over["force"] = True
    graph = {}
    for key in ("family", "d", "L", "n", "k", "depth"):
        val = getattr(args, key, None)
        if val is not None:
            graph[key] = val
    if graph:
        over["graph"] = graph
    model = {}
    for key in ("q", "p", "eps"):
        val = getattr(args, key, None)
        if val is not None:
            model[key] = val
    if getattr(args, "kernel", None):
        model["kernel_path"] = args.kernel
    if model:
        over["model"] = model
    if getattr(args, "metric", None):
        over["metric"] = args.metric
    return over


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = harness.resolve_config(_overrides(args), path=args.config)
        result = harness.run(cfg)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if result.out_path:
        print(f"wrote {result.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
