"""Command line entry point: ``objrt node|bench|p2p``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ObjrtError
from .node import FailureMode, NodeConfig, parse_target


def _node(args) -> int:
    from .apps.daemon import load_manifest, run_daemon

    exposures = load_manifest(args.manifest)  # fail before binding
    config = NodeConfig(
        host=args.host,
        port=args.port,
        failure_mode=FailureMode(args.failure_mode),
        browse_details=args.browse_details,
        policy_file=args.policy,
    )

    def ready(runtime):
        print(f"serving {len(exposures)} exposure(s) at {runtime.url}", flush=True)

    run_daemon(config, exposures, ready)
    return 0


def _bench(args) -> int:
    from .apps.bench import BenchSpec, run_bench

    target = parse_target(args.target) if args.target else None
    report = run_bench(BenchSpec(args.mode, args.batches, args.calls, target))
    print("\n".join(report.lines()))
    return 0


def _p2p(args) -> int:
    from .apps import p2p

    if args.mode == "single-process":
        trace = p2p.run_single_process(args.seed)
    else:
        run = p2p.run_two_node(args.seed)
        trace = run.trace
        print(f"# getKey on {run.remote_nodes} remote proxies: {run.getkey_transport_calls} transport calls",
              file=sys.stderr)
    print("\n".join(trace))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objrt", description="Policy-aware distributed object runtime.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    n = sub.add_parser("node", help="run a node serving the objects in a manifest")
    n.add_argument("--host", default="127.0.0.1")
    n.add_argument("--port", type=int, default=0, help="0 picks a free port")
    n.add_argument("--manifest", required=True, help="JSON exposure manifest")
    n.add_argument("--policy", help="transmission policy XML file loaded at boot")
    n.add_argument("--failure-mode", choices=[m.value for m in FailureMode], default=FailureMode.PROPAGATE.value)
    n.add_argument("--browse-details", action="store_true", help="show object fields in the service browser")
    n.set_defaults(func=_node)

    b = sub.add_parser("bench", help="time remote calls")
    b.add_argument("--mode", choices=["noarg", "tenargs", "policy"], required=True)
    b.add_argument("--target", help="HOST:PORT of a node serving 'Bench'; omitted runs a server in-process")
    b.add_argument("--batches", type=int, default=100)
    b.add_argument("--calls", type=int, default=4000, help="calls per batch")
    b.set_defaults(func=_bench)

    p = sub.add_parser("p2p", help="run the routing demo and print its trace")
    p.add_argument("--mode", choices=["two-node", "single-process"], required=True)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=_p2p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ObjrtError, ValueError, OSError) as e:
        print(f"objrt: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
