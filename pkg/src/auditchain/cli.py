"""Command-line entry point.

Subcommands:
  sweep    latency benchmark over payload and network sizes, CSV output
  attack   scripted attack/recovery scenarios
  verify   verify a persisted ledger file
  history  query one entity's committed history from a ledger file
  serve    run the HTTP gateway over a local simulated network

Exit status is nonzero when a scenario fails, a benchmark run is non-quiescent,
or a verified chain is bad.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import (
    DEFAULT_NETWORK_SIZES,
    DEFAULT_PAYLOADS,
    SCENARIO_NAMES,
    SweepSpec,
    run_attack_scenarios,
    run_latency_sweep,
    write_csv,
)
from .codec import DateMode
from .ledger import load_ledger, query_history, verify_ledger_file
from .sim import SimConfig

_SIZE_SUFFIXES = {"KB": 1 << 10, "MB": 1 << 20, "GB": 1 << 30}


def parse_size(text: str) -> int:
    """'2MB' -> 2097152; plain integers are bytes."""
    text = text.strip().upper()
    for suffix, scale in _SIZE_SUFFIXES.items():
        if text.endswith(suffix):
            return int(float(text[: -len(suffix)]) * scale)
    return int(text)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _size_list(text: str) -> list[int]:
    return [parse_size(v) for v in text.split(",") if v]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auditchain",
        description="Replicated tamper-evident audit log: benchmarks and tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="run the latency benchmark")
    sweep.add_argument("--payloads", type=_size_list,
                       default=list(DEFAULT_PAYLOADS),
                       help="comma-separated payload sizes (bytes, or with KB/MB suffix)")
    sweep.add_argument("--nodes", type=_int_list, default=list(DEFAULT_NETWORK_SIZES),
                       help="comma-separated network sizes")
    sweep.add_argument("--trials", type=int, default=5)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--jitter", type=float, default=0.0,
                       help="multiplicative transit-time jitter fraction in [0,1)")
    sweep.add_argument("--latency-ms", type=int, default=5, help="per-link latency")
    sweep.add_argument("--bandwidth", type=int, default=2000,
                       help="link bandwidth in bytes per millisecond")
    sweep.add_argument("--block-bytes", type=parse_size, default=262_144,
                       help="block cut threshold in bytes")
    sweep.add_argument("--block-timeout-ms", type=int, default=3000,
                       help="block cut timeout")
    sweep.add_argument("--txn-bytes", type=parse_size, default=32_768,
                       help="synthetic transaction size")
    sweep.add_argument("--txn-interval-ms", type=int, default=550,
                       help="workload generation interval per transaction")
    sweep.add_argument("--deadline-ms", type=int, default=None,
                       help="flag runs that do not drain by this simulated time")
    sweep.add_argument("--out", required=True, help="output directory for CSV files")

    attack = sub.add_parser("attack", help="run attack/recovery scenarios")
    attack.add_argument("--scenario", default="all",
                        help=f"one of {', '.join(SCENARIO_NAMES)}, or 'all'")
    attack.add_argument("--seed", type=int, default=0)
    attack.add_argument("--nodes", type=int, default=4)
    attack.add_argument("--out", default=None,
                        help="optional directory for the JSON report")

    verify = sub.add_parser("verify", help="verify a persisted ledger file")
    verify.add_argument("--ledger", required=True)

    history = sub.add_parser("history", help="entity history from a ledger file")
    history.add_argument("--ledger", required=True)
    history.add_argument("--entity", required=True, help="fully qualified class name")
    history.add_argument("--id", type=int, required=True, dest="entity_id")

    serve = sub.add_parser("serve", help="serve the HTTP gateway on a simulated network")
    serve.add_argument("--nodes", type=int, default=4)
    serve.add_argument("--node", type=int, default=0, help="node the gateway binds to")
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    return parser


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = SweepSpec(
        payload_sizes=tuple(args.payloads),
        network_sizes=tuple(args.nodes),
        trials=args.trials,
        seed=args.seed,
        txn_bytes=args.txn_bytes,
        txn_interval_ms=args.txn_interval_ms,
        deadline_ms=args.deadline_ms,
    )
    template = SimConfig(
        n_nodes=1,
        link_latency_ms=args.latency_ms,
        bandwidth_bytes_per_ms=args.bandwidth,
        jitter_fraction=args.jitter,
        block_bytes_threshold=args.block_bytes,
        block_timeout_ms=args.block_timeout_ms,
    )
    result = run_latency_sweep(spec, template)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "latency.csv")
    summary_path = os.path.join(args.out, "latency_summary.csv")
    write_csv(result, data_path, summary_path)
    print(f"wrote {data_path} ({len(result.rows)} rows) and {summary_path}")
    for s in result.summaries:
        print(f"  n={s.n_nodes:<3d} payload={s.payload_bytes:>9d}B "
              f"mean={s.mean_latency_ms:.1f}ms stdev={s.stdev_latency_ms:.1f}ms"
              + ("" if s.all_quiescent else "  [NON-QUIESCENT]"))
    if not result.all_quiescent:
        print("error: one or more runs did not reach quiescence", file=sys.stderr)
        return 1
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    names = SCENARIO_NAMES if args.scenario == "all" else (args.scenario,)
    report = run_attack_scenarios(seed=args.seed, names=names, n_nodes=args.nodes)
    for r in report.results:
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'}")
        for key, value in r.details.items():
            print(f"    {key}: {value}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "scenarios.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.wire_obj(), fh, indent=2, sort_keys=True)
        print(f"wrote {path}")
    return 0 if report.all_passed else 1


def _cmd_verify(args: argparse.Namespace) -> int:
    report = verify_ledger_file(args.ledger)
    print(json.dumps(report.wire_obj(), indent=2, sort_keys=True))
    return 0 if report.ok else 1


def _cmd_history(args: argparse.Namespace) -> int:
    ledger = load_ledger(args.ledger)
    txns = query_history(ledger, args.entity, args.entity_id)
    print(json.dumps([t.wire_obj(DateMode.LEGACY) for t in txns], indent=2))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .gateway import Gateway, build_app
    from .sim import spawn_network

    network = spawn_network(SimConfig(n_nodes=args.nodes, rng_seed=args.seed,
                                      block_timeout_ms=100))
    app = build_app(Gateway(network, args.node))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "sweep": _cmd_sweep,
        "attack": _cmd_attack,
        "verify": _cmd_verify,
        "history": _cmd_history,
        "serve": _cmd_serve,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
