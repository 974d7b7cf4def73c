"""Command-line front door: serve the control plane, drive slices, benchmark.

Subcommands mirror the two operator workflows. `serve` runs the
orchestrator with the full data plane until interrupted; `slice ...` and
`metrics` are thin request-reply clients against a running service; the
`bench ...` family runs the transport and pipeline measurements and prints
every record to stdout, optionally also writing the line-delimited report
file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import bench
from .iqcore import BandwidthProfile, bytes_per_subframe
from .orchestrator import (
    DEFAULT_HTTP_PORT,
    DEFAULT_REQREP_PORT,
    request,
    serve,
)

_TRANSPORT_NAMES = {"shm": bench.SHM, "pubsub": bench.PUBSUB}


def _env_port(name: str, fallback: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{name} must be an integer, got {raw!r}")


def _emit(records: list[dict], report_path: str | None) -> None:
    for rec in records:
        print(json.dumps(rec, sort_keys=True))
    print(bench.format_summary(records))
    if report_path:
        bench.emit_report(records, report_path)
        print(f"report written to {report_path}")


def _client_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--host", default="127.0.0.1", help="orchestrator host")
    p.add_argument("--port", type=int,
                   default=_env_port("PVRAN_REQREP_PORT", DEFAULT_REQREP_PORT),
                   help="request-reply port (env PVRAN_REQREP_PORT)")


def _report_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--report", metavar="PATH", default=None,
                   help="also write the line-delimited report file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvran",
        description="Paravirtualized slice radio front-end: control plane and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the orchestrator and data plane")
    p_serve.add_argument("--bind", default="127.0.0.1")
    p_serve.add_argument("--reqrep-port", type=int,
                         default=_env_port("PVRAN_REQREP_PORT", DEFAULT_REQREP_PORT))
    p_serve.add_argument("--http-port", type=int,
                         default=_env_port("PVRAN_HTTP_PORT", DEFAULT_HTTP_PORT))
    p_serve.add_argument("--fast-clock", action="store_true",
                         help="no wall pacing (functional demos, not timing)")

    p_slice = sub.add_parser("slice", help="slice lifecycle against a running service")
    slice_sub = p_slice.add_subparsers(dest="slice_command", required=True)
    p_create = slice_sub.add_parser("create", help="create a slice from a JSON config")
    p_create.add_argument("--config", required=True, metavar="FILE",
                          help="JSON object with the create fields")
    _client_args(p_create)
    p_destroy = slice_sub.add_parser("destroy", help="stop and remove a slice")
    p_destroy.add_argument("slice_id", type=int)
    _client_args(p_destroy)
    p_list = slice_sub.add_parser("list", help="list slice descriptors")
    _client_args(p_list)

    p_metrics = sub.add_parser("metrics", help="metrics snapshot from a running service")
    _client_args(p_metrics)

    p_bench = sub.add_parser("bench", help="transport and pipeline measurements")
    bench_sub = p_bench.add_subparsers(dest="bench_command", required=True)

    p_lat = bench_sub.add_parser("latency", help="one transport, one size")
    p_lat.add_argument("--transport", choices=sorted(_TRANSPORT_NAMES), required=True)
    p_lat.add_argument("--bytes", type=int, required=True, dest="msg_bytes")
    p_lat.add_argument("--iters", type=int, required=True)
    _report_arg(p_lat)

    p_cmp = bench_sub.add_parser("compare", help="shared memory vs pub-sub")
    p_cmp.add_argument("--bytes", type=int, default=30720, dest="msg_bytes")
    p_cmp.add_argument("--iters", type=int, default=10000)
    _report_arg(p_cmp)

    p_cap = bench_sub.add_parser("capacity", help="slices-per-core bound at one profile")
    p_cap.add_argument("--prbs", type=int, choices=(25, 50, 100), required=True)
    p_cap.add_argument("--iters", type=int, default=5000)
    _report_arg(p_cap)

    p_stream = bench_sub.add_parser("stream", help="sustained full-pipeline run")
    p_stream.add_argument("--prbs", type=int, choices=(25, 50, 100), required=True)
    p_stream.add_argument("--seconds", type=float, required=True)
    p_stream.add_argument("--fast-clock", action="store_true")
    _report_arg(p_stream)

    return parser


# ---------------------------------------------------------------------------
# Command bodies
# ---------------------------------------------------------------------------

def _cmd_serve(args) -> int:
    from .orchestrator import StackRuntime

    runtime = StackRuntime(fast_clock=args.fast_clock)
    svc = serve(bind_addr=args.bind, reqrep_port=args.reqrep_port,
                http_port=args.http_port, runtime=runtime)
    print(f"request-reply on {svc.bind_addr}:{svc.reqrep_port}, "
          f"http on {svc.bind_addr}:{svc.http_port}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        svc.close()
    return 0


def _rpc(args, verb: str, body: dict | None = None) -> int:
    try:
        status, reply = request(args.host, args.port, verb, body)
    except OSError as e:
        print(f"cannot reach the orchestrator at {args.host}:{args.port}: {e}",
              file=sys.stderr)
        return 1
    print(json.dumps(reply, sort_keys=True, indent=2))
    return 0 if status == "ok" else 1


def _cmd_slice_create(args) -> int:
    try:
        with open(args.config) as fh:
            body = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(f"cannot read config {args.config}: {e}", file=sys.stderr)
        return 1
    if not isinstance(body, dict):
        print(f"config {args.config} must hold a JSON object", file=sys.stderr)
        return 1
    return _rpc(args, "create", body)


def _cmd_bench_latency(args) -> int:
    kind = _TRANSPORT_NAMES[args.transport]
    stats = bench.latency_oneway(kind, args.msg_bytes, args.iters)
    _emit([bench.latency_record(kind, args.msg_bytes, args.iters, stats)],
          args.report)
    return 0


def _cmd_bench_compare(args) -> int:
    result = bench.compare_transports(args.msg_bytes, args.iters)
    _emit([result.to_dict()], args.report)
    return 0


def _cmd_bench_capacity(args) -> int:
    profile = BandwidthProfile.from_prbs(args.prbs)
    size = bytes_per_subframe(profile)
    measured = {kind: bench.latency_oneway(kind, size, args.iters)
                for kind in bench.TRANSPORTS}
    _emit([bench.capacity_report(profile, measured)], args.report)
    return 0


def _cmd_bench_stream(args) -> int:
    out = bench.sustained_stream_test(prbs=args.prbs, duration_s=args.seconds,
                                      fast_clock=args.fast_clock)
    _emit([out], args.report)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "slice":
            if args.slice_command == "create":
                return _cmd_slice_create(args)
            if args.slice_command == "destroy":
                return _rpc(args, "destroy", {"slice_id": args.slice_id})
            return _rpc(args, "list")
        if args.command == "metrics":
            return _rpc(args, "metrics")
        if args.bench_command == "latency":
            return _cmd_bench_latency(args)
        if args.bench_command == "compare":
            return _cmd_bench_compare(args)
        if args.bench_command == "capacity":
            return _cmd_bench_capacity(args)
        return _cmd_bench_stream(args)
    except bench.BenchError as e:
        print(f"benchmark failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
