#!/usr/bin/env python3
"""Transport latency study: shm channel vs pub-sub socket across sizes.

Measures one-way latency for both transports at several message sizes,
repeats the paired comparison at the 25 PRB subframe size, and derives
the slice-count capacity bound each transport supports at subframe
cadence. Optionally appends every record to a JSON-lines report.

    python3 scripts/transport_study.py --iters 10000 --runs 5 \
        --report reports/transport.jsonl
"""

import argparse
import sys

from pvran import bench
from pvran.iqcore import BandwidthProfile, bytes_per_subframe


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=10000,
                    help="messages per measurement (default 10000)")
    ap.add_argument("--runs", type=int, default=5,
                    help="repeated comparisons at subframe size (default 5)")
    ap.add_argument("--sizes", default="64,4096,30720,61440",
                    help="comma-separated message sizes in bytes")
    ap.add_argument("--report", help="append JSON-lines records to this path")
    args = ap.parse_args(argv)

    sizes = [int(s) for s in args.sizes.split(",") if s]
    records = []

    print(f"{'bytes':>8} {'shm mean':>10} {'shm p50':>9} "
          f"{'pubsub mean':>12} {'pubsub p50':>11} {'ratio':>6}")
    at_subframe = {}
    for size in sizes:
        result = bench.compare_transports(size, args.iters)
        records.append(result.to_dict())
        if size in (30720, 61440):
            at_subframe[size] = result
        print(f"{size:>8} {result.shm.mean_us:>9.1f}u {result.shm.median_us:>8.1f}u "
              f"{result.pubsub.mean_us:>11.1f}u {result.pubsub.median_us:>10.1f}u "
              f"{result.ratio:>6.2f}")

    print(f"\nrepeated comparison at 30720 bytes, {args.runs} runs:")
    ratios = []
    for i in range(args.runs):
        result = bench.compare_transports(30720, args.iters)
        records.append(result.to_dict())
        ratios.append(result.ratio)
        print(f"  run {i + 1}: shm {result.shm.mean_us:.1f}us "
              f"pubsub {result.pubsub.mean_us:.1f}us ratio {result.ratio:.2f}")
    ordered = sum(1 for r in ratios if r > 1.0)
    print(f"  shm faster in {ordered}/{args.runs} runs, "
          f"ratio min {min(ratios):.2f} mean {sum(ratios) / len(ratios):.2f}")

    # Capacity bound: how many slices fit one subframe period per transport.
    for prbs in (25, 50):
        profile = BandwidthProfile.from_prbs(prbs)
        size = bytes_per_subframe(profile)
        result = at_subframe.get(size) or bench.compare_transports(size, args.iters)
        cap = bench.capacity_report(profile, {"shm": result.shm,
                                              "pubsub": result.pubsub})
        records.append(cap)
        print(f"\n{prbs} PRB ({size} B/subframe): "
              f"max slices shm {cap['max_slices_shm']}, "
              f"pubsub {cap['max_slices_pubsub']}")

    if args.report:
        bench.emit_report(records, args.report)
        print(f"\nwrote {len(records)} records to {args.report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
