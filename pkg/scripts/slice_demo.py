#!/usr/bin/env python3
"""Two-slice control-plane walkthrough against a live in-process service.

Starts the orchestration service on ephemeral ports, creates two slices
with disjoint bands over the wire protocol, polls metrics while the data
planes stream, retunes one slice, then tears everything down. Every
request goes through the real TCP request-reply socket, so this doubles
as a protocol smoke test.

    python3 scripts/slice_demo.py --seconds 10
"""

import argparse
import sys
import time

from pvran.orchestrator import OrchestratorService, Orchestrator, StackRuntime, request

SLICES = [
    {"slice_id": 1, "phy_profile_name": "phy-a", "prbs": 25,
     "dl_freq_hz": 595_000_000, "ul_freq_hz": 499_000_000, "radio_channel": 0,
     "payload_len": 24, "interval_subframes": 8},
    {"slice_id": 2, "phy_profile_name": "phy-b", "prbs": 25,
     "dl_freq_hz": 580_000_000, "ul_freq_hz": 484_000_000, "radio_channel": 1,
     "payload_len": 24, "interval_subframes": 8},
]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=10.0,
                    help="streaming window before teardown (default 10)")
    args = ap.parse_args(argv)

    service = OrchestratorService(Orchestrator(StackRuntime()),
                                  reqrep_port=0, http_port=0)
    host, port = "127.0.0.1", service.reqrep_port
    print(f"service up: reqrep :{port}, http :{service.http_port} "
          f"(console feed at /api/events)")
    try:
        for body in SLICES:
            status, reply = request(host, port, "create", body)
            print(f"create slice {body['slice_id']}: {status} "
                  f"state={reply.get('state') if status == 'ok' else reply}")
            if status != "ok":
                return 1

        deadline = time.monotonic() + args.seconds
        while time.monotonic() < deadline:
            time.sleep(min(2.0, max(0.1, deadline - time.monotonic())))
            _, snap = request(host, port, "metrics")
            for sid, entry in sorted(snap["slices"].items()):
                ep = entry["endpoint"]
                print(f"  slice {sid}: {entry['goodput_bps']:.0f} bps, "
                      f"frames ok {ep['frames_ok']} foreign {ep['frames_foreign']}")

        status, reply = request(host, port, "set_band", {
            "slice_id": 2, "dl_freq_hz": 570_000_000, "ul_freq_hz": 474_000_000})
        print(f"retune slice 2 to 570/474 MHz: {status}")

        for body in SLICES:
            status, reply = request(host, port, "destroy",
                                    {"slice_id": body["slice_id"]})
            backend = reply["counters"]["backend"] if status == "ok" else {}
            print(f"destroy slice {body['slice_id']}: {status} "
                  f"final tx_iterations={backend.get('tx_iterations')}")
    finally:
        service.close()
    print("clean shutdown")
    return 0


if __name__ == "__main__":
    sys.exit(main())
