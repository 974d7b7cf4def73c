"""Command-line surface: parsing, bench output shape, client round trips."""

import json

import pytest

from pvran.cli import build_parser, main
from pvran.orchestrator import FakeRuntime, Orchestrator, OrchestratorService


@pytest.fixture
def service():
    svc = OrchestratorService(Orchestrator(FakeRuntime()), reqrep_port=0,
                              http_port=0)
    yield svc
    svc.close()


def _slice_config(tmp_path, **over):
    body = {
        "slice_id": 1,
        "phy_profile_name": "phy-a",
        "prbs": 25,
        "dl_freq_hz": 595_000_000,
        "ul_freq_hz": 499_000_000,
        "radio_channel": 0,
    }
    body.update(over)
    path = tmp_path / "slice.json"
    path.write_text(json.dumps(body))
    return str(path)


def test_parser_rejects_unknown_transport():
    with pytest.raises(SystemExit):
        build_parser().parse_args(
            ["bench", "latency", "--transport", "carrier-pigeon",
             "--bytes", "64", "--iters", "1000"])


def test_parser_defaults_for_compare():
    args = build_parser().parse_args(["bench", "compare"])
    assert args.msg_bytes == 30720
    assert args.iters == 10000


def test_env_overrides_reqrep_port(monkeypatch):
    monkeypatch.setenv("PVRAN_REQREP_PORT", "6001")
    args = build_parser().parse_args(["metrics"])
    assert args.port == 6001


def test_env_override_must_be_integer(monkeypatch):
    monkeypatch.setenv("PVRAN_REQREP_PORT", "fifty")
    with pytest.raises(SystemExit):
        build_parser().parse_args(["metrics"])


def test_slice_create_list_destroy_round_trip(service, tmp_path, capsys):
    cfg = _slice_config(tmp_path)
    port = str(service.reqrep_port)
    assert main(["slice", "create", "--config", cfg, "--port", port]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["state"] == "running"

    assert main(["slice", "list", "--port", port]) == 0
    listing = json.loads(capsys.readouterr().out)
    assert [d["slice_id"] for d in listing] == [1]

    assert main(["metrics", "--port", port]) == 0
    snap = json.loads(capsys.readouterr().out)
    assert snap["active_slices"] == 1

    assert main(["slice", "destroy", "1", "--port", port]) == 0
    capsys.readouterr()
    assert main(["slice", "list", "--port", port]) == 0
    assert json.loads(capsys.readouterr().out) == []


def test_slice_create_conflict_exits_nonzero(service, tmp_path, capsys):
    port = str(service.reqrep_port)
    assert main(["slice", "create", "--config", _slice_config(tmp_path),
                 "--port", port]) == 0
    capsys.readouterr()
    again = _slice_config(tmp_path, slice_id=2, radio_channel=1)
    assert main(["slice", "create", "--config", again, "--port", port]) == 1
    out = json.loads(capsys.readouterr().out)
    assert "conflict" in out["error"]


def test_slice_create_bad_config_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["slice", "create", "--config", str(bad), "--port", "1"]) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_client_reports_unreachable_service(capsys):
    # Port 1 is never bound in the sandbox.
    assert main(["metrics", "--host", "127.0.0.1", "--port", "1"]) == 1
    assert "cannot reach" in capsys.readouterr().err


def test_bench_latency_too_few_iters_fails(capsys):
    assert main(["bench", "latency", "--transport", "shm",
                 "--bytes", "64", "--iters", "10"]) == 1
    assert "benchmark failed" in capsys.readouterr().err


@pytest.mark.slow
def test_bench_latency_prints_record_and_summary(capsys, tmp_path):
    report = tmp_path / "lat.txt"
    rc = main(["bench", "latency", "--transport", "shm", "--bytes", "512",
               "--iters", "1000", "--report", str(report)])
    assert rc == 0
    out = capsys.readouterr().out
    rec = json.loads(out.splitlines()[0])
    assert rec["kind"] == "latency"
    assert rec["transport"] == "shm_vchan"
    assert rec["stats"]["mean_us"] > 0
    assert "us mean" in out
    lines = report.read_text().splitlines()
    assert json.loads(lines[0])["kind"] == "report"
    assert json.loads(lines[1]) == rec


@pytest.mark.slow
def test_bench_stream_fast_clock(capsys):
    rc = main(["bench", "stream", "--prbs", "25", "--seconds", "0.2",
               "--fast-clock"])
    assert rc == 0
    rec = json.loads(capsys.readouterr().out.splitlines()[0])
    assert rec["kind"] == "sustained"
    assert rec["subframes"] == 200
