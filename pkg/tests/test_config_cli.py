import csv
import io
import json
import pathlib
import shutil
import subprocess
import sys

import pytest

import oracles
from quicknat import cli
from quicknat.config import ConfigDocument, format_config, parse_config
from quicknat.datapath import Verdict
from quicknat.errors import ConfigError
from quicknat.packet import KEEP, five_tuple, ip_to_int, parse
from quicknat.pcap import read_pcap
from quicknat.pool import PoolConfig
from quicknat.rules import FROM_POOL, WILDCARD, NatType

DATA = pathlib.Path(__file__).parent / "data"


# --- parse_config ---------------------------------------------------------

def test_pool_rule_line():
    doc = parse_config("snat 192.168.88.0/24 * -> 203.0.113.7 pool\n")
    (r,) = doc.rules
    assert (r.nat_type, r.prefix_len, r.match_port, r.rewrite_port) == \
        (NatType.SNAT, 24, WILDCARD, FROM_POOL)
    assert r.match_ip == ip_to_int("192.168.88.0")
    assert doc.effective_pool() == PoolConfig((ip_to_int("203.0.113.7"),))


def test_empty_file_gives_defaults():
    doc = parse_config("")
    assert doc == ConfigDocument()
    assert doc.effective_pool() is None


def test_full_document():
    doc = parse_config("""
        # gateway
        snat 10.0.0.0/8 * -> 203.0.113.1 pool
        dnat 203.0.113.1/32 8080 -> 10.0.0.5 80
        dnat 203.0.113.1/32 443 -> 10.0.0.6 *   # keep port
        pool 203.0.113.1,203.0.113.2 ports 20000-29999
        policy miss drop
        policy fragment drop
        timeout tcp 120
        timeout udp 15.5
        workers 4
    """)
    assert len(doc.rules) == 3 and doc.rules[2].rewrite_port is KEEP
    assert doc.pool.port_range == (20000, 29999) and len(doc.pool.public_ips) == 2
    assert doc.miss_verdict is Verdict.DROP and doc.fragment_verdict is Verdict.DROP
    assert (doc.tcp_idle, doc.udp_idle, doc.workers) == (120.0, 15.5, 4)


def test_invalid_prefix_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("# header\nsnat 192.168.88.0/33 * -> 203.0.113.7 pool\n")
    assert exc.value.errors == [(2, "invalid prefix '192.168.88.0/33'")]


def test_all_errors_collected():
    text = "\n".join([
        "snat 192.168.88.0/24 * -> 203.0.113.7 pool",
        "snat 192.168.88.0/24 * -> 203.0.113.9 pool",  # duplicate
        "dnat 1.2.3.4/32 99999 -> 10.0.0.1 80",        # bad port
        "frobnicate",                                  # unknown
        "snat 10.0.0.0/8 *",                           # syntax
        "dnat 1.2.3.4/32 80 -> 10.0.0.1 pool",         # pool only for snat
        "snat 300.1.1.1/8 * -> 1.1.1.1 pool",          # bad address
    ])
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    lines = [line for line, _ in exc.value.errors]
    assert lines == [2, 3, 4, 5, 6, 7]
    assert "duplicate rule" in exc.value.errors[0][1]


def test_pool_target_must_be_declared():
    with pytest.raises(ConfigError) as exc:
        parse_config("snat 10.0.0.0/8 * -> 1.1.1.1 pool\npool 2.2.2.2 ports 1024-2047\n")
    assert exc.value.errors[0][0] == 1


def test_round_trip():
    doc = parse_config(
        "snat 10.0.0.0/8 22 -> 203.0.113.1 40000\n"
        "snat 10.1.0.0/16 * -> 203.0.113.1 pool\n"
        "dnat 203.0.113.1/32 80 -> 10.0.0.5 *\n"
        "pool 203.0.113.1 ports 1024-4095\npolicy miss drop\ntimeout udp 0.25\nworkers 3\n")
    again = parse_config(format_config(doc))
    assert again == doc
    assert format_config(again) == format_config(doc)


# --- natctl ---------------------------------------------------------------

def natctl(*args):
    return subprocess.run([sys.executable, "-m", "quicknat", *map(str, args)],
                          capture_output=True, text=True, timeout=120)


def test_run_golden_fixture(tmp_path):
    out = tmp_path / "out.pcap"
    stats = tmp_path / "stats.json"
    res = natctl("run", "--config", DATA / "nat.conf", "--in-private", DATA / "private.pcap",
                 "--in-public", DATA / "public.pcap", "--out", out, "--workers", 1,
                 "--pool-seed", 7, "--stats-json", stats)
    assert res.returncode == 0, res.stderr
    assert out.read_bytes() == (DATA / "golden_out.pcap").read_bytes()
    report = json.loads(stats.read_text())
    assert report["pipeline"]["packets_out"] == 12
    assert report["pipeline"]["rule_lookups"] == 1
    assert "packets_in" in res.stdout


def test_golden_output_cross_checked():
    with read_pcap(DATA / "private.pcap") as r:
        private = [x.data for x in r]
    with read_pcap(DATA / "golden_out.pcap") as r:
        golden = [x.data for x in r]
    assert len(golden) == 12
    assert all(oracles.checksums_valid(p) for p in golden)
    client = five_tuple(parse(private[0]))
    public = five_tuple(parse(golden[0]))
    for p in golden:
        t = five_tuple(parse(p))
        assert t in (public, client.reversed())
    assert sum(five_tuple(parse(p)) == client.reversed() for p in golden) == 5


def test_missing_config_exits_1(tmp_path):
    res = natctl("run", "--config", tmp_path / "nope.conf", "--in-private", DATA / "private.pcap")
    assert res.returncode == 1
    assert res.stderr.startswith("natctl: error[config]:")


def test_bad_config_lists_every_error(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("snat 1.2.3.0/40 * -> 1.1.1.1 pool\nbogus\n")
    res = natctl("run", "--config", conf, "--in-private", DATA / "private.pcap")
    assert res.returncode == 1
    lines = res.stderr.strip().splitlines()
    assert [l.split(":")[-2] for l in lines] == ["1", "2"]
    assert all(l.startswith("natctl: error[config]:") for l in lines)


def test_missing_input_exits_2(tmp_path):
    res = natctl("run", "--config", DATA / "nat.conf", "--in-private", tmp_path / "missing.pcap")
    assert res.returncode == 2
    assert res.stderr.startswith("natctl: error[io]:")


def test_corrupt_input_exits_2(tmp_path):
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"not a pcap at all")
    res = natctl("run", "--config", DATA / "nat.conf", "--in-private", bad)
    assert res.returncode == 2


def test_unwritable_output_exits_2(tmp_path):
    res = natctl("run", "--config", DATA / "nat.conf", "--in-private", DATA / "private.pcap",
                 "--out", tmp_path / "no" / "such" / "dir.pcap")
    assert res.returncode == 2


def test_usage_error_prefix():
    res = natctl("run")
    assert res.returncode == 1
    assert "natctl: error[usage]:" in res.stderr


def test_no_inputs_is_usage_error():
    assert cli.main(["run", "--config", str(DATA / "nat.conf")]) == 1


def test_bench_ten_rows(capsys):
    assert cli.main(["bench", "--rules", "100,1000,3000,5000,10000", "--seed", "7",
                     "--queries", "100", "--warmup", "0"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 10 and {r["seed"] for r in rows} == {"7"}


def test_bench_single_algorithm(capsys, tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["bench", "--algorithms", "qns", "--queries", "100", "--warmup", "0",
                     "--json", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())
    assert len(rows) == 5 and {r["algorithm"] for r in rows} == {"qns"}


def test_bench_short_protocol(capsys):
    assert cli.main(["bench", "--rules", "100", "--algorithms", "qns", "--short",
                     "--warmup", "0"]) == 0
    (row,) = csv.DictReader(io.StringIO(capsys.readouterr().out))
    assert row["lookups"] == "100"


def test_bench_unwritable_report_exits_2(tmp_path):
    assert cli.main(["bench", "--rules", "100", "--algorithms", "qns", "--queries", "100",
                     "--warmup", "0", "--out", str(tmp_path / "x" / "y.csv")]) == 2


def test_gen_then_run(tmp_path, capsys):
    trace = tmp_path / "trace.pcap"
    assert cli.main(["gen", "--flows", "20", "--packets-per-flow", "3", "--seed", "1",
                     "--private", "192.168.88.0/24", "--out", str(trace)]) == 0
    with read_pcap(trace) as r:
        assert sum(1 for _ in r) == 60
    shutil.copy(DATA / "nat.conf", tmp_path / "nat.conf")
    out = tmp_path / "out.pcap"
    assert cli.main(["run", "--config", str(tmp_path / "nat.conf"), "--in-private", str(trace),
                     "--out", str(out), "--workers", "2"]) == 0
    with read_pcap(out) as r:
        translated = [five_tuple(parse(x.data)) for x in r]
    assert len(translated) == 60
    assert {t.src_ip for t in translated} == {ip_to_int("203.0.113.7")}
