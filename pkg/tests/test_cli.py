import subprocess
import sys

from railmac import cli
from railmac.backoff_queue import ProtocolViolation
from railmac.config import dump_config
from railmac.presets import fig8_config

from test_config import MINIMAL


def _write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_validate_ok_and_invalid(tmp_path, capsys):
    assert cli.main(["validate", _write(tmp_path, MINIMAL)]) == 0
    bad = _write(tmp_path, MINIMAL.replace("count = 2", "count = -1"), "bad.toml")
    assert cli.main(["validate", bad]) == 2
    assert "nodes.0.count" in capsys.readouterr().err


def test_run_prints_csv(tmp_path, capsys):
    assert cli.main(["run", _write(tmp_path, MINIMAL), "--seed", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "scheme,scenario,group,samples,mean_delay_us,p95_delay_us,dropped"
    assert out[-1].startswith("dcf,scenario,all,")


def test_run_writes_outputs(tmp_path):
    cfg = fig8_config("backoff_queue", "1:1:1", horizon_us=2_000_000, warmup_us=500_000)
    path = _write(tmp_path, dump_config(cfg))
    out = tmp_path / "out"
    assert cli.main(["run", path, "--trace", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["fig8_1-1-1_seed1.csv", "fig8_1-1-1_seed1.trace.tsv"]


def test_invariant_violation_exit_code(tmp_path, monkeypatch, capsys):
    def broken(config, protocol_trace=None):
        raise ProtocolViolation("duplicate positions", "A:2,B:2")

    monkeypatch.setattr(cli, "run_scenario", broken)
    assert cli.main(["run", _write(tmp_path, MINIMAL)]) == 3
    assert "A:2,B:2" in capsys.readouterr().err


def test_missing_config_is_a_validation_error(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.toml")]) == 2


def test_walkthrough_preset(tmp_path, capsys):
    assert cli.main(["preset", "fig7_walkthrough", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.count("match") == 3
    assert (tmp_path / "fig7c.trace.tsv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "railmac.cli", "validate", _write(tmp_path, "scheme = 1")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert "error:" in proc.stderr
