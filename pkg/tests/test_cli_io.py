import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bmclab import ConfigurationError
from bmclab.cli import main
from bmclab.io import config_hash, csv_text, dumps, format_float, parse_config, run_command


def write_config(tmp_path, name="cfg.json", **kw):
    raw = {"model": "ex3_1", "n": 10, "replicates": 200, "seed": 1, **kw}
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    assert cfg.cap == 10**7
    assert cfg.burn_in == 5
    assert cfg.mode == "aggregated"


def test_too_few_replicates_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="replicates"):
        parse_config(write_config(tmp_path, replicates=10))


@pytest.mark.parametrize("extra, key", [({"colour": 1}, "colour"), ({"n": "ten"}, "n"), ({"n": 2.5}, "n"),
                                        ({"tolerance": True}, "tolerance"), ({"annealed": 1}, "annealed")])
def test_schema_errors_name_the_key(tmp_path, extra, key):
    with pytest.raises(ConfigurationError, match=key):
        parse_config(write_config(tmp_path, **extra))


def test_missing_and_malformed(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ConfigurationError, match="malformed"):
        parse_config(p)
    with pytest.raises(ConfigurationError, match="cannot read"):
        parse_config(tmp_path / "absent.json")
    p.write_text(json.dumps({"model": "ex3_1"}))
    with pytest.raises(ConfigurationError, match="missing"):
        parse_config(p)


def test_config_hash_is_stable():
    a = {"model": "ex3_1", "n": 10, "replicates": 200, "seed": 1}
    b = {"seed": 1, "replicates": 200, "n": 10, "model": "ex3_1"}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seed": 2})
    assert len(config_hash(a)) == 64


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_floats_round_trip_exactly(x):
    assert float(format_float(x)) == x
    assert float(json.loads(dumps({"x": x}))["x"]) == x


def test_serialization_details():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(math.nan) == "nan"
    assert json.loads(dumps({"a": [1, 2.5, None, True, math.inf], "b": {}})) == \
        {"a": [1, 2.5, None, True, None], "b": {}}
    assert csv_text(["a", "b"], [[1, 0.5], ["x", None]]) == "a,b\n1,0.5\nx,\n"


def test_run_command_writes_artifacts(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    status, manifest = run_command("verify", cfg, tmp_path / "out", "abc")
    assert status == 0
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["config_hash"] == "abc"
    assert m["verdicts"]["verify"] == {"many_to_one": "pass"}
    assert (tmp_path / "out" / "verify.csv").read_text().startswith("shift,n,x0,f,")
    run_command("doeblin", cfg, tmp_path / "out", "abc")
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(m["outputs"]) == {"verify", "doeblin"}
    assert not list((tmp_path / "out").glob(".*"))


def test_run_command_unknown(tmp_path):
    cfg = parse_config(write_config(tmp_path))
    with pytest.raises(ConfigurationError):
        run_command("plot", cfg, tmp_path)


def test_cli_verify_exits_zero(tmp_path, capsys):
    p = write_config(tmp_path)
    assert main(["verify", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_zero_tolerance_exits_nonzero(tmp_path):
    p = write_config(tmp_path, tolerance=0.0)
    assert main(["lln-forward", "--config", str(p), "--out", str(tmp_path / "o")]) != 0


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = write_config(tmp_path, replicates=10)
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "replicates" in capsys.readouterr().err


def test_cli_overrides_seed_and_mode(tmp_path):
    p = write_config(tmp_path, n=6, replicates=100)
    main(["simulate", "--config", str(p), "--out", str(tmp_path / "a"), "--seed", "5", "--mode", "explicit"])
    body = json.loads((tmp_path / "a" / "simulate.json").read_text())
    assert body["config"]["seed"] == 5
    assert body["config"]["mode"] == "explicit"


def test_cli_threads_do_not_change_csv_or_hash(tmp_path):
    p = write_config(tmp_path, n=8, replicates=100, model="ex3_3")
    for t, d in (("1", "a"), ("3", "b")):
        main(["lln-forward", "--config", str(p), "--out", str(tmp_path / d), "--threads", t])
    a, b = (tmp_path / "a" / "lln-forward.csv").read_bytes(), (tmp_path / "b" / "lln-forward.csv").read_bytes()
    assert a == b
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]


def test_cli_io_error_has_path(tmp_path, capsys):
    p = write_config(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["doeblin", "--config", str(p), "--out", str(blocker / "sub")]) == 3
    assert "file" in capsys.readouterr().err
