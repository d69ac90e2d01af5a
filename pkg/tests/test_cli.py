import json
import subprocess
import sys

import pytest

from cachescope.cli import EXIT_ERROR, EXIT_MISMATCH, EXIT_OK, main
from cachescope.config import ConfigError, RunConfig, env_overrides, parse_config_text, resolve

DENSE = ["--load-period", "40", "--store-period", "40"]


# -- configuration ------------------------------------------------------------------------

def test_defaults():
    cfg = resolve({}, env={})
    assert cfg == RunConfig()
    p = cfg.profile()
    assert p.sampler.load_period == 20_000 and p.window == 1000
    assert p.thresholds.window_ratio == 0.005 and p.breakpoint.expiry_events == 100_000


def test_precedence_flag_env_file_default(tmp_path):
    f = tmp_path / "c.conf"
    f.write_text("# comment\nwindow = 500\nload_period=111\nseed=4\n")
    env = {"CACHESCOPE_LOAD_PERIOD": "222", "CACHESCOPE_SEED": "5"}
    cfg = resolve({"seed": 6}, f, env)
    assert (cfg.window, cfg.load_period, cfg.seed) == (500, 222, 6)
    assert cfg.store_period == 50_000


def test_config_file_from_environment(tmp_path):
    f = tmp_path / "c.conf"
    f.write_text("window=300\n")
    assert resolve({}, None, {"CACHESCOPE_CONFIG": str(f)}).window == 300


@pytest.mark.parametrize("text, msg", [
    ("window\n", "expected key=value"),
    ("bogus=1\n", "unknown setting"),
    ("window=lots\n", "bad value"),
])
def test_bad_config_text(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config_text(text)


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        resolve({"format": "xml"}, env={})
    with pytest.raises(ConfigError):
        resolve({"line_set_miss_floor": "2"}, env={})
    with pytest.raises(ConfigError):
        resolve({"sets": "100"}, env={})


def test_env_ignores_foreign_names():
    assert env_overrides({"CACHESCOPE_WINDOW": "9", "HOME": "/", "CACHESCOPE_NOPE": "1"}) == {"window": 9}


# -- commands ----------------------------------------------------------------------------------

def run(argv, capsys):
    rc = main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.fixture
def fs_trace(tmp_path):
    p = tmp_path / "fs.trace"
    assert main(["gen", "--kind", "false-sharing", "--iterations", "6000", "--seed", "2",
                 "-o", str(p)]) == EXIT_OK
    return p


def test_gen_is_reproducible(tmp_path, fs_trace):
    again = tmp_path / "again.trace"
    main(["gen", "--kind", "false-sharing", "--iterations", "6000", "--seed", "2", "-o", str(again)])
    assert fs_trace.read_bytes() == again.read_bytes()
    assert "# GT miss_type=AppFalseSharing" in fs_trace.read_text()


def test_gen_rejects_unrealizable(capsys):
    rc, _, err = run(["gen", "--kind", "conflict-stride", "--lines", "8", "--iterations", "1"], capsys)
    assert rc == EXIT_ERROR and "associativity" in err


def test_profile_text_and_structured(tmp_path, fs_trace, capsys):
    rc, out, _ = run(["profile", str(fs_trace), *DENSE], capsys)
    assert rc == EXIT_OK and "AppFalseSharing" in out
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    for p in (p1, p2):
        assert main(["profile", str(fs_trace), *DENSE, "--format", "structured", "-o", str(p)]) == 0
    assert p1.read_bytes() == p2.read_bytes()
    doc = json.loads(p1.read_text())
    assert doc["kind"] == "profile" and doc["issues"][0]["miss_type"] == "AppFalseSharing"


def test_compare_match_and_mismatch(tmp_path, fs_trace, capsys):
    prof = tmp_path / "p.json"
    orac = tmp_path / "o.json"
    main(["profile", str(fs_trace), *DENSE, "--format", "structured", "-o", str(prof)])
    main(["oracle", str(fs_trace), "--format", "structured", "-o", str(orac)])
    rc, out, _ = run(["compare", str(prof), "--oracle", str(orac), "--trace", str(fs_trace)], capsys)
    assert rc == EXIT_OK and "match" in out

    doc = json.loads(prof.read_text())
    for issue in doc["issues"]:
        issue["miss_type"] = "TrueSharing"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    rc, out, _ = run(["compare", str(bad)], capsys)
    assert rc == EXIT_MISMATCH and "mislabeled" in out

    doc["issues"] = []
    bad.write_text(json.dumps(doc))
    rc, out, _ = run(["compare", str(bad), "--format", "structured"], capsys)
    assert rc == EXIT_MISMATCH and json.loads(out)["reason"] == "missed issue"


def test_compare_trace_id_mismatch(tmp_path, fs_trace, capsys):
    other = tmp_path / "cs.trace"
    main(["gen", "--kind", "conflict-stride", "--iterations", "2", "-o", str(other)])
    prof = tmp_path / "p.json"
    main(["profile", str(fs_trace), *DENSE, "--format", "structured", "-o", str(prof)])
    rc, _, err = run(["compare", str(prof), "--trace", str(other)], capsys)
    assert rc == EXIT_ERROR and "trace id mismatch" in err
    orac = tmp_path / "o.json"
    main(["oracle", str(other), "--format", "structured", "-o", str(orac)])
    rc, _, err = run(["compare", str(prof), "--oracle", str(orac)], capsys)
    assert rc == EXIT_ERROR and "trace id mismatch" in err


def test_oracle_text(fs_trace, capsys):
    rc, out, _ = run(["oracle", str(fs_trace)], capsys)
    assert rc == EXIT_OK and "Coherence" in out


def test_missing_and_malformed_input(tmp_path, capsys):
    rc, _, err = run(["profile", str(tmp_path / "nope.trace")], capsys)
    assert rc == EXIT_ERROR and "cannot read" in err
    bad = tmp_path / "bad.trace"
    bad.write_text("CFG line_size=64 sets=128 assoc=8 cores=16\nA 1 0 zz 0x10 L\n")
    rc, _, err = run(["profile", str(bad)], capsys)
    assert rc == EXIT_ERROR and "line 2: malformed" in err
    rc, _, err = run(["compare", str(bad)], capsys)
    assert rc == EXIT_ERROR


def test_set_override_and_bad_set(fs_trace, capsys):
    rc, out, _ = run(["profile", str(fs_trace), "--set", "load_period=40", "--set",
                      "store_period=40", "--set", "global_load_gate=1", "--set",
                      "global_store_gate=1"], capsys)
    assert rc == EXIT_OK and "no significant issues" in out
    rc, _, err = run(["profile", str(fs_trace), "--set", "window"], capsys)
    assert rc == EXIT_ERROR and "KEY=VALUE" in err


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cachescope", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "profile" in r.stdout
