import json
import subprocess
import sys
from pathlib import Path

import pytest

from relaycap.cli import main, run
from relaycap.config import config_hash, load_config, parse_config
from relaycap.errors import ConfigError

from conftest import load_golden

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

BASE = """schema = "v1"
[model]
kernel = {kernel}
time_law = {time_law}
relays = {relays}
[run]
{run}
"""


def _write(tmp_path, name="c.toml", kernel='{ family = "flat" }', time_law='{ family = "independent-uniform-pair" }',
           relays='{ layout = "grid", r = 1.0 }', run='mode = "simulate"\nlambda = 20\nreps = 3\nseed = 5'):
    p = tmp_path / name
    p.write_text(BASE.format(kernel=kernel, time_law=time_law, relays=relays, run=run))
    return p


def _files(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def _manifest(d: Path) -> dict:
    return json.loads((d / "manifest.json").read_text())


def test_simulate_smoke(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", str(CONFIGS / "simulate.toml"), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert [n for n in names if n.startswith("frustration_")] == [f"frustration_{i:04d}.csv" for i in range(10)]
    assert {"manifest.json", "summary.json", "replications.csv"} <= set(names)
    man = _manifest(out)
    assert man["exit_code"] == 0 and len(man["replication_seeds"]) == 10
    assert man["config_hash"] == config_hash(load_config(CONFIGS / "simulate.toml").raw)
    for key in ("versions", "wall_time_s", "created_utc", "seed"):
        assert key in man


def test_fluid_golden_in_summary(tmp_path):
    out = tmp_path / "fluid"
    assert run(CONFIGS / "fluid_no_departure.toml", out=str(out)) == 0
    s = json.loads((out / "summary.json").read_text())
    g = load_golden("no_departure_beta")
    assert s["beta_final"] == pytest.approx(g["beta_final"], abs=1e-12)
    assert s["gamma_mass"] == pytest.approx(g["gamma_mass"], abs=1e-12)
    assert (out / "beta.csv").read_text().startswith("time,beta\n")


def test_invariant_suite_exit(tmp_path):
    p = _write(tmp_path, run='mode = "invariant-suite"\ncases = 2\nseed = 1\nchecks = ["tv_metric", "query_additivity"]')
    assert run(p, out=str(tmp_path / "inv")) == 0
    s = json.loads((tmp_path / "inv" / "summary.json").read_text())
    assert s["all_passed"] and s["checks"] == 2


@pytest.mark.parametrize("body,needle", [
    ('schema = "v2"\n[model]\n[run]\nmode = "fluid"\n', "schema"),
    ('schema = "v1"\n[model]\n[run]\nmode = "fluid"\nbogus = 1\n', "bogus"),
    ('schema = "v1"\n[model]\n[run]\nmode = "teleport"\n', "run.mode"),
    ('schema = "v1"\n[model]\n[run]\nmode = "ldp-slope"\n', "lambda_ladder"),
    ('schema = "v1"\n[model]\nkernel = { family = "gaussian", sigma = 0.1 }\n[run]\nmode = "simulate"\n'
     'simulator = "marked"\n', "marked"),
    ('not toml at all [[[', "cannot parse"),
])
def test_config_errors(tmp_path, capsys, body, needle):
    p = tmp_path / "bad.toml"
    p.write_text(body)
    assert run(p, out=str(tmp_path / "o")) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("relaycap: error=config exit=1 reason=")
    assert needle in json.loads(err[0].split("reason=", 1)[1])


def test_missing_config(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "nope.toml")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_model_violation_exit(tmp_path, capsys):
    p = _write(tmp_path, kernel='{ family = "tabulated", points = [[0.5]], values = [0.0] }',
               relays='{ layout = "explicit", positions = [[0.5]] }')
    out = tmp_path / "mv"
    assert run(p, out=str(out)) == 2
    assert "error=model-violation exit=2" in capsys.readouterr().err
    assert _manifest(out)["status"] == "model-violation"


def test_convergence_exit(tmp_path, capsys):
    p = _write(tmp_path, time_law='{ family = "exit-at-horizon" }',
               run='mode = "fluid"\ntol = 1e-7\nsubsteps = 2\nn_s = 1\nmax_halvings = 3')
    assert run(p, out=str(tmp_path / "cv")) == 3
    assert "error=convergence exit=3" in capsys.readouterr().err


def test_hash_tracks_config(tmp_path):
    a = load_config(_write(tmp_path, "a.toml"))
    b = load_config(_write(tmp_path, "b.toml"))
    c = load_config(_write(tmp_path, "c.toml", run='mode = "simulate"\nlambda = 21\nreps = 3\nseed = 5'))
    assert config_hash(a.raw) == config_hash(b.raw) != config_hash(c.raw)
    j = tmp_path / "a.json"
    j.write_text(json.dumps(a.raw))
    assert config_hash(load_config(j).raw) == config_hash(a.raw)


def test_seed_override(tmp_path):
    p = _write(tmp_path)
    run(p, out=str(tmp_path / "s5"))
    run(p, out=str(tmp_path / "s6"), seed_override=6)
    m5, m6 = _manifest(tmp_path / "s5"), _manifest(tmp_path / "s6")
    assert m5["seed"] == 5 and m6["seed"] == 6 and m5["config_hash"] != m6["config_hash"]
    assert m5["replication_seeds"] != m6["replication_seeds"]


def test_workers_do_not_change_bytes(tmp_path):
    p = _write(tmp_path)
    run(p, out=str(tmp_path / "w1"))
    run(p, workers=2, out=str(tmp_path / "w2"))
    a, b = _files(tmp_path / "w1"), _files(tmp_path / "w2")
    assert a.keys() == b.keys()
    for name in a:
        if name != "manifest.json":
            assert a[name] == b[name], name
    ma, mb = _manifest(tmp_path / "w1"), _manifest(tmp_path / "w2")
    for k in ("wall_time_s", "created_utc", "workers"):
        ma.pop(k), mb.pop(k)
    assert ma == mb


def test_parse_config_rejects_non_table():
    with pytest.raises(ConfigError):
        parse_config([1, 2])


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "relaycap.cli", "--config", str(_write(tmp_path)),
                        "--out", str(tmp_path / "sub")], capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "sub" / "summary.json").exists()
