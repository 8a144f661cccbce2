import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tsvfsim import __version__, cli
from tsvfsim.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"

# Small parameters so every scenario runs in about a second.
SMALL = {
    "abl_demo": {"trials": 500, "instances": 10},
    "stern_gerlach": {"trials": 200},
    "decision_tree": {"seeds": 10, "decisions": [4, 16]},
    "bidirectional": {"seeds": 4, "qubit_max": 6},
    "be_correlation": {"events": 2000},
    "absorber_gedanken": {"events": 2000},
    "pilotwave_hbt": {"trials": 2000},
    "correspondence_average": {"trials": 2000, "points": 8},
    "coexisting_paths": {},
}


def toml_text(d: dict) -> str:
    lines, out = [], d.get("output")
    for k, v in d.items():
        if k == "output":
            continue
        lines.append(f"{k} = {json.dumps(v)}")
    if out:
        lines.append("[output]")
        lines += [f"{k} = {json.dumps(v)}" for k, v in out.items()]
    return "\n".join(lines) + "\n"


def write_config(tmp_path, d, name="c.toml"):
    p = tmp_path / name
    p.write_text(toml_text(d))
    return p


def statistical_files(out: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "run_record.json"}


class TestRegistry:
    def test_nine_scenarios(self):
        assert len(cli.list_scenarios()) == 9
        assert [s["name"] for s in cli.list_scenarios()] == list(SMALL)

    def test_sections(self):
        for s in cli.list_scenarios():
            assert s["section"] and s["description"]
        assert any("Stern-Gerlach" in s["section"] for s in cli.list_scenarios())

    def test_list_json(self, capsys):
        assert cli.main(["list", "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert isinstance(data, list) and len(data) == 9

    def test_list_human(self, capsys):
        assert cli.main(["list"]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 9

    def test_version(self, capsys):
        assert cli.main(["version"]) == 0
        assert capsys.readouterr().out.strip() == __version__


class TestConfig:
    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="radius_fm_typo"):
            cli.parse_config({"scenario": "be_correlation", "radius_fm_typo": 5.0})

    def test_unknown_output_key(self):
        with pytest.raises(ConfigError, match="output.colour"):
            cli.parse_config({"scenario": "be_correlation", "output": {"colour": "red"}})

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError, match="nope"):
            cli.parse_config({"scenario": "nope"})

    def test_missing_scenario(self):
        with pytest.raises(ConfigError):
            cli.parse_config({"seed": 1})

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="events"):
            cli.parse_config({"scenario": "be_correlation", "events": "many"})
        with pytest.raises(ConfigError, match="seed"):
            cli.parse_config({"scenario": "be_correlation", "seed": 1.5})

    def test_bad_format(self):
        with pytest.raises(ConfigError):
            cli.parse_config({"scenario": "be_correlation", "output": {"format": "xml"}})

    def test_defaults_and_int_to_float(self):
        cfg = cli.parse_config({"scenario": "be_correlation", "radius": 4})
        assert cfg.params["radius"] == 4.0 and isinstance(cfg.params["radius"], float)
        assert cfg.params["events"] == 100000 and cfg.seed == 0

    def test_precedence(self, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, "/env/out")
        base = {"scenario": "coexisting_paths", "seed": 3}
        assert cli.parse_config(base).output_path == "/env/out"
        with_file = dict(base, output={"path": "file/out"})
        assert cli.parse_config(with_file).output_path == "file/out"
        cfg = cli.parse_config(with_file, {"path": "flag/out", "seed": 9, "format": "json"})
        assert (cfg.output_path, cfg.seed, cfg.output_format) == ("flag/out", 9, "json")

    def test_round_trip(self, tmp_path):
        cfg = cli.parse_config({"scenario": "coexisting_paths", "seed": 4, "output": {"path": str(tmp_path)}})
        rec = cli.run(cfg)
        assert cli.parse_config(rec.to_dict()["config"]) == cfg
        on_disk = json.loads((tmp_path / "run_record.json").read_text())
        assert cli.parse_config(on_disk["config"]) == cfg

    @pytest.mark.parametrize("name", list(SMALL))
    def test_round_trip_every_scenario(self, name):
        cfg = cli.parse_config({"scenario": name, **SMALL[name]})
        again = cli.parse_config(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg


class TestRun:
    @pytest.mark.parametrize("name", list(SMALL))
    def test_deterministic(self, tmp_path, name):
        outs = []
        for k, workers in enumerate((1, 2)):
            out = tmp_path / f"o{k}"
            cfg = cli.parse_config({"scenario": name, "seed": 5, "workers": workers, **SMALL[name],
                                    "output": {"path": str(out)}})
            cli.run(cfg)
            outs.append(statistical_files(out))
        assert outs[0] == outs[1]
        assert "summary.json" in outs[0] and len(outs[0]) >= 2

    def test_run_record(self, tmp_path):
        cfg = cli.parse_config({"scenario": "coexisting_paths", "output": {"path": str(tmp_path)}})
        cli.run(cfg)
        rec = json.loads((tmp_path / "run_record.json").read_text())
        assert rec["version"] == __version__ and rec["schema_version"] == cli.SCHEMA_VERSION
        assert rec["wall_time_s"] >= 0 and rec["timestamp"]
        assert rec["summary"]["scenario"] == "coexisting_paths"

    def test_json_format(self, tmp_path):
        cfg = cli.parse_config({"scenario": "coexisting_paths", "output": {"path": str(tmp_path), "format": "json"}})
        cli.run(cfg)
        rows = json.loads((tmp_path / "fringes.json").read_text())
        assert set(rows[0]) == {"witness_overlap", "phase", "detection"}

    def test_golden_be_correlation(self, tmp_path):
        cfg = cli.parse_config({"scenario": "be_correlation", "seed": 1, "events": 10000,
                                "output": {"path": str(tmp_path)}})
        cli.run(cfg)
        got = json.loads((tmp_path / "summary.json").read_text())
        want = json.loads((GOLDEN / "be_correlation_seed1_1e4.json").read_text())
        assert set(got) == set(want)
        # Backends sum pair weights in different orders; fitted values move at ~1e-8.
        for key, value in want.items():
            if isinstance(value, float):
                assert got[key] == pytest.approx(value, rel=1e-6, abs=1e-12), key
            else:
                assert got[key] == value, key
        assert "C0" in got
        rows = list(csv.reader(open(tmp_path / "correlation.csv")))
        gold = list(csv.reader(open(GOLDEN / "be_correlation_seed1_1e4.csv")))
        assert rows[0] == gold[0] and len(rows) == len(gold)
        assert np.allclose(np.array(rows[1:], float), np.array(gold[1:], float), rtol=1e-6)


class TestExitCodes:
    def test_success(self, tmp_path):
        p = write_config(tmp_path, {"scenario": "coexisting_paths"})
        assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_OK

    def test_config_error(self, tmp_path, capsys):
        p = write_config(tmp_path, {"scenario": "be_correlation", "radius_fm_typo": 1.0})
        assert cli.main(["run", "--config", str(p)]) == cli.EXIT_CONFIG
        assert "radius_fm_typo" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "absent.toml")]) == cli.EXIT_CONFIG

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("scenario = \n")
        assert cli.main(["run", "--config", str(p)]) == cli.EXIT_CONFIG

    def test_incompatible_boundary(self, tmp_path, monkeypatch):
        from tsvfsim.errors import IncompatibleBoundaryError

        def boom(*a, **k):
            raise IncompatibleBoundaryError("orthogonal")

        monkeypatch.setitem(cli.REGISTRY, "coexisting_paths",
                            cli.REGISTRY["coexisting_paths"].__class__(
                                "coexisting_paths", "x", "x", {}, boom))
        p = write_config(tmp_path, {"scenario": "coexisting_paths"})
        assert cli.main(["run", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_BOUNDARY

    def test_contract_violation(self, tmp_path):
        # Zero witnesses cannot record a macroscopic decision.
        p = write_config(tmp_path, {"scenario": "stern_gerlach", "witness_count": 0, "trials": 3})
        assert cli.main(["run", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_CONTRACT

    def test_console_script_module(self, tmp_path):
        p = write_config(tmp_path, {"scenario": "coexisting_paths"})
        r = subprocess.run([sys.executable, "-m", "tsvfsim.cli", "run", "--config", str(p), "--out",
                            str(tmp_path / "o"), "--format", "json"], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        assert (tmp_path / "o" / "fringes.json").exists()


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = cli.load_config(path)
    assert cfg.scenario == path.stem
    assert cfg.params == cli.REGISTRY[path.stem].defaults
