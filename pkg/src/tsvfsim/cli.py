"""Scenario registry, configuration ingestion and the ``tsvfsim`` command.

A run is described by a TOML file::

    scenario = "be_correlation"
    seed = 1
    events = 10000
    radius = 5.0

    [output]
    path = "out"
    format = "csv"

Keys other than ``scenario``, ``seed``, ``workers``, ``[output]`` and the
scenario's own parameters are rejected. Command-line flags override file
values, which override defaults.

Every run writes ``summary.json`` (deterministic statistics), one or more
scenario tables (CSV, or JSON with ``--format json``) and ``run_record.json``,
which adds wall time, timestamp and version to the resolved config.

Exit codes: 0 success, 2 configuration error, 3 incompatible boundary,
4 numerical-contract violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import CapacityError, ConfigError, ContractViolation, IncompatibleBoundaryError, NodeError, RangeError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

SCHEMA_VERSION = 1
OUT_ENV = "TSVFSIM_OUT"
FORMATS = ("csv", "json")
BASE_KEYS = ("scenario", "seed", "workers", "output")
OUTPUT_KEYS = ("path", "format")

EXIT_OK, EXIT_CONFIG, EXIT_BOUNDARY, EXIT_CONTRACT = 0, 2, 3, 4


@dataclass(frozen=True)
class Table:
    """Plot-ready rows written as CSV (or a JSON list of objects)."""

    columns: tuple
    rows: list


@dataclass
class Outcome:
    summary: dict
    tables: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    section: str
    description: str
    defaults: dict
    runner: Callable


REGISTRY: dict[str, Scenario] = {}


def scenario(name: str, section: str, description: str, **defaults):
    def deco(fn):
        REGISTRY[name] = Scenario(name, section, description, defaults, fn)
        return fn

    return deco


# --- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved run configuration."""

    scenario: str
    seed: int
    params: dict
    workers: int = 1
    output_path: str = "."
    output_format: str = "csv"

    def to_dict(self) -> dict:
        d = {"scenario": self.scenario, "seed": self.seed, "workers": self.workers}
        d.update(self.params)
        d["output"] = {"path": self.output_path, "format": self.output_format}
        return d


def _check_type(key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        if ok and default and all(isinstance(v, float) for v in default):
            value = [float(v) for v in value]
    else:  # pragma: no cover - registry defaults are all of the above
        ok = True
    if not ok:
        raise ConfigError(f"key {key!r} has the wrong type: expected {type(default).__name__}, got {value!r}")
    return value


def parse_config(data: dict, overrides: dict | None = None) -> ScenarioConfig:
    """Validate a raw mapping (from TOML or a run record) and resolve defaults.

    `overrides` (from command-line flags) may set ``seed``, ``workers``,
    ``path`` and ``format``.
    """
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    name = data.get("scenario")
    if name is None:
        raise ConfigError("missing key 'scenario'")
    if name not in REGISTRY:
        raise ConfigError(f"unknown scenario {name!r}; choose one of {', '.join(REGISTRY)}")
    sc = REGISTRY[name]
    for key in data:
        if key not in BASE_KEYS and key not in sc.defaults:
            raise ConfigError(f"unknown key {key!r} for scenario {name!r}")
    out = data.get("output", {})
    if not isinstance(out, dict):
        raise ConfigError("'output' must be a table")
    for key in out:
        if key not in OUTPUT_KEYS:
            raise ConfigError(f"unknown key 'output.{key}'")
    seed = overrides.get("seed", data.get("seed", 0))
    workers = overrides.get("workers", data.get("workers", 1))
    seed = _check_type("seed", seed, 0)
    workers = _check_type("workers", workers, 1)
    if seed < 0:
        raise ConfigError("key 'seed' must be non-negative")
    if workers < 1:
        raise ConfigError("key 'workers' must be >= 1")
    params = {}
    for key, default in sc.defaults.items():
        params[key] = _check_type(key, data.get(key, default), default)
    path = overrides.get("path", out.get("path", os.environ.get(OUT_ENV, ".")))
    fmt = overrides.get("format", out.get("format", "csv"))
    if not isinstance(path, str):
        raise ConfigError("key 'output.path' must be a string")
    if fmt not in FORMATS:
        raise ConfigError(f"key 'output.format' must be one of {FORMATS}, got {fmt!r}")
    return ScenarioConfig(name, seed, params, workers, path, fmt)


def load_config(path, overrides: dict | None = None) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return parse_config(data, overrides)


# --- running ------------------------------------------------------------------------


def _clean(x):
    """JSON-safe, deterministic representation (non-finite floats as strings)."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return {"re": _clean(x.real), "im": _clean(x.imag)}
    return x


def _dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_table(path: Path, table: Table, fmt: str) -> Path:
    if fmt == "json":
        path = path.with_suffix(".json")
        _dump_json(path, [dict(zip(table.columns, r)) for r in table.rows])
    else:
        path = path.with_suffix(".csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(table.columns)
            for r in table.rows:
                w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in _clean(list(r))])
    return path


@dataclass
class RunRecord:
    config: ScenarioConfig
    summary: dict
    outputs: list
    wall_time: float
    timestamp: str
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "config": self.config.to_dict(),
            "summary": self.summary,
            "outputs": self.outputs,
            "wall_time_s": self.wall_time,
            "timestamp": self.timestamp,
            "seed": self.config.seed,
        }


def run(cfg: ScenarioConfig, write: bool = True) -> RunRecord:
    """Dispatch `cfg` to its scenario and write its outputs under ``cfg.output_path``."""
    sc = REGISTRY[cfg.scenario]
    t0 = time.perf_counter()
    outcome = sc.runner(cfg.seed, cfg.workers, **cfg.params)
    wall = time.perf_counter() - t0
    summary = _clean({"schema_version": SCHEMA_VERSION, "scenario": cfg.scenario, "seed": cfg.seed,
                      **outcome.summary})
    outputs = []
    if write:
        out = Path(cfg.output_path)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "summary.json", summary)
        outputs.append("summary.json")
        for name, table in outcome.tables.items():
            outputs.append(_write_table(out / name, table, cfg.output_format).name)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    record = RunRecord(cfg, summary, outputs, wall, stamp)
    if write:
        _dump_json(Path(cfg.output_path) / "run_record.json", record.to_dict())
    return record


def list_scenarios() -> list[dict]:
    return [{"name": s.name, "section": s.section, "description": s.description} for s in REGISTRY.values()]


# --- scenarios ----------------------------------------------------------------------


@scenario(
    "abl_demo", "ABL rule",
    "ABL outcome probabilities: hand cases, Born reduction for a mixed final boundary, dominant-outcome frequencies",
    dim=4, instances=100, trials=10000,
)
def _abl_demo(seed, workers, dim, instances, trials):
    from . import hilbert as hs
    from . import rng as rngmod
    from . import tsvf

    if not 2 <= dim <= 16:
        raise ConfigError("key 'dim' must be between 2 and 16")
    q = hs.qubit("q")
    plus = hs.state(q, hs.KET_PLUS)
    fam = tsvf.computational_family(q)
    one = hs.identity(q)
    hand = {
        "x+_then_0": tsvf.abl_probability(plus, hs.basis_state(q, 0), one, one, fam).tolist(),
        "x+_then_x-": tsvf.abl_probability(plus, hs.state(q, hs.KET_MINUS), one, one, fam).tolist(),
    }
    g = rngmod.stream(seed, "abl_demo", "instances")
    worst = 0.0
    for _ in range(instances):
        d = int(g.integers(2, dim + 1))
        b = hs.Basis.single("s", d)
        i = hs.haar_state(b, g)
        ub, ua = hs.haar_unitary(b, g), hs.haar_unitary(b, g)
        f = tsvf.computational_family(b)
        abl = tsvf.abl_mixed(hs.pure(i), hs.maximally_mixed(b), ub, ua, f)
        worst = max(worst, float(np.max(np.abs(abl - tsvf.born_probabilities(i, f, ub)))))
    b = hs.Basis.single("s", dim)
    i = hs.haar_state(b, rngmod.stream(seed, "abl_demo", "limit_state"))
    rep = tsvf.born_limit_check(i, tsvf.computational_family(b), trials, seed)
    rows = [(k, rep.born[k], rep.mixed_final[k], rep.frequencies[k], int(rep.counts[k])) for k in range(dim)]
    return Outcome(
        {"hand_cases": hand, "born_reduction_max_deviation": worst, "instances": instances,
         "dominant_outcome": rep.to_dict(), "within_3_sigma": rep.within(3.0)},
        {"abl_outcomes": Table(("outcome", "born", "abl_mixed_final", "dominant_frequency", "count"), rows)},
    )


_PREPARATIONS = {"x+": [1 / np.sqrt(2), 1 / np.sqrt(2)], "x-": [1 / np.sqrt(2), -1 / np.sqrt(2)],
                 "0": [1.0, 0.0], "1": [0.0, 1.0]}


@scenario(
    "stern_gerlach", "Stern-Gerlach",
    "Spin split amplified into witness qubits; up/down selection by the final boundary over many seeds",
    witness_count=64, trials=10000, preparation="x+",
)
def _stern_gerlach(seed, workers, witness_count, trials, preparation):
    from . import branching as br

    if preparation not in _PREPARATIONS:
        raise ConfigError(f"key 'preparation' must be one of {list(_PREPARATIONS)}")
    seeds = [seed * 1_000_003 + k for k in range(trials)]
    results = [br.stern_gerlach_scenario(s, witness_count, _PREPARATIONS[preparation]) for s in seeds]
    batch = br.stern_gerlach_batch(seeds, witness_count, _PREPARATIONS[preparation])
    rows = [(r.seed, r.log2_up, r.log2_down, r.selected, r.gap) for r in results]
    return Outcome(
        {**batch.to_dict(), "preparation": preparation},
        {"stern_gerlach_runs": Table(("seed", "log2_w_up", "log2_w_down", "selected", "gap"), rows)},
    )


@scenario(
    "decision_tree", "weight gap",
    "Median log2 weight gap between the two macroscopic branches versus the number of recorded decisions",
    decisions=[16, 64, 256], seeds=100,
)
def _decision_tree(seed, workers, decisions, seeds):
    from . import branching as br

    ns = [int(n) for n in decisions]
    if not ns or min(ns) < 1:
        raise ConfigError("key 'decisions' must list positive counts")
    base = [seed * 1_000_003 + k for k in range(seeds)]
    med = [br.stern_gerlach_batch(base, n).median_gap for n in ns]
    slope = float(np.polyfit(np.log2(ns), np.log2(med), 1)[0]) if len(ns) > 1 else float("nan")
    ratios = [m / med[0] / np.sqrt(n / ns[0]) for n, m in zip(ns, med)]
    return Outcome(
        {"decisions": ns, "median_gap": med, "loglog_slope": slope, "gap_over_sqrt_ratio": ratios},
        {"weight_gap": Table(("decisions", "median_gap"), list(zip(ns, med)))},
    )


@scenario(
    "bidirectional", "bang/crunch border",
    "Overlap of Haar bang and crunch states at the border versus dimension, with border dominance",
    qubit_min=4, qubit_max=10, seeds=100,
)
def _bidirectional(seed, workers, qubit_min, qubit_max, seeds):
    from . import branching as br

    if not 1 <= qubit_min < qubit_max <= 14:
        raise ConfigError("need 1 <= qubit_min < qubit_max <= 14")
    res = br.overlap_scaling(range(qubit_min, qubit_max + 1), seeds, base_seed=seed)
    m = br.match_border(br.haar_scenario(qubit_min, seed))
    rows = list(zip(res["log2_dim"], res["mean_log2_overlap_sq"]))
    return Outcome(
        {**res, "example_border": m.to_dict()},
        {"overlap_scaling": Table(("log2_dim", "mean_log2_overlap_sq"), rows)},
    )


def _histogram_table(h) -> Table:
    rows = [(lo, hi, s, m, c, e) for lo, hi, s, m, c, e in
            zip(h.bin_edges[:-1], h.bin_edges[1:], h.same, h.mixed, h.C, h.C_err)]
    return Table(("q_lo", "q_hi", "same", "mixed", "C", "C_err"), rows)


@scenario(
    "be_correlation", "Bose-Einstein correlations",
    "Two-pion correlation C(Q_inv) from symmetrized emission with event mixing; Gaussian fit of R and C(0)",
    events=100000, radius=5.0, bins=40, q_max=0.4,
)
def _be_correlation(seed, workers, events, radius, bins, q_max):
    from . import boseeinstein as be

    try:
        src = be.SourceModel(radius=radius)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    r = be.correlation(src, events, seed, bins=bins, q_range=(0.0, q_max), workers=workers)
    return Outcome(r.summary(), {"correlation": _histogram_table(r.histogram)})


@scenario(
    "absorber_gedanken", "absorber gedanken experiment",
    "Two-spot source; upper/lower pion pairs with the origin-resolving absorber off and on",
    events=100000, separation=6.0, spot_size=1.0,
)
def _absorber(seed, workers, events, separation, spot_size):
    from . import boseeinstein as be

    try:
        src = be.SourceModel("two_halves", separation=separation, spot_size=spot_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    summary, tables = {}, {}
    for on in (False, True):
        r = be.absorber_gedanken(src, on, events, seed, workers=workers)
        tag = "absorber_on" if on else "absorber_off"
        summary[tag] = r.summary()
        tables[tag] = _histogram_table(r.histogram)
    return Outcome(summary, tables)


@scenario(
    "pilotwave_hbt", "pilot-wave HBT",
    "Guided photon pairs from two hot spots: coincidence rates of guided trajectories vs symmetrized QM",
    trials=100000, delta=0.0, arrangement="both", spot_offset=8.0, distance=40.0, dz=0.1,
)
def _pilotwave_hbt(seed, workers, trials, delta, arrangement, spot_offset, distance, dz):
    from . import pilotwave as pw

    arrs = ("baseline", "moved_back_twice")
    if arrangement not in arrs + ("both",):
        raise ConfigError(f"key 'arrangement' must be one of {arrs + ('both',)}")
    model = pw.HBTModel(a=spot_offset, L=distance)
    ens = pw.simulate_hbt(model, trials, seed, dz=dz)
    summary, records = {"fringe_period": model.fringe_period}, []
    for arr in arrs if arrangement == "both" else (arrangement,):
        r = pw.hbt_compare(model, pw.DetectorGeometry(distance, None, arr), trials, seed, delta, ensemble=ens)
        summary[arr] = r.to_dict()
        records += r.records
    rows = [(r.model, r.arrangement, r.delta, r.rate, r.error) for r in records]
    return Outcome(summary, {"rates": Table(("model", "arrangement", "delta", "rate", "error"), rows)})


@scenario(
    "correspondence_average", "correspondence rule",
    "Coincidence rate averaged over fringe offsets compared with the unsymmetrized rate",
    trials=100000, delta_min=-0.5, delta_max=0.5, points=64, dz=0.1,
)
def _correspondence(seed, workers, trials, delta_min, delta_max, points, dz):
    from . import pilotwave as pw

    if delta_max < delta_min or points < 1:
        raise ConfigError("need delta_min <= delta_max and points >= 1")
    model = pw.HBTModel()
    ens = pw.simulate_hbt(model, trials, seed, dz=dz) if trials > 0 else None
    r = pw.correspondence_average(model, pw.DetectorGeometry(), (delta_min, delta_max), trials, seed,
                                  points=points, ensemble=ens)
    det = pw.DetectorGeometry().resolved(model)
    deltas = (np.array([delta_min]) if delta_max == delta_min
              else delta_min + (np.arange(points) + 0.5) * (delta_max - delta_min) / points)
    qm = pw.qm_rates(model, deltas * model.fringe_period, det.half_window)
    rows = [(d, s, n) for d, s, n in zip(deltas, qm["symmetrized"], qm["normal"])]
    if ens is not None:
        rd, _ = pw.dbb_rates(ens, deltas * model.fringe_period, det.half_window, resolved=False)
        rows = [row + (x,) for row, x in zip(rows, rd)]
        cols = ("delta", "rate_qm", "rate_normal", "rate_dbb")
    else:
        cols = ("delta", "rate_qm", "rate_normal")
    return Outcome(r.to_dict(), {"delta_sweep": Table(cols, rows)})


@scenario(
    "coexisting_paths", "coexisting paths",
    "Interferometer fringe visibility with a path witness of given overlap",
    overlaps=[0.0, 0.5, 1.0], phases=64,
)
def _coexisting(seed, workers, overlaps, phases):
    from . import branching as br

    summary, rows = {"no_witness": br.coexisting_paths_check(None, phases).visibility, "overlaps": []}, []
    for o in overlaps:
        rep = br.coexisting_paths_check(o, phases)
        summary["overlaps"].append({"witness_overlap": o, "visibility": rep.visibility})
        rows += [(o, p, d) for p, d in zip(rep.phases, rep.detection)]
    return Outcome(summary, {"fringes": Table(("witness_overlap", "phase", "detection"), rows)})


# --- command line -------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsvfsim", description="Pre- and post-selected dynamics scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario from a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the config's output.path)")
    r.add_argument("--format", choices=FORMATS)
    ls = sub.add_parser("list", help="list scenarios")
    ls.add_argument("--json", action="store_true")
    sub.add_parser("version", help="print the version")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "list":
        cat = list_scenarios()
        if args.json:
            print(json.dumps(cat, indent=2))
        else:
            for s in cat:
                print(f"{s['name']:<24} {s['section']:<34} {s['description']}")
        return EXIT_OK
    try:
        cfg = load_config(args.config, {"seed": args.seed, "workers": args.workers, "path": args.out,
                                        "format": args.format})
        rec = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IncompatibleBoundaryError as exc:
        print(f"incompatible boundary: {exc}", file=sys.stderr)
        return EXIT_BOUNDARY
    except (ContractViolation, NodeError, CapacityError, RangeError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    print(f"{cfg.scenario}: wrote {', '.join(rec.outputs)} to {cfg.output_path} ({rec.wall_time:.1f} s)")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
