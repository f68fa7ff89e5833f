"""Command-line front end: validate configs, run sweeps, check the oracle.

Configs are single JSON documents, schema-validated before any compute with
unknown keys rejected.  Every output file embeds the config hash so that
identical configs reproduce byte-identical numeric payloads.

Exit codes: 0 success, 1 validation failure, 2 partial sweep failure,
3 total failure.  HBNCCE_OUTPUT_DIR and HBNCCE_THREADS override the output
directory and thread count.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bath import (
    BathError,
    HyperfineDataset,
    IsotopeConfig,
    LatticeSpec,
    generate_bath,
    save_bath,
)
from .cce import BathState, CceError, ClusterPolicy, gcce_coherence, write_census_json, write_curves_csv
from .constants import CONSTANTS_VERSION
from .eseem import EseemError, fit_decay
from .hyperfine_model import HyperfineModelParams, build_model_dataset
from .oracle import OracleLimit, OracleLimitError, exact_coherence
from .spin_model import CentralSpinParams, MagneticField, SpinModelError
from .sweeps import (
    RunContext,
    SweepError,
    SweepSpec,
    coherence_at,
    first_shell_nitrogen_indices,
    run_sweep,
    write_sweep_table,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2
EXIT_TOTAL = 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema

DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "hbncce-out",
    "threads": 1,
    "lattice": {
        "a_ang": 2.504,
        "c_interlayer_ang": 3.33,
        "stacking": "AA'",
        "radius_ang": 12.0,
    },
    "isotopes": {
        "boron": "B11",
        "nitrogen": "N15",
        "n14_quadrupole_mhz": None,
    },
    "hyperfine_dataset": None,  # path; None generates the built-in model dataset
    "central": {
        "d_mhz": 3470.0,
        "e_mhz": 50.0,
        "g_e": 2.0023,
        "qubit_levels": [0, -1],
    },
    "policy": {
        "max_order": 2,
        "r_bath_ang": None,
        "r_connect_ang": 4.5,
        "max_clusters_per_order": 1500,
        "strongest_first": True,
        "r_pair_ang": 8.0,
        "division_floor": 1e-4,
        "ratio_cap": 4.0,
        "hilbert_cap": 4096,
    },
    "mode": "full",
    "bath_state": {"first_shell_polarization": None, "axis": "z"},
    "time_grid": {"points": 501, "t_max_us": None},
    "sweep": {
        "axis": "B_z",
        "points": [50.0],
        "outputs": ["T2"],
        "overrides": {},
    },
}

_NUMBER = (int, float)


def _check_keys(section: dict, allowed: dict, path: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config keys at {path}: {sorted(unknown)}")


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def validate_config(doc: dict) -> dict:
    """Schema-check a config document and merge it over the defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, DEFAULT_CONFIG, "$")
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key, val in doc.items():
        if isinstance(DEFAULT_CONFIG[key], dict) and key != "sweep":
            _require(isinstance(val, dict), f"{key} must be an object")
            _check_keys(val, DEFAULT_CONFIG[key], key)
            cfg[key].update(val)
        elif key == "sweep":
            _require(isinstance(val, dict), "sweep must be an object")
            _check_keys(val, DEFAULT_CONFIG["sweep"], "sweep")
            cfg["sweep"].update(val)
        else:
            cfg[key] = val

    _require(isinstance(cfg["seed"], int), "seed must be an integer")
    _require(isinstance(cfg["threads"], int) and cfg["threads"] >= 1,
             "threads must be a positive integer")
    lat = cfg["lattice"]
    for k in ("a_ang", "c_interlayer_ang", "radius_ang"):
        _require(isinstance(lat[k], _NUMBER) and lat[k] > 0, f"lattice.{k} must be > 0")
    iso = cfg["isotopes"]
    _require(iso["boron"] in ("B11", "B10", "natural"),
             f"isotopes.boron invalid: {iso['boron']!r}")
    _require(iso["nitrogen"] in ("N15", "N14", "natural"),
             f"isotopes.nitrogen invalid: {iso['nitrogen']!r}")
    if iso["nitrogen"] in ("N14", "natural"):
        _require(isinstance(iso["n14_quadrupole_mhz"], _NUMBER),
                 "isotopes.n14_quadrupole_mhz is required for 14N baths")
    cen = cfg["central"]
    _require(isinstance(cen["d_mhz"], _NUMBER), "central.d_mhz must be a number")
    _require(isinstance(cen["e_mhz"], _NUMBER) and cen["e_mhz"] >= 0,
             "central.e_mhz is stored as a magnitude and must be >= 0")
    _require(
        isinstance(cen["qubit_levels"], list) and len(cen["qubit_levels"]) == 2
        and set(cen["qubit_levels"]) <= {-1, 0, 1}
        and cen["qubit_levels"][0] != cen["qubit_levels"][1],
        "central.qubit_levels must be two distinct m_S values",
    )
    pol = cfg["policy"]
    _require(isinstance(pol["max_order"], int) and 1 <= pol["max_order"] <= 4,
             "policy.max_order must be 1..4")
    for k in ("r_connect_ang", "r_pair_ang"):
        _require(isinstance(pol[k], _NUMBER) and pol[k] > 0, f"policy.{k} must be > 0")
    _require(cfg["mode"] in ("full", "pseudo_secular"),
             f"mode invalid: {cfg['mode']!r}")
    bs = cfg["bath_state"]
    if bs["first_shell_polarization"] is not None:
        _require(
            isinstance(bs["first_shell_polarization"], _NUMBER)
            and 0 <= bs["first_shell_polarization"] <= 1,
            "bath_state.first_shell_polarization must be in [0, 1]",
        )
    tg = cfg["time_grid"]
    _require(isinstance(tg["points"], int) and tg["points"] >= 20,
             "time_grid.points must be an integer >= 20")
    sw = cfg["sweep"]
    _require(sw["axis"] in ("B_z", "E", "polarization"),
             f"sweep.axis invalid: {sw['axis']!r}")
    _require(isinstance(sw["points"], list), "sweep.points must be a list")
    for p in sw["points"]:
        _require(isinstance(p, _NUMBER) and math.isfinite(p),
                 f"sweep point {p!r} must be a finite number")
    if sw["axis"] == "E":
        for p in sw["points"]:
            _require(p >= 0, "E sweep points are magnitudes and must be >= 0")
    if sw["axis"] == "polarization":
        for p in sw["points"]:
            _require(0 <= p <= 1, "polarization sweep points must be in [0, 1]")
    for o in sw["outputs"]:
        _require(o in ("T2", "curves", "spectra"), f"unknown sweep output {o!r}")
    _require(isinstance(sw["overrides"], dict), "sweep.overrides must be an object")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# building run inputs from a config


def _build_dataset(cfg: dict) -> HyperfineDataset:
    path = cfg["hyperfine_dataset"]
    lat = cfg["lattice"]
    lattice = LatticeSpec(
        a_ang=lat["a_ang"], c_interlayer_ang=lat["c_interlayer_ang"],
        stacking=lat["stacking"], radius_ang=lat["radius_ang"],
    )
    if path is None:
        return build_model_dataset(lattice, coverage_radius_ang=lat["radius_ang"] + 1.0)
    return HyperfineDataset.from_csv(path)


def build_inputs(cfg: dict):
    lat = cfg["lattice"]
    lattice = LatticeSpec(
        a_ang=lat["a_ang"], c_interlayer_ang=lat["c_interlayer_ang"],
        stacking=lat["stacking"], radius_ang=lat["radius_ang"],
    )
    iso = cfg["isotopes"]
    isotopes = IsotopeConfig(
        boron_isotope=iso["boron"], nitrogen_isotope=iso["nitrogen"],
        rng_seed=cfg["seed"], n14_quadrupole_mhz=iso["n14_quadrupole_mhz"],
    )
    dataset = _build_dataset(cfg)
    bath = generate_bath(lattice, isotopes, dataset)

    cen = cfg["central"]
    central = CentralSpinParams(
        d_mhz=cen["d_mhz"], e_mhz=cen["e_mhz"], g_e=cen["g_e"],
        qubit_levels=tuple(cen["qubit_levels"]),
    )
    pol = cfg["policy"]
    policy = ClusterPolicy(
        max_order=pol["max_order"], r_bath_ang=pol["r_bath_ang"],
        r_connect_ang=pol["r_connect_ang"],
        max_clusters_per_order=pol["max_clusters_per_order"],
        strongest_first=pol["strongest_first"], r_pair_ang=pol["r_pair_ang"],
        division_floor=pol["division_floor"], ratio_cap=pol["ratio_cap"],
        hilbert_cap=pol["hilbert_cap"],
    )
    p_first = cfg["bath_state"]["first_shell_polarization"]
    if p_first is None:
        bath_state = BathState(axis=cfg["bath_state"]["axis"])
    else:
        idx = first_shell_nitrogen_indices(bath)
        bath_state = BathState(
            polarized={i: float(p_first) for i in idx},
            axis=cfg["bath_state"]["axis"],
        )
    ctx = RunContext(
        central=central, bath=bath, policy=policy,
        mode=cfg["mode"], bath_state=bath_state,
        threads=int(os.environ.get("HBNCCE_THREADS", cfg["threads"])),
        time_points=cfg["time_grid"]["points"],
        t_max_us=cfg["time_grid"]["t_max_us"],
    )
    return ctx


def _output_dir(cfg: dict, override: str | None) -> Path:
    out = override or os.environ.get("HBNCCE_OUTPUT_DIR") or cfg["output_dir"]
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _point_tag(axis: str, point: float) -> str:
    unit = {"B_z": "mt", "E": "mhz", "polarization": "p"}[axis]
    return f"{axis.lower().replace('_', '')}_{point:g}{unit}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
        cfg = validate_config(doc)
        ctx = build_inputs(cfg)
    except (OSError, json.JSONDecodeError, ConfigError, BathError,
            SpinModelError, CceError, SweepError, ValueError) as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    species = {}
    for s in ctx.bath:
        species[s.species.label] = species.get(s.species.label, 0) + 1
    print(f"OK: bath of {len(ctx.bath)} spins "
          f"({', '.join(f'{v} {k}' for k, v in sorted(species.items()))}), "
          f"config hash {config_hash(cfg)}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        if args.preset:
            doc = make_preset(args.preset)
            if args.config:
                with open(args.config) as fh:
                    doc.update(json.load(fh))
        else:
            with open(args.config) as fh:
                doc = json.load(fh)
        cfg = validate_config(doc)
        if args.threads:
            cfg["threads"] = args.threads
        ctx = build_inputs(cfg)
    except (OSError, json.JSONDecodeError, ConfigError, BathError,
            SpinModelError, CceError, SweepError, ValueError) as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out = _output_dir(cfg, args.output_dir)
    chash = config_hash(cfg)
    if not cfg["sweep"]["points"]:
        print("warning: empty sweep, nothing to do")
        return EXIT_OK
    sweep = SweepSpec(
        axis=cfg["sweep"]["axis"],
        points=tuple(cfg["sweep"]["points"]),
        outputs=tuple(cfg["sweep"]["outputs"]),
        overrides={int(k): v for k, v in cfg["sweep"]["overrides"].items()},
    )

    rows = run_sweep(sweep, ctx)
    write_sweep_table(out / "sweep_table.csv", rows, chash)
    save_bath(ctx.bath, out / "bath.json")

    spectra = {}
    for row in rows:
        tag = _point_tag(sweep.axis, row.point)
        if row.error:
            print(f"point {row.point:g}: FAILED: {row.error}", file=sys.stderr)
            continue
        t2 = row.fit.t2_us if row.fit else math.nan
        print(f"point {row.point:g} [{row.region}]: "
              f"T2 = {t2:.4g} us, stretch n = {row.fit.stretch_n:.3g}, "
              f"degraded fraction {row.degraded_fraction:.3g}")
        if row.result is not None:
            write_curves_csv(out / f"curves_{tag}.csv", row.result, chash)
            write_census_json(out / f"census_{tag}.json", row.result, chash)
        if row.spectrum is not None:
            spectra[tag] = [[f, w] for f, w in row.spectrum[:12]]

    if spectra:
        with open(out / "spectra.json", "w") as fh:
            json.dump({"config_hash": chash, "peaks_mhz": spectra}, fh,
                      indent=1, sort_keys=True)
    _write_convergence(out, rows, sweep, chash)
    provenance = {
        "config": cfg,
        "config_hash": chash,
        "constants_version": CONSTANTS_VERSION,
        "package_version": __version__,
        "seed": cfg["seed"],
    }
    with open(out / "provenance.json", "w") as fh:
        json.dump(provenance, fh, indent=1, sort_keys=True)

    failures = sum(1 for r in rows if r.error)
    if failures == len(rows):
        return EXIT_TOTAL
    if failures:
        return EXIT_PARTIAL
    return EXIT_OK


def _write_convergence(out: Path, rows, sweep: SweepSpec, chash: str) -> None:
    doc = {"config_hash": chash, "points": {}}
    for row in rows:
        if row.error or row.result is None:
            continue
        tag = _point_tag(sweep.axis, row.point)
        per_order = {}
        for n, c in sorted(row.result.cumulative.items()):
            try:
                fit = fit_decay(c)
                per_order[str(n)] = None if fit.no_decay else fit.t2_us
            except EseemError:
                per_order[str(n)] = None
        doc["points"][tag] = {
            "t2_by_order_us": per_order,
            "degraded_fraction": row.degraded_fraction,
        }
    with open(out / "convergence.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def cmd_oracle_check(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
        cfg = validate_config(doc)
        ctx = build_inputs(cfg)
    except (OSError, json.JSONDecodeError, ConfigError, BathError,
            SpinModelError, CceError, SweepError, ValueError) as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    dim = 3
    for s in ctx.bath:
        dim *= s.species.dim
    if dim > ctx.policy.hilbert_cap:
        print(f"REFUSED: bath dimension {dim} exceeds the oracle cap "
              f"{ctx.policy.hilbert_cap}", file=sys.stderr)
        return EXIT_VALIDATION

    span = ctx.t_max_us or 1.0
    times = np.linspace(0.0, span, ctx.time_points)
    field = MagneticField.along_c(cfg["sweep"]["points"][0]
                                  if cfg["sweep"]["axis"] == "B_z" else 0.0)
    exact = exact_coherence(
        ctx.central, ctx.bath, field, times, mode=ctx.mode,
        bath_state=ctx.bath_state, limit=OracleLimit(ctx.policy.hilbert_cap),
        r_pair_ang=ctx.policy.r_pair_ang,
    )
    full_order = ctx.policy.max_order >= len(ctx.bath)
    policy = ctx.policy
    if full_order:
        # the full-order expansion telescopes exactly; division
        # regularization would only blur the comparison
        import dataclasses

        policy = dataclasses.replace(policy, division_floor=0.0)
    result = gcce_coherence(
        ctx.bath, policy, ctx.central, field, times,
        mode=ctx.mode, bath_state=ctx.bath_state, threads=ctx.threads,
    )
    report = {}
    for n, c in sorted(result.cumulative.items()):
        report[n] = float(np.max(np.abs(c.magnitude() - exact.magnitude())))
        print(f"order {n}: max |delta |L|| = {report[n]:.3e}")
    best = report[max(report)]
    if full_order:
        ok = best < 1e-8
        print(f"{'PASS' if ok else 'FAIL'}: full-order deviation {best:.3e} "
              f"(threshold 1e-08)")
        return EXIT_OK if ok else EXIT_TOTAL
    print(f"INFO: expansion order {ctx.policy.max_order} below bath size "
          f"{len(ctx.bath)}; deviation {best:.3e} reported without threshold")
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    lattice = LatticeSpec(radius_ang=max(args.radius, 1.0))
    params = HyperfineModelParams()
    ds = build_model_dataset(lattice, coverage_radius_ang=args.radius, params=params)
    ds.to_csv(args.out)
    print(f"wrote {len(ds)} hyperfine entries to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# presets


def make_preset(name: str) -> dict:
    """Named analysis presets (reduced desk-scale policies)."""
    if name == "table-1":
        return {
            "output_dir": "hbncce-out/table-1",
            "lattice": {"radius_ang": 16.0},
            "policy": {"max_order": 3, "r_connect_ang": 4.0,
                       "max_clusters_per_order": 1500},
            "sweep": {
                "axis": "B_z", "points": [0.0, 8.7, 20.0, 3000.0],
                "outputs": ["T2", "curves"],
                # zero field: conditioned expansion converges by 600
                # clusters/order; 3 T needs the far resonant pairs instead
                "overrides": {
                    "0": {"max_clusters_per_order": 600},
                    "3": {"max_order": 2, "r_connect_ang": 6.0,
                          "max_clusters_per_order": None},
                },
            },
        }
    if name == "figure-2a":
        points = sorted(set(
            [round(v, 1) for v in np.geomspace(1.0, 3000.0, 14)]
            + [100.0, 115.0, 124.0, 135.0, 155.0]
        ))
        return {
            "output_dir": "hbncce-out/figure-2a",
            "lattice": {"radius_ang": 12.0},
            "policy": {"max_order": 2, "r_connect_ang": 4.0,
                       "max_clusters_per_order": 1200},
            "sweep": {"axis": "B_z", "points": points, "outputs": ["T2"]},
        }
    if name == "figure-3a":
        return {
            "output_dir": "hbncce-out/figure-3a",
            "lattice": {"radius_ang": 12.0},
            "policy": {"max_order": 3, "r_connect_ang": 4.0,
                       "max_clusters_per_order": 800},
            "sweep": {"axis": "B_z", "points": [0.0],
                      "outputs": ["T2", "curves"]},
        }
    if name == "figure-4":
        return {
            "output_dir": "hbncce-out/figure-4",
            "lattice": {"radius_ang": 12.0},
            "policy": {"max_order": 2, "r_connect_ang": 4.0,
                       "max_clusters_per_order": 1200},
            "sweep": {"axis": "polarization", "points": [0.0, 0.3, 0.62, 1.0],
                      "outputs": ["T2", "curves", "spectra"]},
            "time_grid": {"points": 501, "t_max_us": None},
        }
    if name == "figure-5":
        return {
            "output_dir": "hbncce-out/figure-5",
            "lattice": {"radius_ang": 14.0},
            "policy": {"max_order": 2, "r_connect_ang": 6.0,
                       "max_clusters_per_order": None},
            "sweep": {"axis": "B_z",
                      "points": [150.0, 200.0, 250.0, 300.0, 350.0, 500.0],
                      "outputs": ["T2", "curves"]},
        }
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("table-1", "figure-2a", "figure-3a", "figure-4", "figure-5")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hbncce",
        description="Hahn-echo decoherence of the hBN boron-vacancy qubit "
                    "via cluster-correlation expansion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="schema + dataset coverage check")
    p_val.add_argument("config")

    p_run = sub.add_parser("run", help="run the configured sweep")
    p_run.add_argument("config", nargs="?", default=None)
    p_run.add_argument("--preset", choices=PRESETS,
                       help="named analysis preset; a config file overrides "
                            "individual fields")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--output-dir", default=None)

    p_orc = sub.add_parser("oracle-check",
                           help="compare the expansion with exact propagation")
    p_orc.add_argument("config")

    p_mk = sub.add_parser("make-dataset",
                          help="write the built-in model hyperfine dataset CSV")
    p_mk.add_argument("--radius", type=float, default=21.0)
    p_mk.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args)
    if args.command == "run":
        if not args.preset and not args.config:
            print("INVALID: provide a config file or --preset", file=sys.stderr)
            return EXIT_VALIDATION
        return cmd_run(args)
    if args.command == "oracle-check":
        return cmd_oracle_check(args)
    if args.command == "make-dataset":
        return cmd_make_dataset(args)
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
