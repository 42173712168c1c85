"""Command-line entry point: ``apdecay <command> [--config FILE] [flags]``.

Exit codes: 0 when every verdict passes (or is vacuous), 1 on a failed
verdict, 2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import model as models
from .ap_analysis import APSignal, besicovitch_seminorm, commensurate_project, mean_value
from .diagnostics import contraction_experiment, decay_experiment, monotone_stats
from .kinetic import DEFAULT_XI_NODES, multiplier_sweep, write_sweep_csv
from .model import ModelSpec
from .solver import GridSpec, SolverConfig, run

COMMANDS = ("spectrum", "nondegeneracy", "simulate", "decay", "contraction", "kinetic-probe")

DEFAULTS = {
    "command": None,
    "model": "burgers1d",
    "signal": None,
    "grid_n": 256,
    "grid_l": 1.0,
    "end_time": 1.0,
    "cfl_convective": 0.4,
    "cfl_diffusive": 0.25,
    "viscosity": 0.0,
    "diagnostic_stride": 1,
    "store_fields": False,
    "delta": 0.5,
    "ell_schedule": [1e-1, 1e-2, 1e-3, 1e-4],
    "threshold_low": None,
    "threshold_high": None,
    "decay_threshold": 0.1,
    "xi_nodes": DEFAULT_XI_NODES,
    "sphere_samples": None,
    "out": "apdecay_out",
    "seed": 0,
    "expect": None,
}

# flag name -> config key
FLAGS = {
    "--model": "model",
    "--signal": "signal",
    "--grid-n": "grid_n",
    "--grid-l": "grid_l",
    "--end-time": "end_time",
    "--cfl-c": "cfl_convective",
    "--cfl-d": "cfl_diffusive",
    "--viscosity": "viscosity",
    "--delta": "delta",
    "--ell-schedule": "ell_schedule",
    "--out": "out",
    "--seed": "seed",
    "--expect": "expect",
}


class ConfigError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apdecay", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--model", help="model JSON file or gallery name")
    p.add_argument("--signal", action="append", help="signal JSON file (repeat for contraction)")
    p.add_argument("--grid-n", type=int, nargs="+", help="cells per axis; several values form a refinement schedule")
    p.add_argument("--grid-l", type=float, nargs="+", help="super-cell length per axis")
    p.add_argument("--end-time", type=float)
    p.add_argument("--cfl-c", type=float)
    p.add_argument("--cfl-d", type=float)
    p.add_argument("--viscosity", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--ell-schedule", type=float, nargs="+")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--expect", help="verdict the run must produce")
    return p


def _positive(cfg, key, allow_zero=False):
    v = cfg[key]
    vals = v if isinstance(v, list) else [v]
    for x in vals:
        if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x) \
                or (x < 0 if allow_zero else x <= 0):
            raise ConfigError(f"{key}: must be {'>= 0' if allow_zero else '> 0'}, got {v!r}")


def parse_config(argv=None) -> dict:
    """Merge defaults, the optional JSON file and flags; validate and return the resolved config."""
    args = build_parser().parse_args(argv)
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config: file not found: {path}")
        with open(path) as fh:
            data = json.load(fh)
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg.update(data)
    for flag, key in FLAGS.items():
        v = getattr(args, flag[2:].replace("-", "_"))
        if v is not None:
            cfg[key] = v
    if cfg["command"] not in (None, args.command):
        raise ConfigError(f"command: config file says {cfg['command']!r}, invocation says {args.command!r}")
    cfg["command"] = args.command
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    cfg = dict(cfg)
    for key in ("grid_l", "cfl_convective", "cfl_diffusive", "delta", "ell_schedule",
                "decay_threshold"):
        _positive(cfg, key)
    for key in ("end_time", "viscosity"):
        _positive(cfg, key, allow_zero=True)
    if cfg["cfl_convective"] > 1:
        raise ConfigError(f"cfl_convective: must lie in (0, 1], got {cfg['cfl_convective']}")
    if cfg["cfl_diffusive"] > 0.5:
        raise ConfigError(f"cfl_diffusive: must lie in (0, 0.5], got {cfg['cfl_diffusive']}")
    n = cfg["grid_n"]
    cfg["grid_n"] = [int(v) for v in (n if isinstance(n, list) else [n])]
    if any(v < 4 for v in cfg["grid_n"]):
        raise ConfigError(f"grid_n: need at least 4 cells, got {n!r}")
    if not isinstance(cfg["grid_l"], list):
        cfg["grid_l"] = [float(cfg["grid_l"])]
    cfg["ell_schedule"] = [float(v) for v in cfg["ell_schedule"]]
    if int(cfg["diagnostic_stride"]) < 1:
        raise ConfigError("diagnostic_stride: must be >= 1")
    if int(cfg["xi_nodes"]) < 64:
        raise ConfigError(f"xi_nodes: must be >= 64, got {cfg['xi_nodes']}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {cfg['seed']!r}")
    sig = cfg["signal"]
    if sig is not None and not isinstance(sig, list):
        cfg["signal"] = [sig]
    for s in cfg["signal"] or []:
        if isinstance(s, str) and not Path(s).is_file():
            raise ConfigError(f"signal: file not found: {s}")
    m = cfg["model"]
    if isinstance(m, str) and m not in models.gallery() and m != "zero1d" and not Path(m).is_file():
        raise ConfigError(f"model: file not found and not a gallery name: {m}")
    return cfg


def _load_model(ref) -> ModelSpec:
    if isinstance(ref, dict):
        spec = ModelSpec.from_dict(ref)
    elif ref == "zero1d":
        spec = models.zero_model()
    elif ref in models.gallery():
        spec = models.gallery()[ref]
    else:
        spec = ModelSpec.load(ref)
    return models.validate(spec)


def _load_signals(cfg: dict, dims: int, count: int) -> list[APSignal]:
    out = []
    for s in cfg["signal"] or []:
        out.append(APSignal.from_dict(s) if isinstance(s, dict) else APSignal.load(s))
    defaults = [APSignal.sine((1.0,) + (0.0,) * (dims - 1), 0.5),
                APSignal.sine((2.0,) + (0.0,) * (dims - 1), 0.4)
                + APSignal.cosine((1.0,) + (0.0,) * (dims - 1), 0.2)]
    while len(out) < count:
        out.append(defaults[len(out)])
    return out[:count] if count else out


def _grid(cfg: dict, dims: int, n: int | None = None) -> GridSpec:
    lengths = cfg["grid_l"] * dims if len(cfg["grid_l"]) == 1 else cfg["grid_l"]
    return GridSpec(tuple(lengths), (n or cfg["grid_n"][0],) * dims)


def _solver_config(cfg: dict, spec: ModelSpec, n: int | None = None) -> SolverConfig:
    return SolverConfig(model=spec, grid=_grid(cfg, spec.dims, n), end_time=float(cfg["end_time"]),
                        cfl_convective=cfg["cfl_convective"], cfl_diffusive=cfg["cfl_diffusive"],
                        viscosity=cfg["viscosity"], diagnostic_stride=int(cfg["diagnostic_stride"]),
                        store_fields=bool(cfg["store_fields"]))


def _project(sig: APSignal, grid: GridSpec) -> tuple[APSignal, float]:
    return commensurate_project(sig, grid.lengths)


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    return obj


def _write_json(path: Path, data: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# commands; each returns (result dict, verdict string, passed)

def cmd_spectrum(cfg, out: Path):
    sig = _load_signals(cfg, 1, 0)
    if not sig:
        raise ConfigError("signal: the spectrum command needs a signal file")
    sig = sig[0]
    proj, err = commensurate_project(sig, cfg["grid_l"] * sig.dims if len(cfg["grid_l"]) == 1
                                     else cfg["grid_l"])
    terms = [{"freq": list(f), "amplitude": complex(a)} for f, a in sig.items()]
    n1 = besicovitch_seminorm(sig, 1)
    result = {
        "dims": sig.dims,
        "mean": complex(mean_value(sig)),
        "terms": terms,
        "n2": besicovitch_seminorm(sig, 2).value,
        "n1": n1.value,
        "n1_residual": n1.residual,
        "projected_terms": [{"freq": list(f), "amplitude": complex(a)} for f, a in proj.items()],
        "max_freq_error": err,
    }
    return result, "pass", True


def cmd_nondegeneracy(cfg, out: Path):
    spec = _load_model(cfg["model"])
    rep = models.nondegeneracy_verdict(spec, delta=cfg["delta"], ell_schedule=cfg["ell_schedule"],
                                       threshold_low=cfg["threshold_low"],
                                       threshold_high=cfg["threshold_high"],
                                       sphere_samples=cfg["sphere_samples"], seed=cfg["seed"])
    rep.to_csv(out / "omega.csv")
    passed = cfg["expect"] is None or rep.verdict == cfg["expect"]
    return rep.to_dict(), rep.verdict, passed


def cmd_simulate(cfg, out: Path):
    spec = _load_model(cfg["model"])
    sc = _solver_config(cfg, spec)
    sig, err = _project(_load_signals(cfg, spec.dims, 1)[0], sc.grid)
    traj = run(sc, sig)
    traj.to_csv(out / "series.csv")
    if traj.fields:
        traj.write_fields(out / "fields.bin", out / "fields.json")
    stats = monotone_stats(traj) if len(traj.times) > 1 else None
    verdict = "vacuous" if stats is None else ("pass" if stats.passed else "fail")
    result = {"max_freq_error": err, "steps": traj.steps[-1], "final_time": traj.times[-1],
              "max_principle_guaranteed": traj.max_principle_guaranteed,
              "monotone_stats": None if stats is None else stats.to_dict(), "series": "series.csv"}
    passed = verdict != "fail" and (cfg["expect"] is None or verdict == cfg["expect"])
    return result, verdict, passed


def cmd_decay(cfg, out: Path):
    spec = _load_model(cfg["model"])
    sc = _solver_config(cfg, spec)
    sig, err = _project(_load_signals(cfg, spec.dims, 1)[0], sc.grid)
    rep = decay_experiment(sc, sig, cfg["grid_n"], threshold=cfg["decay_threshold"])
    rep.to_csv(out / "series.csv")
    result = dict(rep.to_dict(), max_freq_error=err, series="series.csv")
    passed = rep.monotone_violations == 0 and (cfg["expect"] is None or rep.verdict == cfg["expect"])
    return result, rep.verdict, passed


def cmd_contraction(cfg, out: Path):
    spec = _load_model(cfg["model"])
    sc = _solver_config(cfg, spec)
    a, b = (_project(s, sc.grid)[0] for s in _load_signals(cfg, spec.dims, 2))
    rep = contraction_experiment(sc, a, b)
    rep.to_csv(out / "series.csv")
    passed = rep.verdict == "pass" and (cfg["expect"] is None or rep.verdict == cfg["expect"])
    return dict(rep.to_dict(), series="series.csv"), rep.verdict, passed


def cmd_kinetic_probe(cfg, out: Path):
    spec = _load_model(cfg["model"])
    n = cfg["sphere_samples"] or 720
    tau, kappa = models.sphere_directions(spec.dims, cfg["delta"], n, cfg["seed"])
    rows, checks = [], []
    for ell in cfg["ell_schedule"]:
        block = multiplier_sweep(spec, tau, kappa, ell, int(cfg["xi_nodes"]))
        omega, _ = models.omega_delta(spec, cfg["delta"], ell, seed=cfg["seed"])
        sup_ok = bool(np.all(block[:, -2] <= (1 + 1e-12) / math.sqrt(ell)))
        int_ok = bool(np.all(block[:, -1] <= omega / ell * (1 + 1e-12)))
        checks.append({"ell": ell, "omega_delta": omega, "max_sup_m": float(block[:, -2].max()),
                       "max_int_m2": float(block[:, -1].max()), "sup_bound_ok": sup_ok,
                       "int_bound_ok": int_ok})
        rows.append(block)
    write_sweep_csv(out / "probe.csv", np.vstack(rows), spec.dims)
    ok = all(c["sup_bound_ok"] and c["int_bound_ok"] for c in checks)
    verdict = "pass" if ok else "fail"
    passed = ok and (cfg["expect"] is None or verdict == cfg["expect"])
    return {"directions": n, "checks": checks, "series": "probe.csv"}, verdict, passed


HANDLERS = {
    "spectrum": cmd_spectrum,
    "nondegeneracy": cmd_nondegeneracy,
    "simulate": cmd_simulate,
    "decay": cmd_decay,
    "contraction": cmd_contraction,
    "kinetic-probe": cmd_kinetic_probe,
}


def dispatch(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    result, verdict, passed = HANDLERS[cfg["command"]](cfg, out)
    report = {"artifact": "apdecay", "version": __version__, "command": cfg["command"],
              "seed": cfg["seed"], "config": cfg, "verdict": verdict, "passed": passed,
              "result": result}
    _write_json(out / "report.json", report)
    print(f"{cfg['command']}: {verdict} ({'pass' if passed else 'FAIL'}) -> {out / 'report.json'}")
    return 0 if passed else 1


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"apdecay: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return dispatch(cfg)
    except Exception as exc:  # noqa: BLE001  any runtime failure maps to exit code 2
        print(f"apdecay: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
