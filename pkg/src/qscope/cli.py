"""Command line entry point, config files and output tables.

Config grammar: one ``key = value`` per line, ``#`` starts a comment, blank
lines are ignored.  Values are numbers, booleans (true/false) or bare words.
Units are hbar = omega = l0 = m = 1 (box runs: hbar = m = L = 1).

Usage::

    qscope {focus,movie,scan,friedel,ensemble} [--config PATH] [--seed N]
           [--out DIR] [--format {csv,json_lines}]

Data go to files in ``--out``; stdout carries a short human-readable summary.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .scanctl import GuardError, RunConfig, ScanSchedule, evaluate_guards, manifest

__all__ = ["ConfigError", "OutputTable", "read_config", "parse_config", "emit", "main"]


class ConfigError(ValueError):
    pass


# key -> (RunConfig field or None, type)
_KEYS = {
    "regime": ("regime", str),
    "gamma": ("gamma", float),
    "kappa": ("kappa", float),
    "omega": ("omega", float),
    "sigma": ("sigma", float),
    "delta": ("delta", float),
    "phi": ("phi", float),
    "focus": ("focus", str),
    "initial": ("initial", str),
    "alpha": ("alpha", float),
    "fock_n": ("fock_n", int),
    "n_th": ("n_th", float),
    "dimension": ("dimension", int),
    "cavity_dim": ("cavity_dim", int),
    "ell_max": ("ell_max", int),
    "scheme": ("scheme", str),
    "tau": ("tau", float),
    "dt": ("dt", float),
    "trajectories": ("n_trajectories", int),
    "seed": ("seed", int),
    "record_every": ("record_every", int),
    "n_fermions": ("n_fermions", int),
    "box_length": ("box_length", float),
    "excitation_cutoff": ("excitation_cutoff", int),
    "window": ("window", int),
    "override_guards": ("override_guards", bool),
    "gammaT": (None, float),
    "tau_frac": (None, float),
    "scan.mode": (None, str),
    "scan.z0_start": (None, float),
    "scan.z0_end": (None, float),
    "scan.T": (None, float),
    "scan.n_scans": (None, int),
    "output.path": (None, str),
    "output.format": (None, str),
    # focus subcommand
    "epsilon": (None, float),
    "beta": (None, float),
    "wavelength": (None, float),
}
_SINGLE_PARTICLE_ONLY = {"alpha", "fock_n", "n_th", "dimension", "cavity_dim", "ell_max", "omega"}
_MANYBODY_ONLY = {"n_fermions", "box_length", "excitation_cutoff", "window"}


def _convert(key, raw, typ):
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if typ is int:
            val = float(raw)
            if not val.is_integer():
                raise ValueError
            return int(val)
        if typ is float:
            val = float(raw)
            if not math.isfinite(val):
                raise ConfigError(f"{key}: value {raw!r} is not finite")
            return val
        return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from None


def read_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = _convert(key, raw, _KEYS[key][1])
    return out


def build_config(values: dict, defaults: dict | None = None) -> tuple[RunConfig, dict]:
    """Turn parsed key/values into a RunConfig plus the remaining (output, focus) settings."""
    vals = dict(defaults or {})
    vals.update(values)
    kw = {}
    for key, v in vals.items():
        fld = _KEYS[key][0]
        if fld is not None:
            kw[fld] = v
    regime = kw.get("regime", "bad_cavity")
    if regime == "manybody":
        kw.setdefault("initial", "fermi_ground")
        bad = sorted(k for k in values if k in _SINGLE_PARTICLE_ONLY)
        if bad:
            raise ConfigError(f"keys {bad} do not apply to the manybody regime")
    else:
        bad = sorted(k for k in values if k in _MANYBODY_ONLY)
        if bad:
            raise ConfigError(f"keys {bad} only apply to the manybody regime")
    if kw.get("initial") == "fermi_ground" and "alpha" in values:
        raise ConfigError("alpha does not apply to the fermi_ground initial state")
    for key in ("kappa", "omega", "sigma", "box_length", "scan.T"):
        if key in vals and not vals[key] > 0:
            raise ConfigError(f"{key} must be positive (got {vals[key]})")
    for key in ("gamma", "n_th", "gammaT"):
        if key in vals and vals[key] < 0:
            raise ConfigError(f"{key} must be non-negative (got {vals[key]})")
    sched = ScanSchedule(
        vals.get("scan.mode", "fixed_point"),
        vals.get("scan.z0_start", 0.0),
        vals.get("scan.z0_end", vals.get("scan.z0_start", 0.0)),
        vals.get("scan.T", 2 * np.pi),
        vals.get("scan.n_scans", 1),
    )
    if "gammaT" in vals:
        if "gamma" in values:
            raise ConfigError("give either gamma or gammaT, not both")
        kw["gamma"] = vals["gammaT"] / sched.duration
    if "tau_frac" in vals:
        if "tau" in values:
            raise ConfigError("give either tau or tau_frac, not both")
        kw["tau"] = vals["tau_frac"] * sched.duration
    kw["schedule"] = sched
    try:
        cfg = RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    extra = {k: vals[k] for k in vals if _KEYS[k][0] is None and not k.startswith("scan.")}
    fmt = extra.get("output.format", "csv")
    if fmt not in ("csv", "json_lines"):
        raise ConfigError(f"output.format must be csv or json_lines, got {fmt!r}")
    return cfg, extra


def read_config(path, defaults: dict | None = None) -> tuple[RunConfig, dict]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return build_config(read_config_text(text, str(p)), defaults)


def parse_config(path, defaults: dict | None = None) -> RunConfig:
    """Validated RunConfig from a flat config file; guard warnings go to stderr."""
    cfg, _ = read_config(path, defaults)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            evaluate_guards(cfg)
        except GuardError as exc:
            print(f"guard: {exc}", file=sys.stderr)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return cfg


# --- output -------------------------------------------------------------------------

@dataclass
class OutputTable:
    name: str
    header: list
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.header))


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_num(x: float):
    return None if not math.isfinite(x) else float(format(x, ".17g"))


def write_table(table: OutputTable, out_dir: Path, fmt: str) -> Path:
    if fmt == "csv":
        path = out_dir / f"{table.name}.csv"
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(table.header) + "\n")
            for row in table.rows:
                fh.write(",".join(_fmt(float(v)) for v in row) + "\n")
    elif fmt == "json_lines":
        path = out_dir / f"{table.name}.jsonl"
        with open(path, "w", newline="\n") as fh:
            fh.write(json.dumps({"header": table.header}) + "\n")
            for row in table.rows:
                fh.write(json.dumps(dict(zip(table.header, (_json_num(float(v)) for v in row)))) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_table(path) -> tuple[list, np.ndarray]:
    """Inverse of :func:`write_table` for either format."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if path.suffix == ".jsonl":
        header = json.loads(lines[0])["header"]
        rows = [[np.nan if (v := json.loads(l)[h]) is None else v for h in header] for l in lines[1:]]
    else:
        header = lines[0].split(",")
        rows = [[float(v) for v in l.split(",")] for l in lines[1:]]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def emit(tables: list[OutputTable], out_dir, fmt: str = "csv", manifest_data: dict | None = None) -> list[Path]:
    """Write data tables and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    paths = [write_table(t, out, fmt) for t in tables]
    if manifest_data is not None:
        m = dict(manifest_data)
        m["files"] = [p.name for p in paths]
        mp = out / "manifest.json"
        mp.write_text(json.dumps(_clean(m), indent=2, sort_keys=True) + "\n")
        paths.append(mp)
    return paths


# --- subcommands --------------------------------------------------------------------

def _cmd_focus(args, values):
    from .focusing import LambdaConfig, dark_overlap, focus_profile, fwhm_resolution, max_nonadiabatic_potential

    eps = values.get("epsilon", args.epsilon)
    beta = values.get("beta", args.beta)
    lam = values.get("wavelength", 1.0)
    cfg = LambdaConfig(eps, beta, k1=2 * np.pi / lam)
    prof = focus_profile(cfg)
    res = fwhm_resolution(cfg)
    vna = max_nonadiabatic_potential(cfg)
    table = OutputTable("focus", ["z", "overlap", "f"], np.column_stack([prof.z, dark_overlap(cfg, prof.z), prof.f]))
    summary = {"epsilon": eps, "beta": beta, "wavelength": lam, "fwhm_analytic": res["analytic"],
               "fwhm_numeric": res["numeric"], "vna_max_recoil": vna}
    return [table], summary, {"focus": summary}


def _trajectory_tables(rec, tau):
    from .homodyne import current_table, lowpass_filter

    filt = lowpass_filter(rec.current, tau)
    header, rows = current_table(rec.current, filt)
    pops = rec.populations
    ph = ["t"] + [f"p_{n}" for n in range(pops.shape[1])] + ["energy", "purity"]
    prow = np.column_stack([rec.sample_times, pops, rec.mean_energy, rec.purity])
    jrows = np.array([[e["time"], e["from_n"], e["to_n"]] for e in rec.jump_events]).reshape(-1, 3)
    return [OutputTable("trajectory", header, rows), OutputTable("populations", ph, prow),
            OutputTable("jumps", ["time", "from_n", "to_n"], jrows)]


def _cmd_single(cfg: RunConfig):
    from .scanctl import run_trajectory

    rec = run_trajectory(cfg, 0)
    tables = _trajectory_tables(rec, cfg.filter_time)
    summary = {"regime": cfg.regime, "steps": rec.current.increments.size, "dt": rec.current.dt,
               "tau": cfg.filter_time, "jumps": len(rec.jump_events),
               "final_energy": float(rec.mean_energy[-1]), "final_purity": float(rec.purity[-1]),
               "trace_drift_max": rec.diagnostics["trace_drift_max"]}
    return tables, summary


def _cmd_ensemble(cfg: RunConfig):
    from .scanctl import run_ensemble

    res = run_ensemble(cfg)
    fs = res.filtered_stats
    cols = [res.filtered_times, fs.mean, np.sqrt(fs.variance), fs.std_error]
    header = ["t", "I_tau_mean", "I_tau_std", "I_tau_stderr"]
    if res.oracle is not None:
        cols.append(res.oracle["filtered"])
        header.append("I_tau_oracle")
    es = res.energy_stats
    tables = [
        OutputTable("ensemble", header, np.column_stack(cols)),
        OutputTable("energy", ["t", "energy_mean", "energy_stderr"], np.column_stack([res.sample_times, es.mean, es.std_error])),
        OutputTable("summaries", ["stream_id", "n_jumps", "final_energy", "final_purity"],
                    np.array([[s["stream_id"], s["n_jumps"], s["final_energy"], s["final_purity"]] for s in res.summaries])),
    ]
    summary = {"regime": cfg.regime, "trajectories": fs.n_traj, "tau": res.tau,
               "peak_mean_I_tau": float(fs.mean.max())}
    return tables, summary


def _cmd_friedel(cfg: RunConfig):
    from .scanctl import run_friedel

    res = run_friedel(cfg)
    tables = [OutputTable("friedel", ["z0", "I_tau", "theory_n", "ensemble_mean", "ensemble_std"],
                          np.column_stack([res.z0, res.single, res.theory, res.mean, res.std]))]
    summary = {"trajectories": res.n_trajectories, "band_coverage": res.coverage,
               "period_fit_over_pi_kF": res.period_fit / res.period_theory,
               "excited_probability_max": res.excited_max}
    return tables, summary


_DEFAULTS = {
    "movie": {"regime": "bad_cavity", "scan.mode": "fixed_point", "initial": "coherent"},
    "scan": {"regime": "good_cavity", "scan.mode": "linear_scan", "scan.z0_start": -5.0,
             "scan.z0_end": 5.0, "initial": "thermal", "kappa": 0.1},
    "ensemble": {},
    "friedel": {"regime": "manybody", "scan.mode": "linear_scan", "scan.z0_start": -0.5,
                "scan.z0_end": 0.5, "scan.T": 1.0, "sigma": 0.01, "kappa": 4 * np.pi**2,
                "gammaT": 400.0, "tau_frac": 0.01, "trajectories": 50},
    "focus": {},
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qscope", description="Cavity microscope simulations")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in [("focus", "dark-state focusing profile and resolution"),
                      ("movie", "fixed focal point, time-resolved signal"),
                      ("scan", "spatial scan of a single trajectory"),
                      ("friedel", "scan of Friedel oscillations"),
                      ("ensemble", "trajectory ensemble with master-equation oracle")]:
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path("qscope_out"))
        p.add_argument("--format", choices=("csv", "json_lines"))
        if name == "focus":
            p.add_argument("--epsilon", type=float, default=0.1)
            p.add_argument("--beta", type=float, default=0.5)
        if name == "friedel":
            p.add_argument("--n-fermions", type=int)
            p.add_argument("--box-length", type=float)
            p.add_argument("--sigma", type=float)
            p.add_argument("--kappa", type=float)
            p.add_argument("--gammaT", type=float)
            p.add_argument("--tau-frac", type=float)
            p.add_argument("--trajectories", type=int)
    return ap


def _error(out_dir, exc, code=2):
    rec = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(rec), file=sys.stderr)
    try:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "error.json").write_text(json.dumps(rec) + "\n")
    except OSError:
        pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    try:
        values = read_config_text(args.config.read_text(), str(args.config)) if args.config else {}
        if cmd == "friedel":
            for flag, key in [("n_fermions", "n_fermions"), ("box_length", "box_length"), ("sigma", "sigma"),
                              ("kappa", "kappa"), ("gammaT", "gammaT"), ("tau_frac", "tau_frac"),
                              ("trajectories", "trajectories")]:
                v = getattr(args, flag)
                if v is not None:
                    values[key] = v
            if "box_length" in values:
                Lb = values["box_length"]
                values.setdefault("scan.z0_start", -Lb / 2)
                values.setdefault("scan.z0_end", Lb / 2)
        if args.seed is not None:
            values["seed"] = args.seed
        if cmd == "focus":
            cfg = None
            extra = {k: v for k, v in values.items() if _KEYS[k][0] is None}
            tables, summary, man = _cmd_focus(args, values)
        else:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                cfg, extra = build_config(values, _DEFAULTS[cmd])
                guards = evaluate_guards(cfg)
                if cmd in ("movie", "scan"):
                    tables, summary = _cmd_single(cfg)
                elif cmd == "ensemble":
                    tables, summary = _cmd_ensemble(cfg)
                else:
                    tables, summary = _cmd_friedel(cfg)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            man = manifest(cfg, guards, {"command": cmd, "summary": summary})
        fmt = args.format or extra.get("output.format", "csv")
        out = args.out if args.out is not None else Path(extra.get("output.path", "qscope_out"))
        if args.config and "output.path" in extra and args.out == Path("qscope_out"):
            out = Path(extra["output.path"])
        if cmd == "focus":
            man = {"code_version": __version__, "command": cmd, **man}
        paths = emit(tables, out, fmt, man)
    except (ConfigError, GuardError, OSError, ValueError, RuntimeError) as exc:
        return _error(args.out, exc)
    print(f"qscope {cmd}: wrote {len(paths)} files to {out}")
    for k, v in summary.items():
        print(f"  {k}: {v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
