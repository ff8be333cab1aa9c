"""Command-line entry points: simulate, dn-check, symbols-verify, scatter-diag.

Exit codes: 0 pass, 1 check failure, 2 usage or config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import math
import os
import re
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dirichlet_neumann import WaveState, ZConfig, dn_fixed_point, dn_taylor3
from .elliptic_oracle import StripProblem, oracle_G
from .evolution import BlowUpError, LocalizationError, SolverConfig, run
from .experiments import band_limited_packet, packet_study, standing_wave
from .runio import (
    CsvWriter,
    StateWriter,
    read_csv,
    read_states,
    sha256_bytes,
    truncate_states,
    write_csv,
    write_json_atomic,
)
from .spectral_core import Grid

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _bool(s):
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {s!r}") from None


def _floats(s):
    return [float(v) for v in s.replace(",", " ").split()]


def _ints(s):
    return [int(v) for v in s.replace(",", " ").split()]


SCHEMA = {
    "grid": {"n_points": (int, 256), "length": (float, 2 * math.pi)},
    "time": {
        "dt": (float, 0.1),
        "t_final": (float, 1.0),
        "output_stride": (int, 1),
        "integrating_factor": (_bool, True),
        "nonlinear": (_bool, True),
        "krasny_floor": (float, 1e-13),
        "localized": (_bool, False),
    },
    "dn": {
        "method": (str, "taylor3"),
        "z_max": (float, 8.0),
        "nz": (int, 256),
        "stretch": (float, 88.0),
    },
    "diagnostics": {
        "enabled": (_bool, True),
        "energy": (_bool, True),
        "normal_form": (_bool, True),
        "scaling": (_bool, False),
        "variant": (str, "complete"),
        "monitor": (_floats, []),
        "p0": (float, 1e-3),
        "support_tol": (float, 0.0),
        "hamiltonian_tol": (float, 1e-6),
        "mass_tol": (float, 1e-10),
        "check_conservation": (_bool, False),
    },
    "experiment": {
        "initial": (str, "flat"),
        "amplitude": (float, 0.0),
        "center": (float, 2.25),
        "width": (float, 0.5),
        "eps": (_floats, [1e-2, 5e-3, 2.5e-3]),
        "fixed_tol": (float, 1e-6),
        "slope_target": (float, 4.0),
        "slope_tol": (float, 0.3),
        "samples": (int, 10000),
        "residual_tol": (float, 1e-12),
        "phase_samples": (int, 20000),
        "bound_samples": (int, 12),
        "stability_tol": (float, 0.2),
        "window_start": (float, 5.0),
        "window_end": (float, 80.0),
        "decay_tol": (float, 0.1),
        "linear_decay_tol": (float, 0.05),
        "scatter_start": (float, 100.0),
        "modulus_tol": (float, 0.05),
        "gain": (float, 3.0),
        "sample_every": (int, 10),
    },
}


@dataclass
class RunConfig:
    raw: bytes
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def digest(self) -> str:
        return sha256_bytes(self.raw)

    def solver(self) -> SolverConfig:
        g, t, d = self["grid"], self["time"], self["dn"]
        return SolverConfig(
            n_points=g["n_points"], length=g["length"], dt=t["dt"], t_final=t["t_final"],
            dn_method=d["method"], krasny_floor=t["krasny_floor"], output_stride=t["output_stride"],
            integrating_factor=t["integrating_factor"], nonlinear=t["nonlinear"], localized=t["localized"],
            zcfg=ZConfig(z_max=d["z_max"], nz=d["nz"], stretch=d["stretch"]),
        )

    def initial_state(self, grid: Grid) -> WaveState:
        e = self["experiment"]
        kind = e["initial"]
        if kind == "flat":
            return WaveState.zero(grid)
        if kind == "standing":
            return standing_wave(grid, e["amplitude"])
        if kind == "packet":
            if e["amplitude"] == 0:
                return WaveState.zero(grid)
            return band_limited_packet(grid, e["amplitude"], e["center"], e["width"])
        raise ConfigError(f"[experiment] initial: unknown kind {kind!r} (flat, standing, packet)")


def _key_line(text: str, section: str, key: str):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            cur = m.group(1).strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    text = raw.decode("utf-8")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        values[sec] = {k: default for k, (_, default) in keys.items()}
        if not cp.has_section(sec):
            continue
        for key, val in cp.items(sec):
            line = _key_line(text, sec, key)
            where = f"{path}:{line}" if line else str(path)
            if key not in keys:
                raise ConfigError(f"{where}: unknown key {key!r} in [{sec}]")
            conv = keys[key][0]
            try:
                values[sec][key] = conv(val)
            except ValueError as exc:
                raise ConfigError(f"{where}: [{sec}] {key}: {exc}") from exc
    cfg = RunConfig(raw, values)
    try:
        cfg.solver()
    except ValueError as exc:
        msg = str(exc)
        key = msg.split()[0] if msg.split() else ""
        sec = next((s for s, ks in SCHEMA.items() if key in ks), None)
        line = _key_line(text, sec, key) if sec else None
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {msg}") from exc
    if values["diagnostics"]["variant"] not in ("bare", "complete"):
        raise ConfigError(f"{path}: [diagnostics] variant must be bare or complete")
    return cfg


# ------------------------------------------------------------------ helpers


def _out_dir(args) -> str:
    out = os.environ.get("GRAVLAB_OUT") or args.out or "gravlab_out"
    os.makedirs(out, exist_ok=True)
    return out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _manifest(out, cfg: RunConfig, command, started, outputs, checks, extra=None):
    m = {
        "command": command,
        "config_sha256": cfg.digest,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": sorted(outputs),
        "checks": checks,
    }
    if extra:
        m.update(extra)
    write_json_atomic(os.path.join(out, "manifest.json"), m)


def _status(checks) -> int:
    return EXIT_OK if all(c["pass"] for c in checks.values()) else EXIT_CHECK


def _check(value, ok, **info):
    return {"value": value, "pass": bool(ok), **info}


def _slopes(eps, gaps):
    return [math.log2(gaps[i] / gaps[i + 1]) / math.log2(eps[i] / eps[i + 1]) for i in range(len(eps) - 1)]


# ------------------------------------------------------------------ simulate


def cmd_simulate(args, cfg: RunConfig) -> int:
    from .diagnostics import Diagnostics, DiagnosticsRecord, NormParams
    from .transforms import SymbolTable

    started = _now()
    out = _out_dir(args)
    scfg = cfg.solver()
    grid = scfg.grid
    d = cfg["diagnostics"]
    states_path = os.path.join(out, "states.bin")
    csv_path = os.path.join(out, "diagnostics.csv")
    diag = None
    if d["enabled"]:
        monitor = [int(round(x / grid.dxi)) for x in d["monitor"]]
        diag = Diagnostics(grid, NormParams(p0=d["p0"]), SymbolTable(d["variant"]), monitor,
                           normal_form=d["normal_form"], energy=d["energy"], scaling=d["scaling"],
                           dn_method=scfg.dn_method, support_tol=d["support_tol"])
    columns = ["t"] + (diag.columns if diag else [])

    start_step = 0
    initial = cfg.initial_state(grid)
    resume = args.resume and os.path.exists(states_path)
    first = {}
    if resume:
        initial, start_step, row0 = _prepare_resume(states_path, csv_path, columns, scfg, diag)
        if diag:
            first["rec"] = DiagnosticsRecord(row0["t"], row0)
    sw = StateWriter(states_path, append=resume)
    cw = CsvWriter(csv_path, columns, append=resume)

    def callback(k, s):
        if resume and k == start_step:
            return None
        sw.write(s)
        if diag:
            rec = diag.record(s)
            cw.write(rec.row(diag.columns))
            first.setdefault("rec", rec)
            first["last"] = rec
        else:
            cw.write([s.t])
        return None

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            run(scfg, initial, callback=callback, start_step=start_step, keep_states=False)
    except (BlowUpError, LocalizationError) as exc:
        last = exc.last_good.t if exc.last_good is not None else float("nan")
        print(f"simulation failed: {exc} (last good t={last:.6g})", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        sw.close()
        cw.close()

    checks = {}
    if diag and d["check_conservation"] and "rec" in first and "last" in first:
        h0, h1 = first["rec"].values["hamiltonian"], first["last"].values["hamiltonian"]
        m0, m1 = first["rec"].values["mass"], first["last"].values["mass"]
        hd = abs(h1 - h0) / abs(h0) if h0 else abs(h1 - h0)
        checks["hamiltonian_drift"] = _check(hd, hd <= d["hamiltonian_tol"], tol=d["hamiltonian_tol"])
        checks["mass_drift"] = _check(abs(m1 - m0), abs(m1 - m0) <= d["mass_tol"], tol=d["mass_tol"])
    _manifest(out, cfg, "simulate", started, ["states.bin", "diagnostics.csv", "manifest.json"], checks,
              {"resumed_from_step": start_step})
    return _status(checks)


def _prepare_resume(states_path, csv_path, columns, scfg, diag):
    states = read_states(states_path)
    if not states:
        raise ConfigError("nothing to resume: states.bin holds no complete record")
    header, rows = read_csv(csv_path) if os.path.exists(csv_path) else (columns, [])
    if header != columns:
        raise ConfigError("diagnostics.csv columns do not match the config")
    keep = min(len(states), len(rows))
    if keep == 0:
        raise ConfigError("nothing to resume: no snapshot has a diagnostics row")
    truncate_states(states_path, keep)
    write_csv(csv_path, columns, [[float(v) for v in r] for r in rows[:keep]])
    last = states[keep - 1]
    t0 = states[0].t
    start_step = int(round((last.t - t0) / scfg.dt))
    if diag:
        diag.restore(dict(zip(columns, (float(v) for v in rows[keep - 1]))))
    return last, start_step, dict(zip(columns, (float(v) for v in rows[0])))


# ------------------------------------------------------------------ dn-check


def _dn_point(cfg: RunConfig, eps: float):
    g = cfg["grid"]
    d = cfg["dn"]
    grid = Grid(g["n_points"], g["length"])
    # both h and psi carry eps, so the Taylor truncation error is O(eps^4)
    st = WaveState.from_functions(grid, lambda x: eps * np.cos(2 * x), lambda x: eps * np.sin(x))
    ref = oracle_G(StripProblem(st, z_max=d["z_max"], nz=d["nz"], stretch=d["stretch"]))
    gt = dn_taylor3(st, with_coefficient=False).G_psi
    zc = ZConfig(z_max=d["z_max"], nz=d["nz"], stretch=d["stretch"])
    gf = dn_fixed_point(st, zc, with_coefficient=False)[1].G_psi
    # absolute gap for the scaling study, relative gap for the agreement check
    return eps, (gt - ref).norm(), (gf - ref).norm() / ref.norm()


def cmd_dn_check(args, cfg: RunConfig) -> int:
    started = _now()
    out = _out_dir(args)
    e = cfg["experiment"]
    eps = sorted(e["eps"], reverse=True)
    if len(eps) < 2:
        raise ConfigError("[experiment] eps needs at least two values")
    try:
        with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
            pts = list(ex.map(lambda v: _dn_point(cfg, v), eps))
    except Exception as exc:
        print(f"dn-check failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    gt = [p[1] for p in pts]
    gf = [p[2] for p in pts]
    st_ = _slopes(eps, gt)
    sf = _slopes(eps, gf)
    rows = []
    for i, (ep, a, b) in enumerate(pts):
        rows.append([ep, a, b, st_[i - 1] if i else float("nan"), sf[i - 1] if i else float("nan")])
    write_csv(os.path.join(out, "dn_check.csv"),
              ["eps", "gap_taylor_oracle", "gap_fixed_oracle", "slope_taylor", "slope_fixed"], rows)
    checks = {
        "taylor_slope": _check(st_, all(abs(s - e["slope_target"]) <= e["slope_tol"] for s in st_),
                               target=e["slope_target"], tol=e["slope_tol"]),
        "fixed_point_agreement": _check(gf[0], gf[0] <= e["fixed_tol"], tol=e["fixed_tol"], eps=eps[0]),
    }
    _manifest(out, cfg, "dn-check", started, ["dn_check.csv", "manifest.json"], checks)
    return _status(checks)


# ------------------------------------------------------------ symbols-verify


def symbol_residual_check(samples: int, seed: int, variant: str = "bare", k_range=(-10, 10)):
    """Max relative residual of the normal-form system at random admissible points."""
    from .transforms import SymbolTable

    rng = np.random.default_rng(seed)
    st = SymbolTable(variant)
    z = np.empty(0)
    e = np.empty(0)
    while z.size < samples:
        m = 2 * samples
        zz = rng.choice([-1.0, 1.0], m) * 2.0 ** rng.uniform(*k_range, m)
        ee = rng.choice([-1.0, 1.0], m) * 2.0 ** rng.uniform(*k_range, m)
        ok = ~st.excluded(zz, ee) & ~st.excluded(ee, zz)
        z = np.concatenate([z, zz[ok]])
        e = np.concatenate([e, ee[ok]])
    z, e = z[:samples], e[:samples]
    r1, r2, r3, scale = st.residuals(z, e)
    return float(np.max(np.maximum.reduce([np.abs(r1), np.abs(r2), np.abs(r3)]) / scale))


def _stable(a: dict, b: dict, tol: float):
    out = {}
    for k in a:
        if not isinstance(a[k], float) or k in ("samples", "pairs"):
            continue
        rel = abs(b[k] - a[k]) / abs(a[k]) if a[k] else (0.0 if b[k] == 0 else math.inf)
        # phase minima must also stay strictly positive
        ok = rel <= tol and (a[k] > 0 or not k.startswith("phase"))
        out[k] = (a[k], b[k], rel, ok)
    return out


def cmd_symbols_verify(args, cfg: RunConfig) -> int:
    from .transforms import SymbolTable, phase_bound_check, symbol_bound_constants

    started = _now()
    out = _out_dir(args)
    e = cfg["experiment"]
    variant = cfg["diagnostics"]["variant"]
    seed = args.seed
    tol = e["stability_tol"]
    jobs = {
        "residual": lambda: symbol_residual_check(e["samples"], seed, variant),
        "bounds_1": lambda: symbol_bound_constants(SymbolTable(variant), e["bound_samples"]).as_dict(),
        "bounds_2": lambda: symbol_bound_constants(SymbolTable(variant), 2 * e["bound_samples"]).as_dict(),
        "phase_1": lambda: phase_bound_check(e["phase_samples"], seed).as_dict(),
        "phase_4": lambda: phase_bound_check(4 * e["phase_samples"], seed + 1).as_dict(),
    }
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
        fut = {k: ex.submit(f) for k, f in jobs.items()}
        res = {k: f.result() for k, f in fut.items()}
    stab = {**_stable(res["bounds_1"], res["bounds_2"], tol), **_stable(res["phase_1"], res["phase_4"], tol)}
    rows = [[k, v[0], v[1], v[2], int(v[3])] for k, v in stab.items()]
    rows.insert(0, ["residual_1100", res["residual"], res["residual"], 0.0,
                    int(res["residual"] <= e["residual_tol"])])
    _write_named(os.path.join(out, "symbol_constants.csv"), rows)
    checks = {"residual_1100": _check(res["residual"], res["residual"] <= e["residual_tol"], tol=e["residual_tol"])}
    for k, v in stab.items():
        checks[f"stable_{k}"] = _check([v[0], v[1]], v[3], rel_change=v[2], tol=tol)
    _manifest(out, cfg, "symbols-verify", started, ["symbol_constants.csv", "manifest.json"], checks,
              {"seed": seed})
    return _status(checks)


def _write_named(path, rows):
    with open(path, "w") as fh:
        fh.write("quantity,coarse,fine,rel_change,pass\n")
        for r in rows:
            fh.write(",".join([r[0]] + [f"{float(v):.17g}" for v in r[1:4]] + [str(r[4])]) + "\n")


# -------------------------------------------------------------- scatter-diag


def cmd_scatter_diag(args, cfg: RunConfig) -> int:
    from .diagnostics import decay_fit_series, dyadic_variation

    started = _now()
    out = _out_dir(args)
    e = cfg["experiment"]
    scfg = cfg.solver()
    grid = scfg.grid
    initial = cfg.initial_state(grid)
    monitor = [int(round(x / grid.dxi)) for x in cfg["diagnostics"]["monitor"]]
    if not np.any(initial.h.coeffs) and not np.any(initial.psi.coeffs):
        write_json_atomic(os.path.join(out, "report.json"), {"empty": True})
        _manifest(out, cfg, "scatter-diag", started, ["report.json", "manifest.json"], {})
        return EXIT_OK
    if not monitor:
        raise ConfigError("[diagnostics] monitor must list at least one frequency")
    variant = cfg["diagnostics"]["variant"]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            runs = {
                "nonlinear": packet_study(scfg, initial, monitor, e["sample_every"], variant),
                "linear": packet_study(SolverConfig(**{**scfg.__dict__, "nonlinear": False}), initial, monitor,
                                       e["sample_every"], variant),
            }
    except (BlowUpError, LocalizationError) as exc:
        print(f"scatter-diag failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report = {"monitor_xi": [m * grid.dxi for m in monitor]}
    checks = {}
    win = (e["window_start"], e["window_end"])
    for name, r in runs.items():
        cols = ["t", "sup"]
        rows = []
        for i, t in enumerate(r["t"]):
            row = [t, r["sup"][i]]
            for j in range(len(monitor)):
                row += [abs(r["fhat"][i, j]), r["G"][i, j], r["g"][i, j].real, r["g"][i, j].imag]
            rows.append(row)
        for m in monitor:
            cols += [f"fhat_abs_{m}", f"G_{m}", f"g_re_{m}", f"g_im_{m}"]
        write_csv(os.path.join(out, f"plot_{name}.csv"), cols, rows)
        fit = decay_fit_series(r["t"], r["sup"], win)
        report[f"decay_{name}"] = {"exponent": fit.exponent, "stderr": fit.stderr, "window": list(win)}
        tol = e["decay_tol"] if name == "nonlinear" else e["linear_decay_tol"]
        checks[f"decay_{name}"] = _check(fit.exponent, abs(fit.exponent + 0.5) <= tol, target=-0.5, tol=tol)
    r = runs["nonlinear"]
    t1 = e["scatter_start"]
    if r["t"][-1] >= 2 * t1 * (1 - 1e-9):
        sel = (r["t"] >= t1) & (r["t"] <= 2 * t1 + 1e-9)
        fa = np.abs(r["fhat"][sel])
        modv = ((fa.max(0) - fa.min(0)) / fa.mean(0)).tolist()
        vf = dyadic_variation(r["t"], r["fhat"], t1)
        vg = dyadic_variation(r["t"], r["g"], t1)
        report["scattering"] = {"modulus_variation": modv, "variation_fhat": vf, "variation_g": vg}
        checks["modulus_variation"] = _check(max(modv), max(modv) <= e["modulus_tol"], tol=e["modulus_tol"])
        checks["modified_gain"] = _check(vf / vg if vg else math.inf, vf >= e["gain"] * vg, target=e["gain"])
    report["stride_variation"] = r["worst_stride_variation"]
    write_json_atomic(os.path.join(out, "report.json"), report)
    _manifest(out, cfg, "scatter-diag", started,
              ["report.json", "plot_nonlinear.csv", "plot_linear.csv", "manifest.json"], checks)
    return _status(checks)


# ---------------------------------------------------------------------- main

COMMANDS = {
    "simulate": cmd_simulate,
    "dn-check": cmd_dn_check,
    "symbols-verify": cmd_symbols_verify,
    "scatter-diag": cmd_scatter_diag,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gravlab", description="Gravity water-wave numerics on the torus.")
    p.add_argument("--version", action="version", version=f"gravlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="INI-style run configuration")
        s.add_argument("--out", default=None, help="output directory (GRAVLAB_OUT overrides)")
        s.add_argument("--seed", type=int, default=0, help="seed for sampling operations")
        s.add_argument("--threads", type=int, default=1, help="worker threads for independent points")
        if name == "simulate":
            s.add_argument("--resume", action="store_true", help="continue from the last snapshot")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
