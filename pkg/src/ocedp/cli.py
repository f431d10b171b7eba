"""ocedp command line.

Every failure prints one line ``ERR_<KIND>: message`` on stderr and exits
with 2 (usage), 3 (config), 4 (I/O) or 5 (numerical).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import baselines as BL
from . import evaluation as EV
from . import tracker as TR
from .core import (OCBError, read_bscan, read_displacement_csv, read_displacement_grid,
                   write_bscan, write_displacement_csv, write_displacement_grid)
from .simulator import (ConfigError, DeformationProfile, SimConfig, build_phantom,
                        deform_phantom, synthesize_bscan, write_phantom_csv)

log = logging.getLogger("ocedp")

EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4, 5
CONFIG_SECTIONS = ("sim", "dp", "baselines", "deformation", "sweep")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ----------------------------------------------------------------- config

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(d, dict):
        raise ConfigError("config", "top level must be an object")
    for k in d:
        if k not in CONFIG_SECTIONS:
            raise ConfigError(k, f"unknown config section; valid: {', '.join(CONFIG_SECTIONS)}")
    return d


def sim_config(conf: dict, seed=None) -> SimConfig:
    d = dict(conf.get("sim", {}))
    if seed is not None:
        d["seed"] = seed
    return SimConfig.from_dict(d)


def dp_config(conf: dict) -> TR.DPConfig:
    return TR.DPConfig.from_dict(conf.get("dp", {}))


def bl_config(conf: dict) -> BL.BaselineConfig:
    return BL.BaselineConfig.from_dict(conf.get("baselines", {}))


# --------------------------------------------------------------- manifest

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, sub: str, argv: list[str], conf: dict, inputs: dict,
                   outputs: list[Path], seed, elapsed: float) -> Path:
    man = {
        "subcommand": sub,
        "argv": argv,
        "config": conf,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {p.name: _sha256(p) for p in outputs},
        "seed": seed,
        "version": _version(),
        "wall_time_s": round(elapsed, 3),
    }
    p = out / f"manifest_{sub}.json"
    p.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return p


def _resolved_conf(conf: dict, **objs) -> dict:
    snap = dict(conf)
    for k, v in objs.items():
        if v is not None:
            snap[k] = v.to_dict()
    return snap


# ------------------------------------------------------------ subcommands

def cmd_simulate(a, argv) -> list[Path]:
    conf = load_config(a.config)
    cfg = sim_config(conf, a.seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    fld = build_phantom(cfg)
    I1 = synthesize_bscan(fld, cfg, stream=0, jobs=a.jobs)
    files = [out / "reference.ocb", out / "phantom.csv"]
    write_bscan(I1, files[0])
    write_phantom_csv(fld, files[1])
    if "deformation" in conf:
        prof = DeformationProfile.from_dict(conf["deformation"], cfg.phantom_depth)
        fd = deform_phantom(fld, prof, cfg.phantom_depth)
        I2 = synthesize_bscan(fd, cfg, stream=1, jobs=a.jobs)
        files.append(out / "deformed.ocb")
        write_bscan(I2, files[-1])
        if fd.dropped:
            log.info("%d scatterers left the imaged range", fd.dropped)
    snap = _resolved_conf(conf, sim=cfg)
    write_manifest(out, "simulate", argv, snap, {}, files, cfg.seed, time.perf_counter() - t0)
    return files


def cmd_track(a, argv) -> list[Path]:
    conf = load_config(a.config)
    method = a.method
    if method not in EV.METHOD_NAMES:
        raise UsageError(f"unknown method {method!r}; valid methods: {', '.join(EV.METHOD_NAMES)}")
    dcfg = dp_config(conf)
    bcfg = bl_config(conf)
    I1 = read_bscan(a.ref)
    I2 = read_bscan(getattr(a, "def"))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    fld = EV.run_method(method, I1, I2, dcfg, bcfg, a.jobs)
    elapsed = time.perf_counter() - t0
    log.info("%s tracking took %.2f s", method, elapsed)
    print(f"{method}: {I1.m}x{I1.n} tracked in {elapsed:.2f} s", file=sys.stderr)
    if a.format == "bin":
        p = out / f"displacement_{method}.odf"
        write_displacement_grid(fld, p, I1.wavelength)
    else:
        p = out / f"displacement_{method}.csv"
        write_displacement_csv(fld, p)
    snap = _resolved_conf(conf, dp=dcfg if method == "dp" else None,
                          baselines=bcfg if method != "dp" else None)
    write_manifest(out, "track", argv, snap, {"ref": a.ref, "def": getattr(a, "def")},
                   [p], None, elapsed)
    return [p]


def cmd_strain(a, argv) -> list[Path]:
    src = Path(a.disp)
    if src.suffix == ".odf":
        fld = read_displacement_grid(src)
    else:
        if a.ref is None:
            raise UsageError("--ref is required to read pitches for CSV displacement input")
        sc = read_bscan(a.ref)
        fld = read_displacement_csv(src, sc.axial_pitch, sc.lateral_pitch, sc.refractive_index)
    if not a.window > 0:
        raise ConfigError("window", "must be > 0")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    st = EV.strain(fld, a.window)
    p = out / (src.stem + "_strain.csv")
    m, n = st.strain.shape
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "strain", "valid"])
        for i in range(m):
            for j in range(n):
                w.writerow([i, j, repr(float(st.strain[i, j])), int(st.valid[i, j])])
    write_manifest(out, "strain", argv, {"window_um": a.window}, {"disp": a.disp, "ref": a.ref},
                   [p], None, time.perf_counter() - t0)
    return [p]


def _sweep_settings(conf: dict, a):
    sw = dict(conf.get("sweep", {}))
    known = {"amplitudes", "methods", "strain_window", "snr_band"}
    for k in sw:
        if k not in known:
            raise ConfigError(k, "unknown sweep field")
    amps = [float(x) for x in sw.get("amplitudes", EV.SWEEP_AMPLITUDES)]
    if not amps:
        raise ConfigError("amplitudes", "must not be empty")
    if any(not (0 <= x <= 0.4) for x in amps):
        raise ConfigError("amplitudes", "must lie in [0, 0.4]")
    methods = list(sw.get("methods", EV.METHOD_NAMES))
    if a.method:
        methods = [m for chunk in a.method for m in chunk.split(",") if m]
        if not methods:
            raise UsageError("empty method list")
    if not methods:
        raise UsageError("empty method list")
    for m in methods:
        if m not in EV.METHOD_NAMES:
            raise UsageError(f"unknown method {m!r}; valid methods: {', '.join(EV.METHOD_NAMES)}")
    window = float(sw.get("strain_window", 48.0))
    band = tuple(float(x) for x in sw.get("snr_band", (600.0, 800.0)))
    if not window > 0:
        raise ConfigError("strain_window", "must be > 0")
    if len(band) != 2 or not band[0] < band[1]:
        raise ConfigError("snr_band", "must be [low, high] with low < high")
    return amps, methods, window, band


def cmd_sweep(a, argv) -> list[Path]:
    from . import plotting

    conf = load_config(a.config)
    cfg = sim_config(conf, a.seed)
    dcfg = dp_config(conf)
    bcfg = bl_config(conf)
    amps, methods, window, band = _sweep_settings(conf, a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rep = EV.sweep(cfg, amps, methods, dcfg, bcfg, window, band, jobs=a.jobs or 1)
    if all(r.status.startswith("error") for r in rep.rows):
        raise FloatingPointError("every method failed; see log")
    files = [out / "report.csv", out / "report.json"]
    files[0].write_text(rep.to_csv())
    files[1].write_text(rep.to_json())
    p = out / "nmae_displacement.svg"
    plotting.plot_nmae(rep, p, "disp")
    files.append(p)
    p = out / "nmae_strain.svg"
    plotting.plot_nmae(rep, p, "strain")
    files.append(p)
    p = out / "truth_profiles.svg"
    plotting.plot_truth_profiles([(x, EV.amplitude_profile(x, cfg.phantom_depth)) for x in amps],
                                 cfg.phantom_depth, p, cfg.depth_px)
    files.append(p)
    # wall-clock numbers stay out of the deterministic report
    tp = out / "timings.csv"
    with open(tp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "amplitude", "seconds"])
        for (m, x), s in sorted(rep.timings.items()):
            w.writerow([m, repr(x), f"{s:.3f}"])
    snap = _resolved_conf(conf, sim=cfg, dp=dcfg, baselines=bcfg)
    snap["sweep"] = {"amplitudes": amps, "methods": methods, "strain_window": window,
                     "snr_band": list(band)}
    write_manifest(out, "sweep", argv, snap, {}, files, cfg.seed, time.perf_counter() - t0)
    return files + [tp]


def cmd_demo_fig1(a, argv) -> list[Path]:
    from .demos import demo_fig1

    conf = load_config(a.config)
    cfg = sim_config(conf, a.seed)
    out = Path(a.out)
    t0 = time.perf_counter()
    files = demo_fig1(out, cfg)
    write_manifest(out, "demo-fig1", argv, _resolved_conf(conf, sim=cfg), {}, files, cfg.seed,
                   time.perf_counter() - t0)
    return files


def cmd_rerun(a, argv) -> list[Path]:
    try:
        man = json.loads(Path(a.manifest).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("manifest", f"invalid JSON: {exc.msg}") from exc
    old = list(man["argv"])
    if a.out:
        if "--out" not in old:
            raise UsageError("manifest run has no --out to redirect")
        old[old.index("--out") + 1] = a.out
    if old and old[0] == "rerun":
        raise UsageError("refusing to rerun a rerun manifest")
    code = main(old)
    if code:
        raise SystemExit(code)
    out = Path(a.out) if a.out else Path(old[old.index("--out") + 1])
    fresh = json.loads((out / f"manifest_{man['subcommand']}.json").read_text())
    diff = [k for k, h in man["outputs"].items() if fresh["outputs"].get(k) != h]
    if diff:
        print(f"ERR_NUMERIC: rerun outputs differ: {', '.join(sorted(diff))}", file=sys.stderr)
        raise SystemExit(EXIT_NUMERIC)
    print(f"rerun reproduced {len(man['outputs'])} output(s) bit-exactly", file=sys.stderr)
    return []


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ocedp", description="OCT displacement tracking toolkit")
    p.add_argument("--version", action="version", version=_version())
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON config with sections " + ", ".join(CONFIG_SECTIONS))
        sp.add_argument("--seed", type=int, help="override sim.seed")
        sp.add_argument("--jobs", type=int, default=None, help="worker cap")
        sp.add_argument("--out", required=out_required, help="output directory")

    s = sub.add_parser("simulate", help="simulate a reference (and optional deformed) B-scan")
    common(s)
    s = sub.add_parser("track", help="estimate displacement between two B-scans")
    common(s)
    s.add_argument("--method", required=True, help="dp | kasai | cc | vp | ccvp")
    s.add_argument("--ref", required=True)
    s.add_argument("--def", required=True)
    s.add_argument("--format", choices=("csv", "bin"), default="csv")
    s = sub.add_parser("strain", help="axial strain from a displacement file")
    s.add_argument("--disp", required=True)
    s.add_argument("--ref", help="B-scan supplying pitches for CSV input")
    s.add_argument("--window", type=float, default=48.0)
    s.add_argument("--out", required=True)
    s = sub.add_parser("sweep", help="layered-phantom amplitude sweep")
    common(s)
    s.add_argument("--method", action="append", help="method(s); repeat or comma-separate")
    s = sub.add_parser("demo-fig1", help="two-scatterer and phase-shift demonstration")
    common(s)
    s = sub.add_parser("rerun", help="re-execute a manifest and verify outputs")
    s.add_argument("manifest")
    s.add_argument("--out")
    return p


COMMANDS = {"simulate": cmd_simulate, "track": cmd_track, "strain": cmd_strain,
            "sweep": cmd_sweep, "demo-fig1": cmd_demo_fig1, "rerun": cmd_rerun}


def _setup_logging():
    level = os.environ.get("OCE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    try:
        a = build_parser().parse_args(argv)
        if a.cmd is None:
            raise UsageError("missing subcommand; choose one of " + ", ".join(COMMANDS))
        if getattr(a, "jobs", None) is not None and a.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        COMMANDS[a.cmd](a, argv)
        return 0
    except UsageError as exc:
        print(f"ERR_USAGE: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"ERR_CONFIG: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, OCBError) as exc:
        print(f"ERR_IO: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"ERR_NUMERIC: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"ERR_NUMERIC: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
