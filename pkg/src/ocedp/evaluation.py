"""Strain estimation, error metrics and the layered-phantom amplitude sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from . import baselines as BL
from . import tracker as TR
from .core import DisplacementField, StrainField
from .simulator import (SimConfig, build_phantom, deform_phantom,
                        layered_profile, synthesize_bscan)

log = logging.getLogger(__name__)

SWEEP_AMPLITUDES = (2e-5, 4.31e-5, 9.28e-5, 2e-4, 4.31e-4, 9.28e-4,
                    2e-3, 4.31e-3, 9.28e-3, 2e-2, 4.31e-2, 9.28e-2)
METHOD_NAMES = ("dp", "kasai", "cc", "vp", "ccvp")


# ---------------------------------------------------------------- strain

def strain(fld: DisplacementField, window: float = 48.0) -> StrainField:
    """Least-squares slope of valid axial displacement against depth over a
    centred window of physical length ``window`` (um)."""
    dz = fld.axial_pitch / fld.refractive_index
    h = int(math.floor(window / 2 / dz + 1e-9))
    k = np.arange(-h, h + 1, dtype=np.float64)
    v = fld.valid.astype(np.float64)
    a = np.where(fld.valid, fld.axial, 0.0)

    def csum(x, w):
        return correlate1d(x, w, axis=0, mode="constant", cval=0.0)

    ones = np.ones_like(k)
    n = csum(v, ones)
    s1 = csum(v, k)
    s2 = csum(v, k * k)
    sa = csum(a, ones)
    s1a = csum(a, k)
    den = n * s2 - s1 * s1
    ok = (n >= 2.5) & (den > 1e-9)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(ok, (n * s1a - s1 * sa) / np.where(ok, den, 1.0), 0.0) / dz
    return StrainField(slope, ok, window)


# --------------------------------------------------------------- metrics

def _arr(x, attr):
    return np.asarray(getattr(x, attr) if hasattr(x, attr) else x, dtype=np.float64)


def nmae(estimate, truth, mask=None) -> float:
    """Mean |estimate - truth| over valid (and masked) pixels, divided by
    max |truth| over the frame.  NaN when the truth is identically zero or
    no pixel qualifies."""
    attr = "strain" if isinstance(estimate, StrainField) else "axial"
    est = _arr(estimate, attr)
    tru = _arr(truth, "strain" if isinstance(truth, StrainField) else "axial")
    if est.shape != tru.shape:
        raise ValueError("estimate and truth shapes differ")
    sel = np.asarray(getattr(estimate, "valid", np.ones(est.shape, bool)), bool)
    if mask is not None:
        sel = sel & np.asarray(mask, bool)
    peak = float(np.max(np.abs(tru))) if tru.size else 0.0
    if peak == 0.0 or not sel.any():
        return float("nan")
    return float(np.mean(np.abs(est[sel] - tru[sel])) / peak)


def strain_snr(values) -> float:
    """20 log10(|mean| / std) of per-A-line strain values (sample std)."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size < 2:
        return float("nan")
    sd = float(np.std(v, ddof=1))
    mu = abs(float(np.mean(v)))
    if sd == 0.0:
        return float("inf") if mu > 0 else float("nan")
    if mu == 0.0:
        return float("-inf")
    return 20.0 * math.log10(mu / sd)


def band_maxima(st: StrainField, depth_pitch: float, band=(600.0, 800.0)) -> np.ndarray:
    """Per-A-line maximum valid strain inside the depth band (um)."""
    z = np.arange(st.strain.shape[0]) * depth_pitch
    rows = (z >= band[0]) & (z <= band[1])
    s = np.where(st.valid & rows[:, None], st.strain, -np.inf)
    mx = s.max(axis=0)
    return mx[np.isfinite(mx)]


# ---------------------------------------------------------- ground truth

def truth_field(profile, shape, axial_pitch, lateral_pitch=1.0, refractive_index=1.0):
    m, n = shape
    z = np.arange(m) * (axial_pitch / refractive_index)
    ax = np.repeat(profile.displacement(z)[:, None], n, axis=1)
    lat = np.full((m, n), float(profile.lateral_um))
    return DisplacementField(ax, lat, np.ones((m, n), bool), axial_pitch, lateral_pitch,
                             refractive_index)


def truth_strain(profile, shape, depth_pitch, window: float = 48.0,
                 boundaries=None) -> tuple[np.ndarray, np.ndarray]:
    """Analytic piecewise strain and the mask excluding +-window/2 around
    layer interfaces."""
    m, n = shape
    z = np.arange(m) * depth_pitch
    s = np.repeat(profile.strain(z)[:, None], n, axis=1)
    b = profile.z[1:-1] if boundaries is None else np.asarray(boundaries)
    keep = np.ones(m, bool)
    for zb in b:
        keep &= np.abs(z - zb) > window / 2
    keep &= (z >= window / 2) & (z <= z[-1] - window / 2)
    return s, np.repeat(keep[:, None], n, axis=1)


def correspondence_mask(profile, shape, depth_pitch, limit) -> np.ndarray:
    """Pixels whose scatterers remain inside the imaged range after the
    deformation; elsewhere the deformed scan holds no matching signal."""
    m, n = shape
    z = np.arange(m) * depth_pitch
    zz = z + profile.displacement(z)
    keep = (zz >= 0) & (zz < limit)
    return np.repeat(keep[:, None], n, axis=1)


# -------------------------------------------------------------- the sweep

@dataclass
class EvalRow:
    method: str
    amplitude: float
    nmae_disp: float
    nmae_strain: float
    snr_db: float
    status: str = "ok"


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    amplitudes: list[float] = field(default_factory=list)
    methods: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)        # (method, amplitude) -> s; not serialised
    fields: dict | None = None                         # (method, amplitude) -> (displacement, strain)

    def row(self, method: str, amplitude: float) -> EvalRow:
        for r in self.rows:
            if r.method == method and r.amplitude == amplitude:
                return r
        raise KeyError((method, amplitude))

    def sorted_rows(self) -> list[EvalRow]:
        mi = {m: k for k, m in enumerate(self.methods)}
        return sorted(self.rows, key=lambda r: (mi.get(r.method, len(mi)), r.amplitude))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "amplitude", "nmae_disp", "nmae_strain", "snr_db", "status"])
        for r in self.sorted_rows():
            w.writerow([r.method, repr(r.amplitude), repr(r.nmae_disp), repr(r.nmae_strain),
                        repr(r.snr_db), r.status])
        return buf.getvalue()

    def to_json(self) -> str:
        def num(x):
            return x if math.isfinite(x) else repr(x)
        d = {
            "amplitudes": self.amplitudes,
            "methods": self.methods,
            "rows": [{"method": r.method, "amplitude": r.amplitude,
                      "nmae_disp": num(r.nmae_disp), "nmae_strain": num(r.nmae_strain),
                      "snr_db": num(r.snr_db), "status": r.status}
                     for r in self.sorted_rows()],
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        rows = [EvalRow(r["method"], r["amplitude"], float(r["nmae_disp"]),
                        float(r["nmae_strain"]), float(r["snr_db"]), r["status"])
                for r in d["rows"]]
        return cls(rows, d["amplitudes"], d["methods"])


def run_method(name: str, I1, I2, dp_cfg=None, bl_cfg=None, jobs=None) -> DisplacementField:
    if name == "dp":
        return TR.track(I1, I2, dp_cfg, jobs=jobs)
    if name not in BL.METHODS:
        raise ValueError(f"unknown method {name!r}; valid: {', '.join(METHOD_NAMES)}")
    return BL.METHODS[name](I1, I2, bl_cfg)


def amplitude_profile(amplitude: float, depth: float):
    """Layered compression whose middle (softest) layer carries strain
    ``amplitude``; the outer layers carry half of it."""
    return layered_profile(amplitude / 2.0, depth)


def sweep(cfg: SimConfig, amplitudes=SWEEP_AMPLITUDES, methods=METHOD_NAMES,
          dp_cfg: TR.DPConfig | None = None, bl_cfg: BL.BaselineConfig | None = None,
          strain_window: float = 48.0, snr_band=(600.0, 800.0), jobs: int = 1,
          keep_fields: bool = False) -> EvalReport:
    """Evaluate every method on one reference scan and one deformed scan per
    amplitude.  Deterministic for a fixed config; ``jobs`` only changes
    parallelism."""
    methods = list(methods)
    if not methods:
        raise ValueError("empty method list")
    for mname in methods:
        if mname not in METHOD_NAMES:
            raise ValueError(f"unknown method {mname!r}; valid: {', '.join(METHOD_NAMES)}")
    dp_cfg = dp_cfg or TR.DPConfig()
    bl_cfg = bl_cfg or BL.BaselineConfig()
    fld0 = build_phantom(cfg)
    I1 = synthesize_bscan(fld0, cfg, stream=0, jobs=jobs)
    depth = cfg.phantom_depth
    dz = I1.depth_pitch
    report = EvalReport(amplitudes=[float(a) for a in amplitudes], methods=methods)
    if keep_fields:
        report.fields = {}
    for ai, amp in enumerate(amplitudes):
        prof = amplitude_profile(float(amp), depth)
        I2 = synthesize_bscan(deform_phantom(fld0, prof, depth), cfg, stream=ai + 1, jobs=jobs)
        tru = truth_field(prof, I1.shape, I1.axial_pitch, I1.lateral_pitch, I1.refractive_index)
        corr = correspondence_mask(prof, I1.shape, dz, depth)
        s_true, s_mask = truth_strain(prof, I1.shape, dz, strain_window)
        for mname in methods:
            t0 = time.perf_counter()
            try:
                est = run_method(mname, I1, I2, dp_cfg, bl_cfg, jobs)
                st = strain(est, strain_window)
                nd = nmae(est, tru, corr)
                ns = nmae(st, s_true, s_mask & corr)
                snr = strain_snr(band_maxima(st, dz, snr_band))
                status = "ok" if math.isfinite(nd) else "degenerate"
                if keep_fields:
                    report.fields[(mname, float(amp))] = (est, st)
            except Exception as exc:  # recorded, not fatal
                log.warning("method %s failed at amplitude %g: %s", mname, amp, exc)
                nd = ns = snr = float("nan")
                status = f"error: {type(exc).__name__}"
            report.timings[(mname, float(amp))] = time.perf_counter() - t0
            report.rows.append(EvalRow(mname, float(amp), nd, ns, snr, status))
            log.info("%s amp=%g nmae=%.4g (%.1fs)", mname, amp, nd,
                     report.timings[(mname, float(amp))])
    return report
