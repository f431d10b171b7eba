"""Small scenarios showing how scatterer motion acts on the OCT signal."""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting
from .simulator import (DeformationProfile, SimConfig, build_phantom, deform_phantom,
                        synthesize_aline, synthesize_bscan)


def _wrap(x):
    w = np.angle(np.exp(1j * x))
    w[w == -np.pi] = np.pi
    return w


def two_scatterers(cfg: SimConfig, separation_px: float = 1.25, shift_px: float = 0.75,
                   at_px: float = 40.0):
    """Amplitude of two equal scatterers before and after a rigid shift."""
    p = cfg.axial_pitch / cfg.refractive_index
    z = np.array([at_px, at_px + separation_px]) * p
    s = np.ones(2)
    ref = synthesize_aline(z, s, cfg)
    dfm = synthesize_aline(z + shift_px * p, s, cfg, stream=1)
    return ref, dfm


def compression_phase(cfg: SimConfig, n_alines: int = 1):
    """Pixel-wise phase shift at the same pixel and one pixel deeper for a
    compression whose displacement grows linearly to one pixel at the
    bottom.  With ``n_alines`` > 1 the conjugate products are summed
    across A-lines first."""
    cfg = replace(cfg, n_alines=n_alines)
    depth = cfg.phantom_depth
    fld = build_phantom(cfg)
    prof = DeformationProfile(np.array([0.0, depth]), np.array([0.0, cfg.axial_pitch / cfg.refractive_index]))
    I1 = synthesize_bscan(fld, cfg)
    I2 = synthesize_bscan(deform_phantom(fld, prof, depth), cfg, stream=1)
    a, b = I1.samples, I2.samples
    same = np.angle(np.sum(np.conj(a) * b, axis=1))
    deeper = np.full(a.shape[0], np.nan)
    deeper[:-1] = np.angle(np.sum(np.conj(a[:-1]) * b[1:], axis=1))
    z = np.arange(a.shape[0]) * I1.depth_pitch
    truth = _wrap(4 * np.pi * cfg.refractive_index * prof.displacement(z) / cfg.wavelength)
    return truth, same, deeper


def demo_fig1(out_dir, cfg: SimConfig | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg or SimConfig()
    quiet = replace(cfg, noise_power=0.0, attenuation=0.0)
    ref, dfm = two_scatterers(quiet)
    px = np.arange(30, 52)
    files = []
    p = out / "fig1_two_scatterers.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pixel", "amp_reference", "amp_shifted", "phase_reference", "phase_shifted"])
        for q in px:
            w.writerow([int(q), repr(float(abs(ref[q]))), repr(float(abs(dfm[q]))),
                        repr(float(np.angle(ref[q]))), repr(float(np.angle(dfm[q])))])
    files.append(p)
    p = out / "fig1_two_scatterers.svg"
    plotting.plot_two_scatterers(px, np.abs(ref[px]), np.abs(dfm[px]), p)
    files.append(p)

    truth, same, deeper = compression_phase(cfg)
    q = np.arange(truth.size)
    p = out / "fig1_phase_shift.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pixel", "truth_wrapped", "same_pixel", "one_pixel_deeper"])
        for i in q:
            w.writerow([int(i), repr(float(truth[i])), repr(float(same[i])), repr(float(deeper[i]))])
    files.append(p)
    p = out / "fig1_phase_shift.svg"
    plotting.plot_phase_shift(q, truth, same, deeper, p)
    files.append(p)
    return files
