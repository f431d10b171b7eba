"""Static SVG figures.  Output bytes depend only on the plotted data."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "ocedp", "svg.fonttype": "none", "font.size": 9}
LABELS = {"dp": "DP", "kasai": "Kasai", "cc": "CC", "vp": "VP", "ccvp": "CC+VP"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_nmae(report, path, which: str = "disp"):
    """NMAE against amplitude, log-log, one series per method."""
    key = {"disp": "nmae_disp", "strain": "nmae_strain"}[which]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for m in report.methods:
            rows = sorted((r for r in report.rows if r.method == m), key=lambda r: r.amplitude)
            x = [r.amplitude for r in rows if math.isfinite(getattr(r, key)) and getattr(r, key) > 0]
            y = [getattr(r, key) for r in rows if math.isfinite(getattr(r, key)) and getattr(r, key) > 0]
            if x:
                ax.plot(x, y, marker="o", ms=3, label=LABELS.get(m, m))
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("strain amplitude")
        ax.set_ylabel("NMAE " + ("displacement" if which == "disp" else "strain"))
        ax.grid(True, which="both", lw=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_truth_profiles(profiles, depth_um, path, n=512):
    """Ground-truth strain (top) and displacement (bottom) against depth."""
    z = np.linspace(0.0, depth_um, n, endpoint=False)
    with plt.rc_context(_RC):
        fig, (a1, a2) = plt.subplots(2, 1, figsize=(5.0, 5.4), sharex=True)
        for amp, prof in profiles:
            a1.plot(z, prof.strain(z), lw=0.8, label=f"{amp:g}")
            a2.plot(z, prof.displacement(z), lw=0.8)
        a1.set_yscale("log")
        a1.set_ylabel("strain")
        a2.set_yscale("symlog", linthresh=1e-2)
        a2.set_ylabel("displacement (um)")
        a2.set_xlabel("depth (um)")
        a1.legend(fontsize=5, ncol=3)
        fig.tight_layout()
        _save(fig, path)


def plot_depth_profiles(series, path, ylabel: str):
    """Generic depth profiles: ``series`` is [(label, depth, values), ...]."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        for label, z, v in series:
            ax.plot(z, v, lw=0.8, label=label)
        ax.set_xlabel("depth (um)")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_two_scatterers(px, amp_ref, amp_def, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        ax.plot(px, amp_ref, marker=".", label="reference")
        ax.plot(px, amp_def, marker=".", label="shifted 0.75 px")
        ax.set_xlabel("depth (px)")
        ax.set_ylabel("amplitude")
        ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_phase_shift(px, truth, same, deeper, path):
    with plt.rc_context(_RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 2.8), sharey=True)
        for ax, est, title in ((a1, same, "same pixel"), (a2, deeper, "one pixel deeper")):
            ax.plot(px, est, lw=0.6, label="measured")
            ax.plot(px, truth, lw=0.8, ls="--", label="2 k0 u (wrapped)")
            ax.set_title(title)
            ax.set_xlabel("depth (px)")
        a1.set_ylabel("phase shift (rad)")
        a1.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)
