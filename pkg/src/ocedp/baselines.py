"""Conventional displacement trackers used for comparison.

kasai  -- window-averaged conjugate product, phase to displacement.
cc     -- exhaustive integer NCC search on magnitudes + sub-pixel peak fit.
vp     -- laterally averaged phase gradients integrated in depth, with the
          comparison row in I2 advanced by the accumulated pixel shift.
ccvp   -- CC picks the integer realignment, VP supplies the phase detail.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import median_filter

from .core import ComplexBScan, DisplacementField
from .interp import keys_kernel
from .simulator import ConfigError

SUBPIXEL_MODES = ("paraboloid", "cubic")


@dataclass(frozen=True)
class BaselineConfig:
    kasai_window: tuple[int, int] = (1, 21)      # axial px x lateral px, odd
    cc_search: tuple[int, int] = (70, 2)         # +- axial px, +- lateral px
    cc_window: tuple[int, int] = (5, 5)          # half-windows w1, w2
    cc_subpixel: str = "paraboloid"
    vp_width: int = 20                           # W, lateral window W + 1 columns
    vp_grad_window: int = 8                      # px
    vp_median: int = 5                           # CC smoothing before realignment (ccvp)
    comp_window: float = 48.0                    # um
    comp_depth: float = 80.0                     # um
    phase_sign: int = 1

    def __post_init__(self):
        for name in ("kasai_window", "cc_search", "cc_window"):
            v = tuple(int(x) for x in getattr(self, name))
            if len(v) != 2:
                raise ConfigError(name, "must have two entries")
            object.__setattr__(self, name, v)
        if any(x < 1 or x % 2 == 0 for x in self.kasai_window):
            raise ConfigError("kasai_window", "entries must be odd and >= 1")
        if any(x < 0 for x in self.cc_search):
            raise ConfigError("cc_search", "entries must be >= 0")
        if any(x < 0 for x in self.cc_window):
            raise ConfigError("cc_window", "entries must be >= 0")
        if self.cc_subpixel not in SUBPIXEL_MODES:
            raise ConfigError("cc_subpixel", f"must be one of {SUBPIXEL_MODES}")
        if self.vp_width < 0 or self.vp_width % 2:
            raise ConfigError("vp_width", "must be an even integer >= 0")
        if self.vp_grad_window < 1:
            raise ConfigError("vp_grad_window", "must be >= 1")
        if self.vp_median < 1 or self.vp_median % 2 == 0:
            raise ConfigError("vp_median", "must be odd and >= 1")
        if not self.comp_window > 0:
            raise ConfigError("comp_window", "must be > 0")
        if not self.comp_depth >= 0:
            raise ConfigError("comp_depth", "must be >= 0")
        if self.phase_sign not in (1, -1):
            raise ConfigError("phase_sign", "must be +1 or -1")

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown BaselineConfig field")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def _check_pair(I1: ComplexBScan, I2: ComplexBScan):
    if I1.shape != I2.shape:
        raise ValueError(f"B-scan shapes differ: {I1.shape} vs {I2.shape}")
    if I1.metadata() != I2.metadata():
        raise ValueError("B-scan metadata differ")


def _cross(I1: ComplexBScan, I2: np.ndarray, sign: int) -> np.ndarray:
    p = np.conj(I1.samples) * I2
    return p if sign > 0 else np.conj(p)


def _integral(x: np.ndarray) -> np.ndarray:
    out = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=x.dtype)
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=out[1:, 1:])
    return out


def _box(x: np.ndarray, ha: int, hl: int) -> np.ndarray:
    """Sum over the (2ha+1) x (2hl+1) window around every pixel, clipped."""
    m, n = x.shape
    S = _integral(x)
    r0 = np.clip(np.arange(m) - ha, 0, m)
    r1 = np.clip(np.arange(m) + ha + 1, 0, m)
    c0 = np.clip(np.arange(n) - hl, 0, n)
    c1 = np.clip(np.arange(n) + hl + 1, 0, n)
    return (S[r1][:, c1] - S[r0][:, c1] - S[r1][:, c0] + S[r0][:, c0])


# ----------------------------------------------------------------- Kasai

def kasai_track(I1: ComplexBScan, I2: ComplexBScan, cfg: BaselineConfig | None = None) -> DisplacementField:
    cfg = cfg or BaselineConfig()
    _check_pair(I1, I2)
    ka, kl = cfg.kasai_window
    b = _box(_cross(I1, I2.samples, cfg.phase_sign), ka // 2, kl // 2)
    scale = I1.wavelength / (4 * np.pi * I1.refractive_index)
    ph = np.angle(b)
    ph[ph == -np.pi] = np.pi
    valid = np.abs(b) > 0
    axial = np.where(valid, scale * ph, 0.0)
    return DisplacementField.like(I1, axial, np.zeros_like(axial), valid, has_lateral=False)


# -------------------------------------------------------------------- CC

def _shifted(img: np.ndarray, k: int, l: int):
    """img[u + k, v + l] with zeros outside, plus the in-range mask."""
    m, n = img.shape
    out = np.zeros_like(img)
    mask = np.zeros(img.shape)
    u0, u1 = max(0, -k), min(m, m - k)
    v0, v1 = max(0, -l), min(n, n - l)
    if u0 < u1 and v0 < v1:
        out[u0:u1, v0:v1] = img[u0 + k:u1 + k, v0 + l:v1 + l]
        mask[u0:u1, v0:v1] = 1.0
    return out, mask


def ncc_map(A1: np.ndarray, A2: np.ndarray, k: int, l: int, w1: int, w2: int):
    """NCC of every (2w1+1)x(2w2+1) window of A1 against A2 displaced by the
    integer offset (k, l).  Windows are clipped to samples valid in both
    images.  Returns (ncc, count); count 0 marks an empty window."""
    B, M = _shifted(A2, k, l)
    N = _box(M, w1, w2)
    A = A1 * M
    Sa = _box(A, w1, w2)
    Saa = _box(A * A1, w1, w2)
    Sb = _box(B, w1, w2)
    Sbb = _box(B * B, w1, w2)
    Sab = _box(A1 * B, w1, w2)
    with np.errstate(divide="ignore", invalid="ignore"):
        Nn = np.maximum(N, 1.0)
        va = Saa - Sa * Sa / Nn
        vb = Sbb - Sb * Sb / Nn
        ok = (N > 0.5) & (va > 1e-12 * Saa) & (vb > 1e-12 * Sbb) & (va > 0) & (vb > 0)
        c = np.where(ok, (Sab - Sa * Sb / Nn) / np.sqrt(np.where(ok, va * vb, 1.0)), 0.0)
    return np.clip(c, -1.0, 1.0), np.rint(N).astype(np.int64)


_P9 = None


def _paraboloid_pinv():
    global _P9
    if _P9 is None:
        y, x = np.meshgrid([-1, 0, 1], [-1, 0, 1], indexing="ij")
        x = x.ravel()
        y = y.ravel()
        X = np.stack([np.ones(9), x, y, x * x, x * y, y * y], axis=1)
        _P9 = np.linalg.pinv(X)
    return _P9


def _parabola_1d(fm, f0, fp):
    den = fm - 2 * f0 + fp
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(den < 0, 0.5 * (fm - fp) / den, 0.0)
    d = np.where(np.isfinite(d), d, 0.0)
    return np.clip(d, -0.5, 0.5)


def _keys_peak(samples: np.ndarray) -> np.ndarray:
    """Location in [-1, 1) of the maximum of the Keys interpolant through
    samples at offsets -2..2 (axis 0)."""
    ts = np.arange(-64, 64) / 64.0
    best_v = np.full(samples.shape[1:], -np.inf)
    best_t = np.zeros(samples.shape[1:])
    for t in ts:
        k = math.floor(t)
        v = 0.0
        for o in range(-1, 3):
            v = v + keys_kernel(t - (k + o)) * samples[k + o + 2]
        upd = v > best_v
        best_v = np.where(upd, v, best_v)
        best_t = np.where(upd, t, best_t)
    return best_t


def cc_track(I1: ComplexBScan, I2: ComplexBScan, cfg: BaselineConfig | None = None) -> DisplacementField:
    cfg = cfg or BaselineConfig()
    _check_pair(I1, I2)
    A1 = I1.amplitude
    A2 = I2.amplitude
    A1 = A1 / (A1.max() or 1.0)
    A2 = A2 / (A2.max() or 1.0)
    m, n = A1.shape
    sa, sl = cfg.cc_search
    w1, w2 = cfg.cc_window
    shifts = sorted(((k, l) for k in range(-sa, sa + 1) for l in range(-sl, sl + 1)),
                    key=lambda s: (abs(s[0]), abs(s[1]), s[0], s[1]))
    best = np.full((m, n), -np.inf)
    worst = np.full((m, n), np.inf)
    bk = np.zeros((m, n), np.int64)
    bl = np.zeros((m, n), np.int64)
    # a shift must keep at least half the zero-shift window support; tiny
    # edge overlaps otherwise produce spurious near-perfect correlations
    _, N0 = ncc_map(A1, A2, 0, 0, w1, w2)
    for k, l in shifts:
        c, N = ncc_map(A1, A2, k, l, w1, w2)
        c = np.where((N > 0) & (2 * N >= N0), c, -np.inf)
        upd = c > best
        best = np.where(upd, c, best)
        bk = np.where(upd, k, bk)
        bl = np.where(upd, l, bl)
        worst = np.where(N > 0, np.minimum(worst, c), worst)
    valid = np.isfinite(best) & (best > worst)

    # NCC in the neighbourhood of each integer peak
    r = 2 if cfg.cc_subpixel == "cubic" else 1
    neigh = np.full((2 * r + 1, 2 * r + 1, m, n), np.nan)
    for k in range(-sa - r, sa + r + 1):
        dk = k - bk
        rows_k = np.abs(dk) <= r
        if not rows_k.any():
            continue
        for l in range(-sl - r, sl + r + 1):
            dl = l - bl
            need = rows_k & (np.abs(dl) <= r)
            if not need.any():
                continue
            c, N = ncc_map(A1, A2, k, l, w1, w2)
            ii, jj = np.nonzero(need & (N > 0))
            neigh[dk[ii, jj] + r, dl[ii, jj] + r, ii, jj] = c[ii, jj]

    if cfg.cc_subpixel == "paraboloid":
        f = neigh.reshape(9, m, n)
        fa = _parabola_1d(neigh[0, 1], neigh[1, 1], neigh[2, 1])
        fl = _parabola_1d(neigh[1, 0], neigh[1, 1], neigh[1, 2]) if sl > 0 else np.zeros((m, n))
        if sl > 0:
            coef = np.einsum("kp,pij->kij", _paraboloid_pinv(), np.nan_to_num(f, nan=0.0))
            _, bx, by, dxx, dxy, dyy = coef
            hxx, hxy, hyy = 2 * dxx, dxy, 2 * dyy
            det = hxx * hyy - hxy * hxy
            with np.errstate(divide="ignore", invalid="ignore"):
                ox = (-hyy * bx + hxy * by) / det      # lateral
                oy = (hxy * bx - hxx * by) / det       # axial
            good = (np.all(np.isfinite(f), axis=0) & (hxx < 0) & (det > 0)
                    & (np.abs(ox) <= 1) & (np.abs(oy) <= 1))
            da = np.where(good, oy, fa)
            dl_ = np.where(good, ox, fl)
        else:
            da, dl_ = fa, fl
    else:
        col = np.nan_to_num(neigh[:, r], nan=-1.0)
        da = _keys_peak(col)
        dl_ = _keys_peak(np.nan_to_num(neigh[r, :], nan=-1.0)) if sl > 0 else np.zeros((m, n))

    # a perfect integer match is already the global maximum of the NCC
    exact = best >= 1.0 - 1e-12
    da = np.where(exact, 0.0, da)
    dl_ = np.where(exact, 0.0, dl_)
    axial = (bk + da) * I1.axial_pitch / I1.refractive_index
    lateral = (bl + dl_) * I1.lateral_pitch
    axial = np.where(valid, axial, 0.0)
    lateral = np.where(valid, lateral, 0.0)
    return DisplacementField.like(I1, axial, lateral, valid)


# -------------------------------------------------------------------- VP

def _vp_core(I1: ComplexBScan, I2s: np.ndarray, cfg: BaselineConfig, shift_px=None):
    """Integrated phase gradients per column.

    ``shift_px`` (m x n ints) fixes the I2 comparison row per pixel; when
    None the row is advanced by the accumulated displacement.
    """
    m, n = I1.shape
    scale = I1.wavelength / (4 * np.pi * I1.refractive_index)
    px_per_um = I1.refractive_index / I1.axial_pitch
    h = cfg.vp_width // 2
    G = cfg.vp_grad_window
    lo_off = -(G // 2)
    hi_off = G - G // 2 - 1
    offs = np.arange(-h, h + 1)
    cols = np.arange(n)[:, None] + offs[None, :]
    wmask = (cols >= 0) & (cols < n)
    cols = np.clip(cols, 0, n - 1)
    c1 = np.conj(I1.samples) if cfg.phase_sign > 0 else I1.samples
    S2 = I2s if cfg.phase_sign > 0 else np.conj(I2s)
    jj = np.arange(n)

    def bvals(rows, s):
        # b[row, j] = sum_w conj(I1[row, j+w]) I2[row + s_j, j+w]
        rows = np.asarray(rows)
        r2 = np.clip(rows[:, None] + s[None, :], 0, m - 1)
        p = c1[rows[:, None, None], cols[None]] * S2[r2[:, :, None], cols[None]]
        return np.sum(p * wmask[None], axis=2)

    axial = np.zeros((m, n))
    valid = np.ones((m, n), bool)
    s = shift_px[0] if shift_px is not None else np.zeros(n, np.int64)
    b = bvals(np.arange(min(G, m)), s)
    z = b.sum(axis=0)
    u = np.where(np.abs(z) > 0, scale * np.angle(z), 0.0)
    valid[0] = np.abs(z) > 0
    axial[0] = u
    g_prev = np.zeros(n)
    for i in range(1, m):
        if shift_px is not None:
            s = shift_px[i]
        else:
            x = u * px_per_um
            s = (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)
        lo = max(0, i - 1 + lo_off)
        hi = min(m - 2, i - 1 + hi_off)
        b = bvals(np.arange(lo, hi + 2), s)
        z = np.sum(b[1:] * np.conj(b[:-1]), axis=0)
        ok = np.abs(z) > 0
        g = np.where(ok, np.angle(z), g_prev)
        valid[i] = ok
        u = u + scale * g
        axial[i] = u
        g_prev = g
    return axial, valid


def vp_track(I1: ComplexBScan, I2: ComplexBScan, cfg: BaselineConfig | None = None,
             shift_px=None) -> DisplacementField:
    cfg = cfg or BaselineConfig()
    _check_pair(I1, I2)
    if shift_px is not None:
        shift_px = np.asarray(shift_px, dtype=np.int64)
        if shift_px.shape != I1.shape:
            raise ValueError("shift map shape differs from the B-scans")
    axial, valid = _vp_core(I1, I2.samples, cfg, shift_px)
    return DisplacementField.like(I1, axial, np.zeros_like(axial), valid, has_lateral=False)


# ------------------------------------------------------------------ CC+VP

def ccvp_track(I1: ComplexBScan, I2: ComplexBScan, cfg: BaselineConfig | None = None,
               cc: DisplacementField | None = None) -> DisplacementField:
    """CC integer realignment followed by VP phase refinement.

    The VP phase on the realigned pair still encodes the total
    displacement modulo lambda0 / (2 r_n); each column's free multiple is
    fixed against the (smoothed) CC estimate.
    """
    cfg = cfg or BaselineConfig()
    _check_pair(I1, I2)
    if cc is None:
        cc = cc_track(I1, I2, replace_cfg(cfg, cc_search=(cfg.cc_search[0], 0)))
    px_per_um = I1.refractive_index / I1.axial_pitch
    a_cc = median_filter(cc.axial, size=(cfg.vp_median, 1), mode="nearest")
    x = a_cc * px_per_um
    s = (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)
    m, n = I1.shape
    if not s.any():
        axial, valid = _vp_core(I1, I2.samples, cfg, None)
    else:
        axial, valid = _vp_core(I1, I2.samples, cfg, s)
    wrap = I1.wavelength / (2 * I1.refractive_index)
    for j in range(n):
        sel = valid[:, j] & cc.valid[:, j]
        if sel.any():
            k = np.round(np.median(a_cc[sel, j] - axial[sel, j]) / wrap)
            axial[:, j] += k * wrap
    return DisplacementField.like(I1, axial, np.zeros_like(axial), valid & cc.valid, has_lateral=False)


def replace_cfg(cfg: BaselineConfig, **kw) -> BaselineConfig:
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    d.update(kw)
    return BaselineConfig(**d)


# ------------------------------------------------- translation handling

def translation_offset(reference: DisplacementField, window: float = 48.0,
                       depth: float = 80.0) -> float:
    """Mean valid axial value of ``reference`` within window/2 of ``depth``."""
    z = reference.depths
    rows = np.abs(z - depth) <= window / 2
    sel = reference.valid & rows[:, None]
    if not sel.any():
        raise ValueError("no valid reference samples in the compensation window")
    return float(np.mean(reference.axial[sel]))


def compensate_translation(fld: DisplacementField, reference: DisplacementField,
                           window: float = 48.0, depth: float = 80.0) -> DisplacementField:
    """Add the reference's windowed mean axial value as a constant offset."""
    c = translation_offset(reference, window, depth)
    return fld.replace(axial=fld.axial + c)


def remove_translation(I2: ComplexBScan, c: float, phase_sign: int = 1) -> ComplexBScan:
    """Undo a bulk axial translation ``c`` (um): whole-pixel realignment
    plus removal of the matching carrier phase."""
    m = I2.m
    x = c * I2.refractive_index / I2.axial_pitch
    s = int(math.copysign(math.floor(abs(x) + 0.5), x))
    rows = np.clip(np.arange(m) + s, 0, m - 1)
    ph = phase_sign * 4 * np.pi * I2.refractive_index * c / I2.wavelength
    return I2.with_samples(I2.samples[rows] * np.exp(-1j * ph))


def compensated(method, I1: ComplexBScan, I2: ComplexBScan, reference: DisplacementField,
                cfg: BaselineConfig | None = None) -> DisplacementField:
    """Run a phase-based ``method`` on the pair with the reference's bulk
    translation removed, then add the translation back."""
    cfg = cfg or BaselineConfig()
    c = translation_offset(reference, cfg.comp_window, cfg.comp_depth)
    f = method(I1, remove_translation(I2, c, cfg.phase_sign), cfg)
    return f.replace(axial=f.axial + c)


METHODS = {
    "kasai": kasai_track,
    "cc": cc_track,
    "vp": vp_track,
    "ccvp": ccvp_track,
}
