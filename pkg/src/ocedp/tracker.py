"""Joint phase/intensity displacement tracking by dynamic programming.

Every A-line is an independent Viterbi problem over depth.  A state pairs
an axial wrap offset ``a_r = r * lambda0 / (2 r_n)`` with a lateral shift
``l_q``.  For each pixel and state the candidate axial displacement is the
wrap offset plus the sub-wavelength part read from the laterally averaged
phase difference; the data term scores the intensity match at that
candidate (zero-normalised cross-correlation of magnitudes, sub-pixel via
piecewise-cubic interpolation) and a weighted L1 penalty links consecutive
rows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numba
import numpy as np

from . import _kernels as K
from .core import ComplexBScan, DisplacementField
from .interp import resample_columns, sample2d
from .simulator import ConfigError

log = logging.getLogger(__name__)

DATA_TERMS = ("one_minus_ncc", "abs_ncc")
ROUNDINGS = ("nearest", "floor")


@dataclass(frozen=True)
class DPConfig:
    a_max: float = 150.0          # um
    l_max: float = 0.0            # um
    lateral_step: float | None = None   # um; None -> the scan's lateral pitch
    avg_width: int = 20           # W (even); W + 1 columns are averaged
    w1: int = 5                   # NCC half-window, axial px
    w2: int = 5                   # NCC half-window, lateral px
    beta: float = 1e-5            # axial penalty per um
    gamma: float = 1e-5           # lateral penalty per um
    data_term: str = "one_minus_ncc"
    shift_rounding: str = "nearest"
    phase_sign: int = 1           # +1: deeper motion gives positive phase

    def __post_init__(self):
        if not self.a_max > 0:
            raise ConfigError("a_max", "must be > 0")
        if not self.l_max >= 0:
            raise ConfigError("l_max", "must be >= 0")
        if self.lateral_step is not None and not self.lateral_step > 0:
            raise ConfigError("lateral_step", "must be > 0")
        if int(self.avg_width) != self.avg_width or self.avg_width < 0 or self.avg_width % 2:
            raise ConfigError("avg_width", "must be an even integer >= 0")
        for name in ("w1", "w2"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ConfigError(name, "must be an integer >= 0")
        for name in ("beta", "gamma"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, "must be >= 0")
        if self.data_term not in DATA_TERMS:
            raise ConfigError("data_term", f"must be one of {DATA_TERMS}")
        if self.shift_rounding not in ROUNDINGS:
            raise ConfigError("shift_rounding", f"must be one of {ROUNDINGS}")
        if self.phase_sign not in (1, -1):
            raise ConfigError("phase_sign", "must be +1 or -1")

    @classmethod
    def from_dict(cls, d: dict) -> "DPConfig":
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown DPConfig field")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class StateGrid:
    """Discrete decision space; state p = r_idx * Q + q_idx."""

    r_values: np.ndarray
    a_values: np.ndarray
    l_values: np.ndarray

    @property
    def R(self) -> int:
        return self.a_values.size

    @property
    def Q(self) -> int:
        return self.l_values.size

    @property
    def size(self) -> int:
        return self.R * self.Q

    def state(self, p: int) -> tuple[float, float]:
        return float(self.a_values[p // self.Q]), float(self.l_values[p % self.Q])

    def axial_of_states(self) -> np.ndarray:
        return np.repeat(self.a_values, self.Q)

    def lateral_of_states(self) -> np.ndarray:
        return np.tile(self.l_values, self.R)

    def rank(self) -> np.ndarray:
        """Tie-break order: smallest |a_r|, then smallest r, then smallest q."""
        cached = self.__dict__.get("_rank")
        if cached is not None:
            return cached
        r = np.repeat(self.r_values, self.Q)
        q = np.tile(np.arange(self.Q), self.R)
        order = np.lexsort((q, r, np.abs(r)))
        rank = np.empty(self.size, np.int64)
        rank[order] = np.arange(self.size)
        rank.flags.writeable = False
        object.__setattr__(self, "_rank", rank)
        return rank

    def groups(self) -> np.ndarray:
        """(Q, R) state indices sharing each lateral value."""
        cached = self.__dict__.get("_groups")
        if cached is None:
            cached = (np.arange(self.R)[None, :] * self.Q + np.arange(self.Q)[:, None]).astype(np.int64)
            cached.flags.writeable = False
            object.__setattr__(self, "_groups", cached)
        return cached


def build_states(cfg: DPConfig, scan: ComplexBScan) -> StateGrid:
    spacing = scan.wavelength / (2 * scan.refractive_index)
    rmax = math.ceil(cfg.a_max / spacing)
    r = np.arange(-rmax, rmax + 1)
    r = r[(np.abs(r * spacing) < cfg.a_max) | (r == 0)]
    step = cfg.lateral_step or scan.lateral_pitch
    qmax = math.ceil(cfg.l_max / step) if cfg.l_max > 0 else 0
    q = np.arange(-qmax, qmax + 1)
    q = q[(np.abs(q * step) < cfg.l_max) | (q == 0)]
    return StateGrid(r.astype(np.int64), r * spacing, q * step)


def _round_shift(x, mode: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if mode == "floor":
        return np.floor(x).astype(np.int64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


# ------------------------------------------------------- per-pixel pieces

def vector_phase_diff(I1: ComplexBScan, I2: ComplexBScan, i: int, j: int,
                      ashift_px: int, lshift_px: int, W: int, phase_sign: int = 1):
    """Laterally averaged complex phase difference at one pixel.

    Returns ``(amplitude, phase, low_confidence)``; phase is in (-pi, pi]
    and positive for motion towards depth when ``phase_sign`` is +1.
    """
    m, n = I1.shape
    cols = np.arange(max(j - W // 2, 0), min(j + W // 2, n - 1) + 1)
    r2 = int(np.clip(i + ashift_px, 0, m - 1))
    c2 = np.clip(cols + lshift_px, 0, n - 1)
    acc = np.sum(np.conj(I1.samples[i, cols]) * I2.samples[r2, c2])
    if phase_sign < 0:
        acc = np.conj(acc)
    amp = float(abs(acc))
    if amp == 0.0:
        return 0.0, 0.0, True
    ph = float(np.angle(acc))
    if ph == -np.pi:
        ph = np.pi
    return amp, ph, False


def state_displacement(a_r: float, phase: float, wavelength: float,
                       refractive_index: float = 1.0) -> float:
    return a_r + wavelength * phase / (4 * np.pi * refractive_index)


def ncc(I1: ComplexBScan, I2: ComplexBScan, i: int, j: int, d_a: float, d_l: float,
        w1: int, w2: int, return_valid: bool = False):
    """Zero-normalised cross-correlation of magnitudes around pixel (i, j).

    ``|I2|`` is sampled at the offset (d_a, d_l) um with separable Keys
    cubic interpolation.  The window shrinks so that every sample lies in
    both images; a window that vanishes, or has no variance, scores 0.
    """
    m, n = I1.shape
    da = d_a * I1.refractive_index / I1.axial_pitch
    dl = d_l / I1.lateral_pitch
    rows = np.arange(max(i - w1, 0, math.ceil(-da)), min(i + w1, m - 1, math.floor(m - 1 - da)) + 1)
    cols = np.arange(max(j - w2, 0, math.ceil(-dl)), min(j + w2, n - 1, math.floor(n - 1 - dl)) + 1)
    if rows.size == 0 or cols.size == 0:
        return (0.0, False) if return_valid else 0.0
    a = I1.amplitude[np.ix_(rows, cols)]
    yy, xx = np.meshgrid(rows + da, cols + dl, indexing="ij")
    b = sample2d(I2.amplitude, yy, xx)
    raa = np.sum(a * a)
    rbb = np.sum(b * b)
    a = a - a.mean()
    b = b - b.mean()
    va = np.sum(a * a)
    vb = np.sum(b * b)
    if va <= 1e-12 * raa or vb <= 1e-12 * rbb or va <= 0 or vb <= 0:
        val = 0.0
    else:
        val = float(np.clip(np.sum(a * b) / np.sqrt(va * vb), -1.0, 1.0))
    return (val, True) if return_valid else val


def data_cost(ncc_value, mode: str = "one_minus_ncc"):
    if mode == "one_minus_ncc":
        return 1.0 - ncc_value
    if mode == "abs_ncc":
        return abs(ncc_value)
    raise ValueError(f"unknown data term {mode!r}")


def reg_cost(d_a, d_l, d_a_prev, d_l_prev, beta, gamma):
    return beta * abs(d_a - d_a_prev) + gamma * abs(d_l - d_l_prev)


# ------------------------------------------------------------ transitions

def min_transition(prev_costs, grid: StateGrid, beta: float, gamma: float,
                   prev_pos=None, cur_pos=None):
    """min over predecessors of prev_cost + beta|da| + gamma|dl| for every state.

    Without positions the axial coordinate of each state is its grid value
    a_r and the separable O(|S|) distance transform is used.  With explicit
    per-state axial positions (the tracker's continuous candidates) the
    grouped envelope sweep is used.  Returns ``(values, argmin)``.
    """
    prev_costs = np.ascontiguousarray(prev_costs, dtype=np.float64)
    S = grid.size
    if prev_costs.shape != (S,):
        raise ValueError(f"expected {S} costs")
    vals = np.empty(S)
    args = np.empty(S, np.int64)
    rank = grid.rank()
    if prev_pos is None and cur_pos is None:
        K.transition_grid(prev_costs, grid.a_values.astype(np.float64),
                          grid.l_values.astype(np.float64), float(beta), float(gamma),
                          rank, vals, args)
    else:
        pp = grid.axial_of_states() if prev_pos is None else np.asarray(prev_pos, np.float64)
        cp = grid.axial_of_states() if cur_pos is None else np.asarray(cur_pos, np.float64)
        K.transition_general(prev_costs, pp, cp, grid.lateral_of_states().astype(np.float64),
                             grid.groups(), float(beta), float(gamma), rank, vals, args)
    return vals, args


def min_transition_naive(prev_costs, grid: StateGrid, beta: float, gamma: float,
                         prev_pos=None, cur_pos=None):
    """O(|S|^2) reference for :func:`min_transition`."""
    prev_costs = np.ascontiguousarray(prev_costs, dtype=np.float64)
    S = grid.size
    pp = grid.axial_of_states() if prev_pos is None else np.asarray(prev_pos, np.float64)
    cp = grid.axial_of_states() if cur_pos is None else np.asarray(cur_pos, np.float64)
    vals = np.empty(S)
    args = np.empty(S, np.int64)
    K.transition_naive(prev_costs, pp.astype(np.float64), cp.astype(np.float64),
                       grid.lateral_of_states().astype(np.float64), float(beta), float(gamma),
                       grid.rank(), vals, args)
    return vals, args


def viterbi_lattice(dcost, alpha, grid: StateGrid, beta: float, gamma: float):
    """Solve one A-line lattice; returns ``(path, total_cost)``."""
    dcost = np.ascontiguousarray(dcost, dtype=np.float64)
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    if dcost.ndim != 2 or dcost.shape != alpha.shape or dcost.shape[1] != grid.size:
        raise ValueError("lattice arrays must be (m, |S|)")
    path, total = K.viterbi(dcost, alpha, grid.lateral_of_states().astype(np.float64),
                            grid.groups(), float(beta), float(gamma), grid.rank())
    return path, float(total)


# -------------------------------------------------------------- tracking

class _Prepared(NamedTuple):
    grid: StateGrid
    args: tuple


def _prepare(I1: ComplexBScan, I2: ComplexBScan, cfg: DPConfig) -> _Prepared:
    if I1.shape != I2.shape:
        raise ValueError(f"B-scan shapes differ: {I1.shape} vs {I2.shape}")
    if I1.metadata() != I2.metadata():
        raise ValueError("B-scan metadata differ")
    grid = build_states(cfg, I1)
    if grid.size == 0:
        raise ValueError("empty state grid")
    rn = I1.refractive_index
    px_per_um = rn / I1.axial_pitch
    A1 = I1.amplitude
    A2 = I2.amplitude
    A1 = A1 / (A1.max() or 1.0)
    A2 = A2 / (A2.max() or 1.0)
    lam = grid.l_values / I1.lateral_pitch
    lshift = _round_shift(lam, cfg.shift_rounding)
    Jstack = np.ascontiguousarray(np.stack([resample_columns(A2, x) for x in lam]))
    s_of_r = _round_shift(grid.a_values * px_per_um, cfg.shift_rounding)
    half_wrap = I1.wavelength / (4 * rn)
    dmin = (grid.a_values.min() - half_wrap) * px_per_um
    dmax = (grid.a_values.max() + half_wrap) * px_per_um
    k_lo = math.floor(dmin) - 2
    k_hi = math.floor(dmax) + 3
    pad = max(-k_lo, k_hi, 0) + 6
    args = (
        np.ascontiguousarray(I1.samples), np.ascontiguousarray(I2.samples),
        np.ascontiguousarray(A1), Jstack,
        grid.a_values.astype(np.float64), s_of_r, lam.astype(np.float64), lshift,
        grid.lateral_of_states().astype(np.float64), grid.groups(), grid.rank(),
        cfg.avg_width // 2, cfg.w1, cfg.w2,
        I1.wavelength / (4 * np.pi * rn), px_per_um, cfg.phase_sign,
        DATA_TERMS.index(cfg.data_term), k_lo, k_hi, pad,
        int(s_of_r.min()), int(s_of_r.max()),
    )
    return _Prepared(grid, args)


def column_lattice(I1: ComplexBScan, I2: ComplexBScan, cfg: DPConfig, j: int):
    """Per-(row, state) candidate displacement, data cost and window flag
    for A-line ``j``, exactly as the tracker builds them."""
    prep = _prepare(I1, I2, cfg)
    (s1, s2, A, Jstack, a_vals, s_of_r, lam, lshift, _lat, _groups, _rank,
     half_w, w1, w2, scale, ppu, sign, mode, k_lo, k_hi, pad, s_lo, s_hi) = prep.args
    m = I1.m
    S = prep.grid.size
    alpha = np.empty((m, S))
    dcost = np.empty((m, S))
    winok = np.empty((m, S), np.bool_)
    K.column_lattice(j, s1, s2, A, Jstack, a_vals, s_of_r, lam, lshift, half_w, w1, w2,
                     scale, ppu, sign, mode, k_lo, k_hi, pad, s_lo, s_hi, alpha, dcost, winok)
    return alpha, dcost, winok, prep.grid


def track(I1: ComplexBScan, I2: ComplexBScan, cfg: DPConfig | None = None,
          jobs: int | None = None, return_cost: bool = False):
    """Estimate axial and lateral displacement from ``I1`` to ``I2``.

    With ``return_cost`` the per-A-line optimal path costs are returned as
    a second value.
    """
    cfg = cfg or DPConfig()
    prep = _prepare(I1, I2, cfg)
    m, n = I1.shape
    axial = np.empty((m, n))
    lateral = np.empty((m, n))
    valid = np.empty((m, n), np.bool_)
    cost = np.empty(n)
    old = numba.get_num_threads()
    if jobs:
        numba.set_num_threads(max(1, min(jobs, numba.config.NUMBA_NUM_THREADS)))
    try:
        K.track_columns(*prep.args, float(cfg.beta), float(cfg.gamma), float(cfg.a_max),
                        axial, lateral, valid, cost)
    finally:
        numba.set_num_threads(old)
    log.debug("dp track: %d states, %dx%d", prep.grid.size, m, n)
    fld = DisplacementField.like(I1, axial, lateral, valid)
    return (fld, cost) if return_cost else fld
