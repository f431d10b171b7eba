"""Compiled inner loops of the dynamic-programming tracker.

State index layout everywhere: ``p = r_idx * Q + q_idx`` (ascending wrap
state, then ascending lateral state).  ``rank[p]`` orders states by the
tie-break (|a_r|, r, q); every argmin prefers the lower rank on equal cost.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numba import prange

from .interp import keys_kernel


@numba.njit(cache=True)
def round_half_away(x):
    return math.copysign(math.floor(abs(x) + 0.5), x)


@numba.njit(cache=True)
def _clamp(v, lo, hi):
    return lo if v < lo else (hi if v > hi else v)


# ------------------------------------------------------------------ phase

@numba.njit(cache=True)
def phase_table(I1, I2, j, lshift, half_w, s_lo, s_hi, phase_sign, out):
    """Laterally averaged phase difference for every row and axial shift.

    out[s - s_lo, i] = arg sum_w conj(I1[i, j+w]) I2[i+s, j+lshift+w]
    (conjugated when phase_sign < 0); empty sums give 0.
    """
    m, n = I1.shape
    c_lo = max(j - half_w, 0)
    c_hi = min(j + half_w, n - 1)
    for si in range(s_hi - s_lo + 1):
        s = s_lo + si
        for i in range(m):
            r2 = _clamp(i + s, 0, m - 1)
            re = 0.0
            im = 0.0
            for c in range(c_lo, c_hi + 1):
                a = I1[i, c]
                b = I2[r2, _clamp(c + lshift, 0, n - 1)]
                re += a.real * b.real + a.imag * b.imag
                im += a.real * b.imag - a.imag * b.real
            if phase_sign < 0:
                im = -im
            if re == 0.0 and im == 0.0:
                out[si, i] = 0.0
            else:
                ph = math.atan2(im, re)
                out[si, i] = math.pi if ph == -math.pi else ph


# ------------------------------------------------------------------- NCC

@numba.njit(cache=True)
def ncc_tables(A, J, j, lam, w2, k_lo, k_hi, pad):
    """Prefix sums that make the NCC of any (sub-pixel) axial offset O(1).

    A is |I1|, J is |I2| already resampled at columns v + lam.  Rows of J
    outside the image are edge-clamped, matching the interpolation taps.
    """
    m, n = A.shape
    v_lo = max(j - w2, 0, int(math.ceil(-lam)))
    v_hi = min(j + w2, n - 1, int(math.floor(n - 1 - lam)))
    nv = v_hi - v_lo + 1
    PA = np.zeros(m + 1)
    PA2 = np.zeros(m + 1)
    L = m + 2 * pad
    PJ = np.zeros(L + 1)
    PJJ = np.zeros((4, L + 1))
    PX = np.zeros((k_hi - k_lo + 1, m + 1))
    if nv <= 0:
        return nv, PA, PA2, PJ, PJJ, PX
    for u in range(m):
        s1 = 0.0
        s2 = 0.0
        for v in range(v_lo, v_hi + 1):
            s1 += A[u, v]
            s2 += A[u, v] * A[u, v]
        PA[u + 1] = PA[u] + s1
        PA2[u + 1] = PA2[u] + s2
    for ri in range(L):
        rc = _clamp(ri - pad, 0, m - 1)
        s = 0.0
        for v in range(v_lo, v_hi + 1):
            s += J[rc, v]
        PJ[ri + 1] = PJ[ri] + s
        for lag in range(4):
            rc2 = _clamp(ri - pad + lag, 0, m - 1)
            s = 0.0
            for v in range(v_lo, v_hi + 1):
                s += J[rc, v] * J[rc2, v]
            PJJ[lag, ri + 1] = PJJ[lag, ri] + s
    for ki in range(k_hi - k_lo + 1):
        k = k_lo + ki
        for u in range(m):
            rc = _clamp(u + k, 0, m - 1)
            s = 0.0
            for v in range(v_lo, v_hi + 1):
                s += A[u, v] * J[rc, v]
            PX[ki, u + 1] = PX[ki, u] + s
    return nv, PA, PA2, PJ, PJJ, PX


@numba.njit(cache=True)
def ncc_eval(nv, PA, PA2, PJ, PJJ, PX, k_lo, pad, m, i, d, w1):
    """Zero-normalised correlation at row i for axial pixel offset d.

    Returns (value, window_ok).  A window that is empty after clipping to
    the image gives (0, False); a flat window gives (0, True).
    """
    if nv <= 0:
        return 0.0, False
    lo = max(i - w1, 0, int(math.ceil(-d)))
    hi = min(i + w1, m - 1, int(math.floor(m - 1 - d)))
    if lo > hi:
        return 0.0, False
    ka = int(math.floor(d))
    t = d - ka
    w0 = keys_kernel(t + 1.0)
    w1_ = keys_kernel(t)
    w2_ = keys_kernel(t - 1.0)
    w3 = keys_kernel(t - 2.0)
    w = (w0, w1_, w2_, w3)
    N = (hi - lo + 1) * nv
    Sa = PA[hi + 1] - PA[lo]
    Saa = PA2[hi + 1] - PA2[lo]
    Sab = 0.0
    Sb = 0.0
    for o in range(4):
        if w[o] == 0.0:
            continue
        ki = ka + o - 1 - k_lo
        Sab += w[o] * (PX[ki, hi + 1] - PX[ki, lo])
        base = ka + o - 1 + pad
        Sb += w[o] * (PJ[hi + base + 1] - PJ[lo + base])
    Sbb = 0.0
    for o in range(4):
        if w[o] == 0.0:
            continue
        for o2 in range(4):
            if w[o2] == 0.0:
                continue
            lag = abs(o - o2)
            base = ka + min(o, o2) - 1 + pad
            Sbb += w[o] * w[o2] * (PJJ[lag, hi + base + 1] - PJJ[lag, lo + base])
    va = Saa - Sa * Sa / N
    vb = Sbb - Sb * Sb / N
    if va <= 1e-12 * Saa or vb <= 1e-12 * Sbb or va <= 0.0 or vb <= 0.0:
        return 0.0, True
    c = (Sab - Sa * Sb / N) / math.sqrt(va * vb)
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return c, True


# ------------------------------------------------------------- lattice

@numba.njit(cache=True)
def column_lattice(j, I1, I2, A, Jstack, a_vals, s_of_r, lam, lshift, half_w, w1, w2,
                   scale, px_per_um, phase_sign, data_mode, k_lo, k_hi, pad, s_lo, s_hi,
                   alpha, dcost, winok):
    """Fill per-(row, state) displacement, data cost and window validity."""
    m = I1.shape[0]
    R = a_vals.size
    Q = lam.size
    phase = np.empty((s_hi - s_lo + 1, m))
    for q in range(Q):
        phase_table(I1, I2, j, lshift[q], half_w, s_lo, s_hi, phase_sign, phase)
        nv, PA, PA2, PJ, PJJ, PX = ncc_tables(A, Jstack[q], j, lam[q], w2, k_lo, k_hi, pad)
        for r in range(R):
            p = r * Q + q
            si = s_of_r[r] - s_lo
            for i in range(m):
                al = a_vals[r] + scale * phase[si, i]
                alpha[i, p] = al
                c, ok = ncc_eval(nv, PA, PA2, PJ, PJJ, PX, k_lo, pad, m, i, al * px_per_um, w1)
                winok[i, p] = ok
                dcost[i, p] = 1.0 - c if data_mode == 0 else abs(c)


# ----------------------------------------------------------- transitions

@numba.njit(cache=True)
def _better(v, rk, best_v, best_rk):
    return v < best_v or (v == best_v and rk < best_rk)


@numba.njit(cache=True)
def transition_naive(prev_cost, prev_pos, cur_pos, lat, beta, gamma, rank, out_val, out_arg):
    S = prev_cost.size
    for p in range(S):
        bv = np.inf
        ba = -1
        for p2 in range(S):
            v = prev_cost[p2] + beta * abs(cur_pos[p] - prev_pos[p2]) + gamma * abs(lat[p] - lat[p2])
            if ba < 0 or _better(v, rank[p2], bv, rank[ba]):
                bv = v
                ba = p2
        out_val[p] = bv
        out_arg[p] = ba


@numba.njit(cache=True)
def transition_general(prev_cost, prev_pos, cur_pos, lat, groups, beta, gamma, rank,
                       out_val, out_arg):
    """Weighted-L1 min-convolution for arbitrary axial positions.

    For each lateral group (states sharing one lateral value) the lower
    envelope of the cones c + beta|x - y| is swept forward and backward
    over positions sorted once; the lateral term is then added per group.
    Cost O(Q * |S|) plus sorting.
    """
    S = prev_cost.size
    Q, R = groups.shape
    qorder = np.argsort(cur_pos, kind="mergesort")
    fwd = np.empty(S, np.int64)
    bwd = np.empty(S, np.int64)
    for p in range(S):
        out_val[p] = np.inf
        out_arg[p] = -1
    for g in range(Q):
        members = groups[g]
        ypos = np.empty(R)
        for k in range(R):
            ypos[k] = prev_pos[members[k]]
        order = np.argsort(ypos, kind="mergesort")
        # forward: candidates with y <= x, key c - beta*y
        ptr = 0
        best = -1
        bkey = 0.0
        for t in range(S):
            p = qorder[t]
            x = cur_pos[p]
            while ptr < R and ypos[order[ptr]] <= x:
                c = members[order[ptr]]
                key = prev_cost[c] - beta * prev_pos[c]
                if best < 0 or _better(key, rank[c], bkey, rank[best]):
                    best = c
                    bkey = key
                ptr += 1
            fwd[p] = best
        # backward: candidates with y >= x, key c + beta*y
        ptr = R - 1
        best = -1
        for t in range(S - 1, -1, -1):
            p = qorder[t]
            x = cur_pos[p]
            while ptr >= 0 and ypos[order[ptr]] >= x:
                c = members[order[ptr]]
                key = prev_cost[c] + beta * prev_pos[c]
                if best < 0 or _better(key, rank[c], bkey, rank[best]):
                    best = c
                    bkey = key
                ptr -= 1
            bwd[p] = best
        for p in range(S):
            x = cur_pos[p]
            gv = np.inf
            ga = -1
            for c in (fwd[p], bwd[p]):
                if c < 0:
                    continue
                v = prev_cost[c] + beta * abs(x - prev_pos[c])
                if ga < 0 or _better(v, rank[c], gv, rank[ga]):
                    gv = v
                    ga = c
            tot = gv + gamma * abs(lat[p] - lat[ga])
            if out_arg[p] < 0 or _better(tot, rank[ga], out_val[p], rank[out_arg[p]]):
                out_val[p] = tot
                out_arg[p] = ga


@numba.njit(cache=True)
def _dt_1d(cost, pos, weight, rank, qpos, out_val, out_arg, idx, fwd):
    # min_k cost[k] + weight |qpos[t] - pos[k]| with pos and qpos ascending;
    # idx maps k to the global state id used for rank lookup
    K = cost.size
    T = qpos.size
    ptr = 0
    best = -1
    bkey = 0.0
    for t in range(T):
        while ptr < K and pos[ptr] <= qpos[t]:
            key = cost[ptr] - weight * pos[ptr]
            if best < 0 or _better(key, rank[idx[ptr]], bkey, rank[idx[best]]):
                best = ptr
                bkey = key
            ptr += 1
        fwd[t] = best
    ptr = K - 1
    best = -1
    for t in range(T - 1, -1, -1):
        while ptr >= 0 and pos[ptr] >= qpos[t]:
            key = cost[ptr] + weight * pos[ptr]
            if best < 0 or _better(key, rank[idx[ptr]], bkey, rank[idx[best]]):
                best = ptr
                bkey = key
            ptr -= 1
        gv = np.inf
        ga = -1
        for c in (fwd[t], best):
            if c < 0:
                continue
            v = cost[c] + weight * abs(qpos[t] - pos[c])
            if ga < 0 or _better(v, rank[idx[c]], gv, rank[idx[ga]]):
                gv = v
                ga = c
        out_val[t] = gv
        out_arg[t] = ga


@numba.njit(cache=True)
def transition_grid(prev_cost, a_vals, l_vals, beta, gamma, rank, out_val, out_arg):
    """Separable O(|S|) min-convolution when positions are the grid itself.

    First a lateral distance transform for every wrap state, then an axial
    one for every lateral state.  a_vals and l_vals must be ascending.
    """
    R = a_vals.size
    Q = l_vals.size
    D = np.empty((R, Q))
    Darg = np.empty((R, Q), np.int64)
    tv = np.empty(Q)
    ta = np.empty(Q, np.int64)
    idx = np.empty(Q, np.int64)
    scratch = np.empty(max(R, Q), np.int64)
    for r in range(R):
        if Q == 1:
            D[r, 0] = prev_cost[r]
            Darg[r, 0] = r
            continue
        for q in range(Q):
            idx[q] = r * Q + q
        _dt_1d(prev_cost[r * Q:(r + 1) * Q], l_vals, gamma, rank, l_vals, tv, ta, idx, scratch)
        for q in range(Q):
            D[r, q] = tv[q]
            Darg[r, q] = r * Q + ta[q]
    av = np.empty(R)
    aa = np.empty(R, np.int64)
    col = np.empty(R)
    for q in range(Q):
        for r in range(R):
            col[r] = D[r, q]
        # rank lookups go through the lateral argmin of each wrap state
        _dt_1d(col, a_vals, beta, rank, a_vals, av, aa, Darg[:, q].copy(), scratch)
        for r in range(R):
            out_val[r * Q + q] = av[r]
            out_arg[r * Q + q] = Darg[aa[r], q]


# --------------------------------------------------------------- viterbi

@numba.njit(cache=True)
def viterbi(dcost, alpha, lat, groups, beta, gamma, rank):
    """Exact min-cost state path through the (row, state) lattice.

    Returns (path, total_cost).  Costs accumulate as
    C_i = D_i + (C_{i-1} + R_i).
    """
    m, S = dcost.shape
    back = np.empty((m, S), np.int64)
    cost = dcost[0].copy()
    vals = np.empty(S)
    args = np.empty(S, np.int64)
    for i in range(1, m):
        transition_general(cost, alpha[i - 1], alpha[i], lat, groups, beta, gamma, rank, vals, args)
        for p in range(S):
            cost[p] = dcost[i, p] + vals[p]
            back[i, p] = args[p]
    best = 0
    for p in range(1, S):
        if _better(cost[p], rank[p], cost[best], rank[best]):
            best = p
    path = np.empty(m, np.int64)
    path[m - 1] = best
    for i in range(m - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path, cost[best]


@numba.njit(parallel=True, cache=True)
def track_columns(I1, I2, A, Jstack, a_vals, s_of_r, lam, lshift, lat, groups, rank,
                  half_w, w1, w2, scale, px_per_um, phase_sign, data_mode,
                  k_lo, k_hi, pad, s_lo, s_hi, beta, gamma, a_max,
                  out_axial, out_lateral, out_valid, out_cost):
    m, n = I1.shape
    S = rank.size
    for j in prange(n):
        alpha = np.empty((m, S))
        dcost = np.empty((m, S))
        winok = np.empty((m, S), np.bool_)
        column_lattice(j, I1, I2, A, Jstack, a_vals, s_of_r, lam, lshift, half_w, w1, w2,
                       scale, px_per_um, phase_sign, data_mode, k_lo, k_hi, pad, s_lo, s_hi,
                       alpha, dcost, winok)
        path, total = viterbi(dcost, alpha, lat, groups, beta, gamma, rank)
        for i in range(m):
            p = path[i]
            out_axial[i, j] = alpha[i, p]
            out_lateral[i, j] = lat[p]
            out_valid[i, j] = winok[i, p] and abs(alpha[i, p]) <= a_max
        out_cost[j] = total
