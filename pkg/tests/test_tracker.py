import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocedp import tracker as T
from ocedp.core import ComplexBScan
from ocedp.simulator import ConfigError, SimConfig, build_phantom, synthesize_bscan

LAM = 0.878
TOY = ComplexBScan(np.ones((4, 4), complex), 2.246, 12.0, LAM)


def grid_of(R, Q):
    """R wrap states and Q lateral states on the toy scan."""
    a_max = LAM / 2 * (R // 2) + 0.01
    l_max = 12.0 * (Q // 2) + 1 if Q > 1 else 0.0
    g = T.build_states(T.DPConfig(a_max=a_max, l_max=l_max), TOY)
    assert (g.R, g.Q) == (R - (1 - R % 2), Q - (1 - Q % 2))
    return g


def brute_force(D, alpha, lat, rank, beta, gamma):
    """Exhaustive minimum; ties go to the lexicographically smallest rank
    sequence read from the last row backwards."""
    m, S = D.shape
    best = None
    for ps in itertools.product(range(S), repeat=m):
        c = D[0, ps[0]]
        for i in range(1, m):
            c = D[i, ps[i]] + (c + beta * abs(alpha[i, ps[i]] - alpha[i - 1, ps[i - 1]])
                               + gamma * abs(lat[ps[i]] - lat[ps[i - 1]]))
        key = (c, tuple(rank[p] for p in reversed(ps)))
        if best is None or key < best[0]:
            best = (key, ps)
    return best[0][0], np.array(best[1])


# ------------------------------------------------------------------ states

def test_build_states_examples():
    g = T.build_states(T.DPConfig(a_max=1.0), TOY)
    assert np.allclose(g.a_values, [-0.878, -0.439, 0, 0.439, 0.878], atol=1e-15)
    assert list(g.l_values) == [0.0]
    g = T.build_states(T.DPConfig(a_max=0.1), TOY)
    assert list(g.a_values) == [0.0]
    g = T.build_states(T.DPConfig(a_max=150.0, l_max=30.0), TOY)
    assert g.R == 2 * 341 + 1 and list(g.l_values) == [-24, -12, 0, 12, 24]
    assert np.allclose(np.diff(g.a_values), LAM / 2, rtol=0, atol=1e-12)
    assert 0.0 in g.a_values
    p = 3 * g.Q + 1
    assert g.state(p) == (g.a_values[3], g.l_values[1])


def test_build_states_refractive_index():
    sc = ComplexBScan(np.ones((2, 2), complex), 2.246, 12.0, LAM, 1.4)
    g = T.build_states(T.DPConfig(a_max=1.0), sc)
    assert np.allclose(np.diff(g.a_values), LAM / 2.8)


def test_rank_order():
    g = grid_of(5, 3)
    r = np.repeat(g.r_values, g.Q)
    q = np.tile(np.arange(g.Q), g.R)
    order = np.argsort(g.rank())
    keys = [(abs(r[p]), r[p], q[p]) for p in order]
    assert keys == sorted(keys)


def test_config_validation():
    with pytest.raises(ConfigError):
        T.DPConfig(avg_width=3)
    with pytest.raises(ConfigError):
        T.DPConfig(a_max=0)
    with pytest.raises(ConfigError):
        T.DPConfig(beta=-1)
    with pytest.raises(ConfigError):
        T.DPConfig.from_dict({"alpha": 1})
    assert T.DPConfig.from_dict(T.DPConfig().to_dict()) == T.DPConfig()
    d = T.DPConfig()
    assert (d.a_max, d.avg_width, d.beta, d.gamma, d.w1, d.w2) == (150.0, 20, 1e-5, 1e-5, 5, 5)


# ------------------------------------------------------------ small pieces

def test_state_displacement_examples():
    assert T.state_displacement(0.0, 0.0, LAM) == 0.0
    assert T.state_displacement(0.0, math.pi, LAM) == pytest.approx(0.2195, abs=1e-12)
    assert T.state_displacement(3 * LAM / 2, 0.0, LAM) == pytest.approx(1.317, abs=1e-12)


def test_data_and_reg_cost():
    assert T.data_cost(1.0) == 0 and T.data_cost(-1.0) == 2 and T.data_cost(0.0) == 1
    assert T.data_cost(-0.4, "abs_ncc") == 0.4
    assert T.reg_cost(1.0, 2.0, 1.0, 2.0, 0.5, 0.5) == 0
    assert T.reg_cost(2.0, 3.0, 0.0, 0.0, 0.5, 0.5) == 2.5
    assert T.reg_cost(0.439, 0, 0, 0, 1e-5, 1e-5) == pytest.approx(4.39e-6, rel=1e-12)


def test_vector_phase_diff_examples(small_ref):
    I1 = small_ref
    amp, ph, low = T.vector_phase_diff(I1, I1, 100, 8, 0, 0, 20)
    cols = np.arange(0, 16)
    assert ph == pytest.approx(0.0, abs=1e-12) and not low
    assert amp == pytest.approx(np.sum(np.abs(I1.samples[100, cols]) ** 2), rel=1e-12)
    I2 = I1.with_samples(I1.samples * np.exp(0.3j))
    assert T.vector_phase_diff(I1, I2, 100, 8, 0, 0, 20)[1] == pytest.approx(0.3, abs=1e-12)
    assert T.vector_phase_diff(I1, I2, 100, 8, 0, 0, 20, phase_sign=-1)[1] == pytest.approx(-0.3, abs=1e-12)
    Z = I1.with_samples(np.zeros(I1.shape, complex))
    assert T.vector_phase_diff(I1, Z, 100, 8, 0, 0, 20) == (0.0, 0.0, True)


def test_vector_phase_diff_translation(small_ref, make_pair):
    I2 = make_pair(0.1)
    want = 4 * math.pi * 0.1 / LAM
    amp = np.abs(small_ref.samples)
    rows = np.argsort(amp[40:470, 8])[-20:] + 40
    got = [T.vector_phase_diff(small_ref, I2, i, 8, 0, 0, 20)[1] for i in rows]
    assert want == pytest.approx(1.431, abs=1e-3)
    assert abs(np.median(got) - want) < 0.05


def test_ncc_examples(small_ref):
    I1 = small_ref
    assert T.ncc(I1, I1, 200, 8, 0.0, 0.0, 5, 5) == pytest.approx(1.0, abs=1e-12)
    neg = I1.with_samples(-I1.samples)
    assert T.ncc(I1, neg, 200, 8, 0.0, 0.0, 5, 5) == pytest.approx(1.0, abs=1e-12)
    flat = I1.with_samples(np.ones(I1.shape, complex))
    assert T.ncc(I1, flat, 200, 8, 0.0, 0.0, 5, 5) == 0.0
    v, ok = T.ncc(I1, I1, 200, 8, 1e4, 0.0, 5, 5, return_valid=True)
    assert (v, ok) == (0.0, False)


def test_ncc_uncorrelated_speckle():
    cfg = SimConfig(n_alines=24, seed=101)
    A = synthesize_bscan(build_phantom(cfg), cfg)
    cfg2 = SimConfig(n_alines=24, seed=202)
    B = synthesize_bscan(build_phantom(cfg2), cfg2)
    rng = np.random.default_rng(0)
    vals = [abs(T.ncc(A, B, int(rng.integers(10, 500)), int(rng.integers(5, 19)), 0.0, 0.0, 5, 5))
            for _ in range(100)]
    assert np.mean(vals) < 0.3


def test_lattice_ncc_matches_direct(small_ref, make_pair):
    I2 = make_pair(2.3, 0.0)
    cfg = T.DPConfig(a_max=6.0, l_max=13.0, lateral_step=6.0)
    alpha, dcost, ok, g = T.column_lattice(small_ref, I2, cfg, 3)
    rng = np.random.default_rng(0)
    err = 0.0
    picks = [(int(rng.integers(0, 512)), int(rng.integers(g.size))) for _ in range(150)]
    picks += [(i, p) for i in (0, 1, 510, 511) for p in range(g.size)]
    for i, p in picks:
        c, v = T.ncc(small_ref, I2, i, 3, alpha[i, p], g.state(p)[1], 5, 5, return_valid=True)
        err = max(err, abs((1 - c) - dcost[i, p]))
        assert v == ok[i, p]
    assert err < 1e-9


def test_lattice_candidates_are_wrap_plus_phase(small_ref, make_pair):
    I2 = make_pair(0.1)
    alpha, _, _, g = T.column_lattice(small_ref, I2, T.DPConfig(a_max=2.0), 5)
    res = alpha - g.axial_of_states()[None, :]
    assert np.all(np.abs(res) <= LAM / 4 + 1e-12)


# ------------------------------------------------------------- transitions

def test_min_transition_trivial():
    g = grid_of(1, 1)
    v, a = T.min_transition(np.array([0.7]), g, 1.0, 1.0)
    assert v[0] == 0.7 and a[0] == 0
    g = grid_of(5, 3)
    c = np.random.default_rng(0).random(g.size)
    v, _ = T.min_transition(c, g, 0.0, 0.0)
    assert np.all(v == c.min())


@pytest.mark.parametrize("seed", range(5))
def test_min_transition_matches_naive(seed):
    rng = np.random.default_rng(seed)
    g = grid_of(5, 4 + 1)
    for _ in range(60):
        c = rng.random(g.size)
        if rng.random() < 0.3:
            c = np.round(c * 4) / 4
        b, gm = rng.random() * rng.choice([0, 1, 10]), rng.random() * rng.choice([0, 0.01, 0.1])
        v1, a1 = T.min_transition(c, g, b, gm)
        v2, a2 = T.min_transition_naive(c, g, b, gm)
        assert np.array_equal(v1, v2) or np.allclose(v1, v2, rtol=1e-12, atol=0)
        assert np.array_equal(a1, a2)
        pp, cp = rng.normal(size=g.size), rng.normal(size=g.size)
        v3, a3 = T.min_transition(c, g, b, gm, pp, cp)
        v4, a4 = T.min_transition_naive(c, g, b, gm, pp, cp)
        assert np.allclose(v3, v4, rtol=1e-12, atol=0)
        assert np.array_equal(a3, a4)


# ----------------------------------------------------------------- viterbi

def test_toy_lattice_m5_s6():
    rng = np.random.default_rng(7)
    g = grid_of(3, 2 + 1)
    g = T.StateGrid(g.r_values, g.a_values, g.l_values[:2])
    assert g.size == 6
    D = rng.random((5, 6))
    al = rng.normal(size=(5, 6))
    path, tot = T.viterbi_lattice(D, al, g, 0.3, 0.02)
    c, ps = brute_force(D, al, g.lateral_of_states(), g.rank(), 0.3, 0.02)
    assert tot == c
    assert np.array_equal(path, ps)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**31),
       st.booleans())
def test_viterbi_property(R, Q, m, seed, coarse):
    g = grid_of(2 * R - 1, 2 * Q - 1)
    g = T.StateGrid(g.r_values, g.a_values, g.l_values)
    S = g.size
    while S ** m > 50000:
        m -= 1
    rng = np.random.default_rng(seed)
    D = rng.random((m, S))
    al = rng.normal(size=(m, S))
    if coarse:
        D, al = np.round(D * 2) / 2, np.round(al)
    b, gm = float(rng.random()), float(rng.random() * 0.1)
    path, tot = T.viterbi_lattice(D, al, g, b, gm)
    c, ps = brute_force(D, al, g.lateral_of_states(), g.rank(), b, gm)
    assert tot == c
    assert np.array_equal(path, ps)


def test_viterbi_beats_random_paths(small_ref, make_pair):
    I2 = make_pair(1.7)
    cfg = T.DPConfig(a_max=4.0, beta=1e-3, gamma=1e-3)
    alpha, dcost, _, g = T.column_lattice(small_ref, I2, cfg, 7)
    path, tot = T.viterbi_lattice(dcost, alpha, g, cfg.beta, cfg.gamma)
    rows = np.arange(alpha.shape[0])

    def cost(ps):
        a = alpha[rows, ps]
        return dcost[rows, ps].sum() + cfg.beta * np.abs(np.diff(a)).sum()

    assert cost(path) == pytest.approx(tot, rel=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        ps = rng.integers(0, g.size, rows.size)
        assert cost(ps) >= tot - 1e-9


def test_track_reports_viterbi_cost(small_ref, make_pair):
    I2 = make_pair(1.7)
    cfg = T.DPConfig(a_max=4.0, beta=1e-3, gamma=1e-3)
    fld, cost = T.track(small_ref, I2, cfg, return_cost=True)
    for j in (0, 7, 15):
        alpha, dcost, ok, g = T.column_lattice(small_ref, I2, cfg, j)
        path, tot = T.viterbi_lattice(dcost, alpha, g, cfg.beta, cfg.gamma)
        assert cost[j] == tot
        assert np.array_equal(fld.axial[:, j], alpha[np.arange(alpha.shape[0]), path])


# ------------------------------------------------------------------- track

def test_identical_scans_give_zero(small_ref):
    fld = T.track(small_ref, small_ref, T.DPConfig(l_max=13.0))
    assert np.all(fld.axial == 0) and np.all(fld.lateral == 0)
    assert fld.valid.all()


def test_rigid_translation_two_pixels(small_cfg, small_ref, make_pair):
    for u in (2 * small_cfg.axial_pitch, 8.96):
        fld = T.track(small_ref, make_pair(u))
        a = fld.axial[20:480]
        assert np.mean(np.abs(a - u) < LAM / 8) > 0.99
        assert abs(np.median(a) - u) < LAM / 8


def test_greedy_when_unregularised(small_ref, make_pair):
    I2 = make_pair(0.9)
    cfg = T.DPConfig(a_max=3.0, beta=0.0, gamma=0.0)
    fld = T.track(small_ref, I2, cfg)
    for j in (2, 9):
        alpha, dcost, _, g = T.column_lattice(small_ref, I2, cfg, j)
        rank = g.rank()
        for i in range(0, 512, 7):
            best = np.flatnonzero(dcost[i] == dcost[i].min())
            p = best[np.argmin(rank[best])]
            assert fld.axial[i, j] == alpha[i, p]


def test_global_phase_robustness(small_ref, make_pair):
    I2 = make_pair(1.2)
    cfg = T.DPConfig(a_max=5.0, l_max=13.0)
    base = T.track(small_ref, I2, cfg)
    th = 0.5
    rot = T.track(small_ref, I2.with_samples(I2.samples * np.exp(1j * th)), cfg)
    shift = LAM * th / (4 * math.pi)
    d = rot.axial - base.axial - shift
    assert np.median(np.abs(d)) < 1e-9
    assert np.mean(np.abs(d) < 1e-6) > 0.98
    assert np.array_equal(rot.lateral, base.lateral)


def test_output_bounds(small_ref, make_pair):
    cfg = T.DPConfig(a_max=3.0, l_max=13.0)
    fld = T.track(small_ref, make_pair(5.0), cfg)
    lim = cfg.a_max + LAM / 4
    assert np.all(np.abs(fld.axial[fld.valid]) < lim)
    assert np.all(np.abs(fld.lateral) <= cfg.l_max)


def test_track_rejects_mismatch(small_ref):
    other = small_ref.with_samples(small_ref.samples[:100])
    with pytest.raises(ValueError):
        T.track(small_ref, other)


def test_jobs_do_not_change_output(small_ref, make_pair):
    I2 = make_pair(3.1)
    a = T.track(small_ref, I2, jobs=1)
    b = T.track(small_ref, I2, jobs=4)
    assert a.axial.tobytes() == b.axial.tobytes()
