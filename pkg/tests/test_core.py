import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocedp.core import (ComplexBScan, DisplacementField, OCBHeaderError, OCBNonFiniteError,
                        OCBTruncatedError, StrainField, decode_bscan, encode_bscan,
                        read_bscan, read_displacement_csv, read_displacement_grid,
                        read_sidecar, write_bscan, write_displacement_csv,
                        write_displacement_grid)

from conftest import rand_scan


def test_one_by_one_roundtrip(tmp_path):
    sc = ComplexBScan(np.array([[1.0 + 0j]]), 2.0, 12.0, 0.878)
    write_bscan(sc, tmp_path / "a.ocb")
    back = read_bscan(tmp_path / "a.ocb")
    assert back.shape == (1, 1)
    assert back.samples[0, 0] == 1 + 0j
    assert back.same_as(sc)


def test_three_by_two_byte_layout(tmp_path):
    s = np.array([[1 + 2j, 3 - 4j], [0.5 + 0j, 0 - 1.25j], [7 + 8j, -9 - 10j]])
    sc = ComplexBScan(s, 2.25, 12.0, 0.878, 1.4)
    write_bscan(sc, tmp_path / "b.ocb")
    raw = (tmp_path / "b.ocb").read_bytes()
    # hand-built reference dump
    want = b"OCB1" + (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
    for v in (2.25, 12.0, 0.878, 1.4):
        want += struct.pack("<d", v)
    for re, im in [(1, 2), (3, -4), (0.5, 0), (0, -1.25), (7, 8), (-9, -10)]:
        want += struct.pack("<ff", re, im)
    assert len(raw) == 4 + 4 + 4 + 32 + 6 * 8
    assert raw == want


def test_nan_rejected_before_writing(tmp_path):
    with pytest.raises(ValueError):
        ComplexBScan(np.array([[np.nan + 0j]]), 1.0, 1.0, 1.0)
    sc = ComplexBScan(np.array([[1e39 + 0j]]), 1.0, 1.0, 1.0)
    with pytest.raises(OCBNonFiniteError):
        write_bscan(sc, tmp_path / "x.ocb")
    assert not (tmp_path / "x.ocb").exists()


def test_distinct_errors():
    good = encode_bscan(ComplexBScan(np.ones((2, 2), complex), 1.0, 1.0, 1.0))
    with pytest.raises(OCBHeaderError):
        decode_bscan(b"XCB1" + good[4:])
    with pytest.raises(OCBTruncatedError):
        decode_bscan(good[:-3])
    with pytest.raises(OCBTruncatedError):
        decode_bscan(good[:20])
    bad = bytearray(good)
    bad[-4:] = struct.pack("<f", float("inf"))
    with pytest.raises(OCBNonFiniteError):
        decode_bscan(bytes(bad))
    bad = bytearray(good)
    bad[4:8] = (0).to_bytes(4, "little")
    with pytest.raises(OCBHeaderError):
        decode_bscan(bytes(bad))


def test_invariants():
    with pytest.raises(ValueError):
        ComplexBScan(np.ones((2, 2), complex), 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ComplexBScan(np.ones((2, 2), complex), 1.0, 1.0, 1.0, 0.9)
    sc = ComplexBScan(np.array([[-1 + 0j, -1 - 1e-300j]]), 1.0, 1.0, 1.0)
    ph = sc.phase
    assert np.all(ph > -np.pi) and np.all(ph <= np.pi)
    assert np.all(sc.amplitude >= 0)
    with pytest.raises(ValueError):
        sc.samples[0, 0] = 3


def test_sidecar(tmp_path):
    sc = ComplexBScan(np.ones((2, 3), complex), 1.0, 1.0, 1.0)
    write_bscan(sc, tmp_path / "s.ocb", extra={"note": "x"})
    assert read_sidecar(tmp_path / "s.ocb") == {"note": "x"}


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_roundtrip_property(m, n, seed):
    sc = rand_scan(np.random.default_rng(seed), m, n, rn=1.33)
    back = decode_bscan(encode_bscan(sc))
    assert np.array_equal(back.samples, sc.samples)
    assert back.metadata() == sc.metadata()
    assert encode_bscan(back) == encode_bscan(sc)


def _field(rng, m=5, n=4):
    return DisplacementField(rng.normal(size=(m, n)), rng.normal(size=(m, n)),
                             rng.random((m, n)) > 0.3, 2.246, 12.0, 1.0)


def test_displacement_csv_and_grid(tmp_path):
    f = _field(np.random.default_rng(0))
    write_displacement_csv(f, tmp_path / "d.csv")
    g = read_displacement_csv(tmp_path / "d.csv", 2.246, 12.0)
    assert np.array_equal(g.axial, f.axial) and np.array_equal(g.valid, f.valid)
    write_displacement_grid(f, tmp_path / "d.odf", 0.878)
    h = read_displacement_grid(tmp_path / "d.odf")
    assert np.array_equal(h.axial, f.axial.astype(np.float32))
    assert np.array_equal(h.valid, f.valid)
    assert h.axial_pitch == 2.246


def test_strain_field_checks():
    with pytest.raises(ValueError):
        StrainField(np.array([[np.inf]]), np.array([[True]]), 48.0)
    with pytest.raises(ValueError):
        DisplacementField(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2), bool), 1.0, 1.0)
