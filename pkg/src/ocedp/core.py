"""Shared data model and on-disk formats.

Units: lengths in micrometres, angles in radians. Depth index ``i`` grows
with physical depth and a positive axial displacement points deeper.
``axial_pitch`` is the optical (in-air) sample spacing; the physical depth
of row ``i`` inside a medium of refractive index ``r_n`` is
``i * axial_pitch / r_n``.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

OCB_MAGIC = b"OCB1"
ODF_MAGIC = b"ODF1"
_HEADER = struct.Struct("<4sIIdddd")
_F32_MAX = float(np.finfo(np.float32).max)


class OCBError(ValueError):
    """Base class for B-scan file problems."""


class OCBHeaderError(OCBError):
    pass


class OCBTruncatedError(OCBError):
    pass


class OCBNonFiniteError(OCBError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ComplexBScan:
    """Complex OCT B-scan, rows = depth samples, columns = A-lines."""

    samples: np.ndarray
    axial_pitch: float
    lateral_pitch: float
    wavelength: float
    refractive_index: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"samples must be a non-empty 2D array, got shape {s.shape}")
        s = s.astype(np.complex128)
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        for name in ("axial_pitch", "lateral_pitch", "wavelength"):
            v = float(getattr(self, name))
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, v)
        rn = float(self.refractive_index)
        if not (rn >= 1.0 and np.isfinite(rn)):
            raise ValueError(f"refractive_index must be >= 1, got {rn}")
        object.__setattr__(self, "refractive_index", rn)
        object.__setattr__(self, "samples", _frozen(s))

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.samples)

    @property
    def phase(self) -> np.ndarray:
        """Sample phase in (-pi, pi]."""
        ph = np.angle(self.samples)
        ph[ph == -np.pi] = np.pi
        return ph

    @property
    def depth_pitch(self) -> float:
        """Physical depth spacing of rows inside the sample (um)."""
        return self.axial_pitch / self.refractive_index

    def with_samples(self, samples: np.ndarray) -> "ComplexBScan":
        return ComplexBScan(samples, self.axial_pitch, self.lateral_pitch,
                            self.wavelength, self.refractive_index)

    def metadata(self) -> dict[str, float]:
        return {
            "axial_pitch_um": self.axial_pitch,
            "lateral_pitch_um": self.lateral_pitch,
            "lambda0_um": self.wavelength,
            "refractive_index": self.refractive_index,
        }

    def same_as(self, other: "ComplexBScan") -> bool:
        """Bit-exact equality of samples and metadata."""
        return (self.shape == other.shape
                and self.samples.tobytes() == other.samples.tobytes()
                and self.metadata() == other.metadata())


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Axial and lateral displacement (um) per pixel plus a validity mask.

    ``has_lateral`` is False for axial-only estimators; their lateral
    matrix is zero and carries no information.
    """

    axial: np.ndarray
    lateral: np.ndarray
    valid: np.ndarray
    axial_pitch: float = 1.0
    lateral_pitch: float = 1.0
    refractive_index: float = 1.0
    has_lateral: bool = True

    def __post_init__(self):
        ax = np.asarray(self.axial, dtype=np.float64)
        lat = np.asarray(self.lateral, dtype=np.float64)
        val = np.asarray(self.valid, dtype=bool)
        if ax.ndim != 2 or ax.shape != lat.shape or ax.shape != val.shape:
            raise ValueError("axial, lateral and valid must share one 2D shape")
        object.__setattr__(self, "axial", _frozen(ax))
        object.__setattr__(self, "lateral", _frozen(lat))
        object.__setattr__(self, "valid", _frozen(val))

    @property
    def shape(self) -> tuple[int, int]:
        return self.axial.shape

    @property
    def depths(self) -> np.ndarray:
        """Physical depth of each row (um)."""
        return np.arange(self.shape[0]) * (self.axial_pitch / self.refractive_index)

    @classmethod
    def like(cls, scan: ComplexBScan, axial, lateral, valid,
             has_lateral: bool = True) -> "DisplacementField":
        return cls(axial, lateral, valid, scan.axial_pitch, scan.lateral_pitch,
                   scan.refractive_index, has_lateral)

    def replace(self, **kw) -> "DisplacementField":
        d = dict(axial=self.axial, lateral=self.lateral, valid=self.valid,
                 axial_pitch=self.axial_pitch, lateral_pitch=self.lateral_pitch,
                 refractive_index=self.refractive_index, has_lateral=self.has_lateral)
        d.update(kw)
        return DisplacementField(**d)


@dataclass(frozen=True, eq=False)
class StrainField:
    strain: np.ndarray
    valid: np.ndarray
    window_um: float

    def __post_init__(self):
        s = np.asarray(self.strain, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if s.shape != v.shape:
            raise ValueError("strain and valid shapes differ")
        s = np.where(v, s, 0.0)
        if not np.all(np.isfinite(s)):
            raise ValueError("strain values must be finite")
        object.__setattr__(self, "strain", _frozen(s))
        object.__setattr__(self, "valid", _frozen(v))


# ---------------------------------------------------------------- OCB files

def encode_bscan(scan: ComplexBScan) -> bytes:
    s = scan.samples
    if not np.all(np.isfinite(s)):
        raise OCBNonFiniteError("refusing to write non-finite samples")
    if np.max(np.abs(s.real), initial=0.0) > _F32_MAX or np.max(np.abs(s.imag), initial=0.0) > _F32_MAX:
        raise OCBNonFiniteError("sample magnitude overflows float32")
    m, n = s.shape
    head = _HEADER.pack(OCB_MAGIC, m, n, scan.axial_pitch, scan.lateral_pitch,
                        scan.wavelength, scan.refractive_index)
    body = np.empty((m, n, 2), dtype="<f4")
    body[..., 0] = s.real
    body[..., 1] = s.imag
    return head + body.tobytes()


def decode_bscan(data: bytes) -> ComplexBScan:
    if len(data) < _HEADER.size:
        if data[:4] != OCB_MAGIC[:len(data[:4])]:
            raise OCBHeaderError("bad magic")
        raise OCBTruncatedError(f"header needs {_HEADER.size} bytes, got {len(data)}")
    magic, m, n, ap, lp, lam, rn = _HEADER.unpack_from(data)
    if magic != OCB_MAGIC:
        raise OCBHeaderError(f"bad magic {magic!r}")
    if m < 1 or n < 1:
        raise OCBHeaderError(f"invalid dimensions {m}x{n}")
    if not (ap > 0 and lp > 0 and lam > 0 and rn >= 1) or not np.all(np.isfinite([ap, lp, lam, rn])):
        raise OCBHeaderError("invalid optical metadata in header")
    need = _HEADER.size + 8 * m * n
    if len(data) < need:
        raise OCBTruncatedError(f"payload truncated: {len(data)} of {need} bytes")
    if len(data) > need:
        raise OCBHeaderError(f"{len(data) - need} trailing bytes after payload")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(m, n, 2)
    if not np.all(np.isfinite(body)):
        raise OCBNonFiniteError("file contains non-finite samples")
    samples = body[..., 0].astype(np.float64) + 1j * body[..., 1].astype(np.float64)
    return ComplexBScan(samples, ap, lp, lam, rn)


def write_bscan(scan: ComplexBScan, path, extra: Mapping[str, Any] | None = None) -> None:
    """Write ``scan`` in OCB format; ``extra`` goes to a JSON sidecar."""
    data = encode_bscan(scan)
    path = Path(path)
    path.write_bytes(data)
    if extra is not None:
        path.with_suffix(".json").write_text(json.dumps(dict(extra), indent=2, sort_keys=True))


def read_bscan(path) -> ComplexBScan:
    return decode_bscan(Path(path).read_bytes())


def read_sidecar(path) -> dict:
    side = Path(path).with_suffix(".json")
    return json.loads(side.read_text()) if side.exists() else {}


# ------------------------------------------------------ displacement output

def write_displacement_csv(fld: DisplacementField, path) -> None:
    m, n = fld.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "axial_um", "lateral_um", "valid"])
        for i in range(m):
            for j in range(n):
                w.writerow([i, j, repr(float(fld.axial[i, j])),
                            repr(float(fld.lateral[i, j])), int(fld.valid[i, j])])


def read_displacement_csv(path, axial_pitch=1.0, lateral_pitch=1.0,
                          refractive_index=1.0) -> DisplacementField:
    rows = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="ascii")
    m = int(rows["i"].max()) + 1
    n = int(rows["j"].max()) + 1
    ax = np.zeros((m, n))
    lat = np.zeros((m, n))
    val = np.zeros((m, n), bool)
    ax[rows["i"], rows["j"]] = rows["axial_um"]
    lat[rows["i"], rows["j"]] = rows["lateral_um"]
    val[rows["i"], rows["j"]] = rows["valid"].astype(bool)
    return DisplacementField(ax, lat, val, axial_pitch, lateral_pitch, refractive_index)


def write_displacement_grid(fld: DisplacementField, path, wavelength: float = 0.0) -> None:
    """Binary grid: OCB-style header with magic ``ODF1``, then per pixel
    f32 axial, f32 lateral (row-major), then one validity byte per pixel."""
    m, n = fld.shape
    head = _HEADER.pack(ODF_MAGIC, m, n, fld.axial_pitch, fld.lateral_pitch,
                        float(wavelength), fld.refractive_index)
    body = np.empty((m, n, 2), dtype="<f4")
    body[..., 0] = fld.axial
    body[..., 1] = fld.lateral
    Path(path).write_bytes(head + body.tobytes() + fld.valid.astype(np.uint8).tobytes())


def read_displacement_grid(path) -> DisplacementField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise OCBTruncatedError("displacement grid header truncated")
    magic, m, n, ap, lp, _lam, rn = _HEADER.unpack_from(data)
    if magic != ODF_MAGIC:
        raise OCBHeaderError(f"bad magic {magic!r}")
    need = _HEADER.size + 9 * m * n
    if len(data) != need:
        raise OCBTruncatedError(f"expected {need} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size, count=2 * m * n).reshape(m, n, 2)
    valid = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size + 8 * m * n).reshape(m, n)
    return DisplacementField(body[..., 0].astype(np.float64), body[..., 1].astype(np.float64),
                             valid.astype(bool), ap, lp, rn)
