"""Spectral-domain OCT simulation of point-scatterer phantoms.

Each A-line is synthesised from its scatterers independently: the complex
spectrum over ``N`` discrete spectral lines is summed exactly for every
(sub-pixel) scatterer position, transformed to depth, multiplied by the
spectrometer pixel/resolution roll-off functions, and cropped to the
non-mirrored half.  Random streams are keyed on ``(seed, stream, column)``
so output never depends on how columns are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numba
import numpy as np

from .core import ComplexBScan

_PHANTOM_TAG = 0x5CA7
_NOISE_TAG = 0x9015E


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SimConfig:
    n_lines: int = 1025                # odd; yields 512 image pixels
    depth_um: float = 2300.0           # total depth H in air
    wavelength: float = 0.878          # lambda0, um
    bandwidth: float = 0.0625          # spectral FWHM, um
    source_power: float = 2.9e-3       # p0, W
    noise_power: float = 2.9e-13       # p_n, W
    attenuation: float = 5e-4          # mu_t, 1/um (500 1/m)
    density: float = 2.0               # scatterers per axial pixel
    spectral_resolution: float = 4e-4  # sigma_r, rad/um
    n_alines: int = 128
    lateral_pitch: float = 12.0
    refractive_index: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_lines) != self.n_lines or self.n_lines < 3 or self.n_lines % 2 == 0:
            raise ConfigError("n_lines", f"must be an odd integer >= 3, got {self.n_lines}")
        positive = ("depth_um", "wavelength", "bandwidth", "density", "lateral_pitch")
        for name in positive:
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(name, f"must be > 0, got {v}")
        for name in ("source_power", "noise_power", "attenuation", "spectral_resolution"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(name, f"must be >= 0, got {v}")
        if self.bandwidth >= 2 * self.wavelength:
            raise ConfigError("bandwidth", "must be smaller than twice the wavelength")
        if int(self.n_alines) != self.n_alines or self.n_alines < 1:
            raise ConfigError("n_alines", f"must be a positive integer, got {self.n_alines}")
        if not self.refractive_index >= 1:
            raise ConfigError("refractive_index", f"must be >= 1, got {self.refractive_index}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed}")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown SimConfig field")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    # derived quantities
    @property
    def k0(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def line_spacing(self) -> float:
        """Wavenumber spacing between spectral lines, pi/H (rad/um)."""
        return np.pi / self.depth_um

    @property
    def k_width(self) -> float:
        """Spectral FWHM expressed in wavenumber (rad/um)."""
        lo = self.wavelength - self.bandwidth / 2
        hi = self.wavelength + self.bandwidth / 2
        return 2 * np.pi / lo - 2 * np.pi / hi

    @property
    def sigma_k(self) -> float:
        return self.k_width / (2 * np.sqrt(2 * np.log(2)))

    @property
    def line_indices(self) -> np.ndarray:
        h = (self.n_lines - 1) // 2
        return np.arange(-h, h + 1)

    @property
    def wavenumbers(self) -> np.ndarray:
        return self.k0 + self.line_indices * self.line_spacing

    @property
    def depth_px(self) -> int:
        return self.n_lines // 2

    @property
    def axial_pitch(self) -> float:
        return self.depth_um / (self.n_lines - 1)

    @property
    def image_depth(self) -> float:
        """Optical depth of the kept (non-mirrored) half, H/2."""
        return self.depth_um / 2

    @property
    def phantom_depth(self) -> float:
        """Physical depth range available to scatterers."""
        return self.image_depth / self.refractive_index


@dataclass(frozen=True, eq=False)
class ScattererField:
    """Scatterers per A-line: physical depth (um) and base strength."""

    z: tuple
    strength: tuple
    lateral_pitch: float = 12.0
    lateral_um: float = 0.0
    dropped: int = 0

    def __post_init__(self):
        if len(self.z) != len(self.strength):
            raise ValueError("z and strength must list the same A-lines")
        zs = tuple(np.asarray(a, dtype=np.float64).ravel() for a in self.z)
        ss = tuple(np.asarray(a, dtype=np.float64).ravel() for a in self.strength)
        for a, b in zip(zs, ss):
            if a.shape != b.shape:
                raise ValueError("per-line z/strength length mismatch")
            if b.size and not (np.all(np.isfinite(b)) and np.all(b > 0)):
                raise ValueError("strengths must be positive and finite")
            a.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "z", zs)
        object.__setattr__(self, "strength", ss)

    @property
    def n_alines(self) -> int:
        return len(self.z)

    def count(self) -> int:
        return int(sum(a.size for a in self.z))

    def column(self, j: int) -> "ScattererField":
        return ScattererField((self.z[j],), (self.strength[j],), self.lateral_pitch)

    def union(self, other: "ScattererField") -> "ScattererField":
        if other.n_alines != self.n_alines:
            raise ValueError("fields have different A-line counts")
        return ScattererField(
            tuple(np.concatenate([a, b]) for a, b in zip(self.z, other.z)),
            tuple(np.concatenate([a, b]) for a, b in zip(self.strength, other.strength)),
            self.lateral_pitch)

    def permute(self, order: Sequence[int]) -> "ScattererField":
        return ScattererField(tuple(self.z[k] for k in order),
                              tuple(self.strength[k] for k in order),
                              self.lateral_pitch, self.lateral_um, self.dropped)


@dataclass(frozen=True, eq=False)
class DeformationProfile:
    """Piecewise-linear axial displacement u(z) plus a lateral translation."""

    z: np.ndarray
    u: np.ndarray
    lateral_um: float = 0.0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        if z.ndim != 1 or z.shape != u.shape or z.size < 2:
            raise ValueError("need at least two (z, u) breakpoints")
        if np.any(np.diff(z) <= 0):
            raise ValueError("breakpoints must be strictly increasing in z")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(u))):
            raise ValueError("breakpoints must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "u", u)

    @classmethod
    def constant(cls, u: float, depth: float, lateral_um: float = 0.0) -> "DeformationProfile":
        return cls(np.array([0.0, depth]), np.array([u, u]), lateral_um)

    @classmethod
    def from_dict(cls, d: dict, depth: float | None = None) -> "DeformationProfile":
        """Build from ``layered_strain``, ``translation_um`` or explicit
        ``z_um``/``u_um`` breakpoints; ``depth_um`` defaults to ``depth``."""
        known = {"layered_strain", "translation_um", "z_um", "u_um", "depth_um", "lateral_um"}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown deformation field")
        lat = float(d.get("lateral_um", 0.0))
        dep = d.get("depth_um", depth)
        try:
            if "layered_strain" in d or "translation_um" in d:
                if dep is None:
                    raise ConfigError("depth_um", "required")
                if "layered_strain" in d:
                    p = layered_profile(float(d["layered_strain"]), float(dep))
                    return cls(p.z, p.u, lat)
                return cls.constant(float(d["translation_um"]), float(dep), lat)
            if "z_um" not in d or "u_um" not in d:
                raise ConfigError("deformation", "need layered_strain, translation_um or z_um/u_um")
            return cls(np.asarray(d["z_um"], dtype=float), np.asarray(d["u_um"], dtype=float), lat)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("deformation", str(exc)) from exc

    def to_dict(self) -> dict:
        return {"z_um": self.z.tolist(), "u_um": self.u.tolist(), "lateral_um": self.lateral_um}

    def covers(self, z) -> bool:
        z = np.asarray(z)
        return bool(np.all((z >= self.z[0]) & (z <= self.z[-1])))

    def displacement(self, z) -> np.ndarray:
        return np.interp(z, self.z, self.u)

    def strain(self, z) -> np.ndarray:
        """Slope du/dz; at a breakpoint the slope of the segment below it."""
        slopes = np.diff(self.u) / np.diff(self.z)
        k = np.clip(np.searchsorted(self.z, z, side="right") - 1, 0, slopes.size - 1)
        return slopes[k]


# ---------------------------------------------------------------- operations

def spectral_amplitude(n, cfg: SimConfig):
    """Gaussian source amplitude I(k_n) for line index ``n`` (scalar or array)."""
    n_arr = np.asarray(n)
    h = (cfg.n_lines - 1) // 2
    if np.any(np.abs(n_arr) > h) or np.any(n_arr != np.round(n_arr)):
        raise IndexError(f"line index out of range [-{h}, {h}]")
    sk = cfg.sigma_k
    dk = n_arr * cfg.line_spacing
    out = np.exp(-dk ** 2 / (2 * sk ** 2)) / np.sqrt(2 * np.pi * sk ** 2)
    return float(out) if np.ndim(out) == 0 else out


def build_phantom(cfg: SimConfig) -> ScattererField:
    """Poisson number of scatterers per A-line, uniform in depth."""
    zmax = cfg.phantom_depth
    mean = cfg.density * cfg.depth_px
    zs, ss = [], []
    for j in range(cfg.n_alines):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _PHANTOM_TAG, j]))
        k = rng.poisson(mean)
        z = np.sort(rng.uniform(0.0, zmax, k))
        zs.append(z)
        ss.append(rng.uniform(0.5, 1.5, k))
    return ScattererField(tuple(zs), tuple(ss), cfg.lateral_pitch)


@numba.njit(cache=True)
def _line_spectrum(z_opt, weight, k_lo, dk, n_lines):
    # sum_s weight_s * exp(i 2 k_n z_s); the n-recurrence is re-seeded every
    # 64 lines to bound drift
    out = np.zeros(n_lines, dtype=np.complex128)
    for s in range(z_opt.size):
        z = z_opt[s]
        w = weight[s]
        step = complex(math.cos(2 * dk * z), math.sin(2 * dk * z))
        cur = 0j
        for n in range(n_lines):
            if n % 64 == 0:
                ph = 2.0 * (k_lo + n * dk) * z
                cur = complex(math.cos(ph), math.sin(ph))
            else:
                cur = cur * step
            out[n] += w * cur
    return out


def _depth_kernel(cfg: SimConfig) -> np.ndarray:
    # exp(-i 2 pi n z_q / H) for the kept depth samples, times g(z) f(z)
    q = np.arange(cfg.depth_px)
    zq = q * cfg.axial_pitch
    n = cfg.line_indices
    e = np.exp(-2j * np.pi * np.outer(n, zq) / cfg.depth_um)
    g = np.sinc(cfg.line_spacing * zq / np.pi) / (2 * np.pi)
    f = np.exp(-2 * zq ** 2 * cfg.spectral_resolution ** 2) / np.sqrt(2 * np.pi)
    return e * (g * f)[None, :]


def _check_range(z: np.ndarray, cfg: SimConfig):
    if z.size and (z.min() < 0 or z.max() >= cfg.phantom_depth):
        raise ValueError(f"scatterer outside [0, {cfg.phantom_depth}) um")


def _synth_column(z, strength, cfg: SimConfig, kernel: np.ndarray, rng) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    _check_range(z, cfg)
    m = cfg.depth_px
    if z.size:
        w = np.asarray(strength, dtype=np.float64) * np.exp(-cfg.attenuation * z)
        k_lo = float(cfg.wavenumbers[0])
        spec = _line_spectrum(z * cfg.refractive_index, w, k_lo, cfg.line_spacing, cfg.n_lines)
        spec = spec * (cfg.source_power * spectral_amplitude(cfg.line_indices, cfg))
        line = spec @ kernel
    else:
        line = np.zeros(m, dtype=np.complex128)
    if cfg.noise_power > 0:
        sd = np.sqrt(cfg.noise_power / m / 2)
        line = line + sd * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    return line


def _noise_rng(cfg: SimConfig, stream: int, column: int):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, _NOISE_TAG, stream, column]))


def synthesize_aline(z, strength, cfg: SimConfig, stream: int = 0, column: int = 0) -> np.ndarray:
    """Complex A-line (length N//2) for one list of scatterers."""
    return _synth_column(z, strength, cfg, _depth_kernel(cfg), _noise_rng(cfg, stream, column))


def synthesize_bscan(fld: ScattererField, cfg: SimConfig, stream: int = 0,
                     jobs: int | None = 1) -> ComplexBScan:
    """Synthesise every column independently (no lateral coupling).

    ``stream`` selects an independent noise realisation, e.g. one per
    deformed frame.
    """
    kernel = _depth_kernel(cfg)

    def one(j):
        return _synth_column(fld.z[j], fld.strength[j], cfg, kernel, _noise_rng(cfg, stream, j))

    if jobs and jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as ex:
            cols = list(ex.map(one, range(fld.n_alines)))
    else:
        cols = [one(j) for j in range(fld.n_alines)]
    samples = np.stack(cols, axis=1)
    return ComplexBScan(samples, cfg.axial_pitch, cfg.lateral_pitch, cfg.wavelength,
                        cfg.refractive_index)


def layered_profile(outer_strain: float, depth: float) -> DeformationProfile:
    """Three equal layers; the middle one strains twice as much."""
    if not 0 <= outer_strain <= 0.2:
        raise ValueError("outer_strain must lie in [0, 0.2]")
    if depth <= 0:
        raise ValueError("depth must be positive")
    e = outer_strain
    z = np.array([0.0, depth / 3, 2 * depth / 3, depth])
    u = np.array([0.0, e * depth / 3, e * depth, 4 * e * depth / 3])
    return DeformationProfile(z, u)


def layer_boundaries(depth: float) -> np.ndarray:
    return np.array([depth / 3, 2 * depth / 3])


def deform_phantom(fld: ScattererField, profile: DeformationProfile,
                   depth_limit: float | None = None) -> ScattererField:
    """Move each scatterer to z + u(z); lateral shifts roll whole A-lines.

    Scatterers that leave ``[0, depth_limit)`` are dropped and counted in
    the returned field's ``dropped``.
    """
    if depth_limit is None:
        depth_limit = profile.z[-1]
    zs, ss = [], []
    dropped = fld.dropped
    for z, s in zip(fld.z, fld.strength):
        if not profile.covers(z):
            raise ValueError("deformation profile does not cover the phantom depth range")
        zn = z + profile.displacement(z)
        keep = (zn >= 0) & (zn < depth_limit)
        dropped += int(np.count_nonzero(~keep))
        zs.append(zn[keep])
        ss.append(s[keep])
    lat = profile.lateral_um
    if lat:
        k = lat / fld.lateral_pitch
        if abs(k - round(k)) > 1e-9:
            raise ValueError("lateral translation must be a whole number of A-lines")
        k = int(round(k))
        nl = len(zs)
        zs = [zs[(j - k) % nl] for j in range(nl)]
        ss = [ss[(j - k) % nl] for j in range(nl)]
    return ScattererField(tuple(zs), tuple(ss), fld.lateral_pitch, fld.lateral_um + lat, dropped)


# -------------------------------------------------------------- persistence

def write_phantom_csv(fld: ScattererField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "z_um", "strength"])
        for j, (z, s) in enumerate(zip(fld.z, fld.strength)):
            for a, b in zip(z, s):
                w.writerow([j, repr(float(a)), repr(float(b))])


def read_phantom_csv(path, n_alines: int, lateral_pitch: float = 12.0) -> ScattererField:
    cols: list[list[tuple[float, float]]] = [[] for _ in range(n_alines)]
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cols[int(row["column"])].append((float(row["z_um"]), float(row["strength"])))
    zs = tuple(np.array([a for a, _ in c]) for c in cols)
    ss = tuple(np.array([b for _, b in c]) for c in cols)
    return ScattererField(zs, ss, lateral_pitch)
