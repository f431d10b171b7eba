"""Simulation and phase/intensity displacement tracking for OCT elastography."""

import warnings

import numba

# try OpenMP before TBB so an outdated TBB install is never probed
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

from .core import (ComplexBScan, DisplacementField, StrainField, read_bscan,  # noqa: E402
                   write_bscan)
from .simulator import (ConfigError, DeformationProfile, ScattererField,  # noqa: E402
                        SimConfig, build_phantom, deform_phantom, layered_profile,
                        synthesize_aline, synthesize_bscan)
from .tracker import DPConfig, StateGrid, build_states, track  # noqa: E402
from .baselines import (BaselineConfig, cc_track, ccvp_track, kasai_track,  # noqa: E402
                        vp_track)
from .evaluation import EvalReport, nmae, strain, strain_snr, sweep  # noqa: E402

__all__ = [
    "ComplexBScan", "DisplacementField", "StrainField", "read_bscan", "write_bscan",
    "ConfigError", "DeformationProfile", "ScattererField", "SimConfig", "build_phantom",
    "deform_phantom", "layered_profile", "synthesize_aline", "synthesize_bscan",
    "DPConfig", "StateGrid", "build_states", "track",
    "BaselineConfig", "cc_track", "ccvp_track", "kasai_track", "vp_track",
    "EvalReport", "nmae", "strain", "strain_snr", "sweep",
]
