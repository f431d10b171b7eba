import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from ocedp.simulator import (DeformationProfile, SimConfig, build_phantom,  # noqa: E402
                             deform_phantom, synthesize_bscan)

LAM = 0.878


@pytest.fixture(scope="session")
def small_cfg():
    return SimConfig(n_alines=16, seed=3)


@pytest.fixture(scope="session")
def small_phantom(small_cfg):
    return build_phantom(small_cfg)


@pytest.fixture(scope="session")
def small_ref(small_cfg, small_phantom):
    return synthesize_bscan(small_phantom, small_cfg)


@pytest.fixture(scope="session")
def make_pair(small_cfg, small_phantom):
    cache = {}

    def make(u=0.0, lateral_um=0.0, profile=None):
        key = (u, lateral_um, id(profile))
        if key not in cache:
            prof = profile or DeformationProfile.constant(u, small_cfg.phantom_depth, lateral_um)
            fd = deform_phantom(small_phantom, prof, small_cfg.phantom_depth)
            cache[key] = synthesize_bscan(fd, small_cfg, stream=1)
        return cache[key]

    return make


def rand_scan(rng, m, n, **kw):
    from ocedp.core import ComplexBScan
    s = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
    s = s.astype(np.complex64).astype(np.complex128)
    return ComplexBScan(s, kw.get("ap", 2.246), kw.get("lp", 12.0), kw.get("lam", LAM),
                        kw.get("rn", 1.0))


# ------------------------------------------------------- acceptance verdicts

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(n, ok, detail):
        store[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        ok, detail = store[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
