"""Shared, session-cached Monte-Carlo spectra.

The expensive ensembles are computed once per test session and reused by the
module tests and the acceptance suite.
"""
import time
import warnings

import numpy as np
import pytest

from eitlab.diffusion import gradient_scan
from eitlab.physics import TWO_PI, preset

N_TRAJ = 30000
GRADIENTS_MG = (0.0, 1.0, 2.0, 4.0)
GRID_5TORR_HZ = np.linspace(-20e3, 20e3, 2501)
GRID_100TORR_HZ = np.linspace(-5e3, 5e3, 1201)
# fixture name -> wall-clock seconds spent building it
TIMINGS = {}


def _scan(cfg, grid_hz, gradients_mg=GRADIENTS_MG, name=None):
    start = time.perf_counter()
    with warnings.catch_warnings():
        # 4 mG/cm at 80 mG sits in the documented warning band
        warnings.simplefilter("ignore")
        out = gradient_scan(cfg, [g * 1e-3 for g in gradients_mg], TWO_PI * grid_hz, N_TRAJ)
    TIMINGS[name] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def scan_5torr():
    return _scan(preset("ne5torr"), GRID_5TORR_HZ, name="scan_5torr")


@pytest.fixture(scope="session")
def scan_100torr():
    return _scan(preset("ne100torr"), GRID_100TORR_HZ, name="scan_100torr")


@pytest.fixture(scope="session")
def spectrum_5torr_power10():
    return _scan(preset("ne5torr").with_power(10.0), GRID_5TORR_HZ, (0.0,), "spectrum_5torr_power10")[0]


@pytest.fixture(scope="session")
def spectrum_storage():
    return _scan(preset("storage"), GRID_5TORR_HZ, (0.0,), "spectrum_storage")[0]
