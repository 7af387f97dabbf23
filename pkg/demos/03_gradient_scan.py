"""Transverse field gradients wash out the narrow peak.

Atoms that wander across the cell pick up a position-dependent Zeeman phase,
so the Ramsey peak broadens with the gradient; the lower-pressure cell,
whose atoms travel further, broadens faster.
"""
import warnings

import numpy as np

from eitlab.diffusion import gradient_scan
from eitlab.fitting import central_peak_width, fit
from eitlab.physics import TWO_PI, preset

warnings.simplefilter("ignore")
grads = [0.0, 1e-3, 2e-3, 4e-3]  # G/cm
grids = {"ne5torr": np.linspace(-20e3, 20e3, 2501), "ne100torr": np.linspace(-5e3, 5e3, 1201)}

for name, f in grids.items():
    cfg = preset(name)
    spectra = gradient_scan(cfg, grads, TWO_PI * f, 20000)
    print(name)
    for g, sp in zip(grads, spectra):
        w = central_peak_width(sp)
        nrms = fit(sp, "ty", gamma=cfg.optics.gamma).normalized_rms
        print(f"  G = {g * 1e3:.0f} mG/cm: peak {w:6.0f} Hz, TY normalized rms {nrms:.4f}")
