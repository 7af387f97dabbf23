"""Monte-Carlo EIT spectrum in a 5 Torr cell.

Atoms diffuse out of the beam, evolve in the dark and come back, which puts
a narrow peak on top of the power-broadened pedestal.  The peak is far
narrower than the single-pass diffusion width 1/(pi tau_D).
"""
import warnings

import numpy as np

from eitlab.diffusion import synth_spectrum
from eitlab.fitting import central_peak_analysis, compare_models
from eitlab.physics import TWO_PI, preset, single_pass_diffusion_linewidth

warnings.simplefilter("ignore")
cfg = preset("ne5torr")
f = np.linspace(-20e3, 20e3, 2501)
sp = synth_spectrum(cfg, TWO_PI * f, 20000)

an = central_peak_analysis(sp)
print(f"single-pass width  {single_pass_diffusion_linewidth(cfg) / 1e3:.1f} kHz")
print(f"central peak FWHM  {an.width_hz:.0f} Hz")
for r in compare_models(sp, gamma=cfg.optics.gamma):
    print(f"  {r.model:>10} fit: rms {r.rms:.4f}")
