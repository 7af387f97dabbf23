"""Closed-form EIT lineshapes and their half-contrast widths.

Prints the FWHM of the three limiting models for the 5 Torr preset and
checks the numeric widths against the closed forms.
"""
from eitlab.lineshapes import LineshapeModel, TY_HALF_WIDTH_ROOT, fwhm, transit_time
from eitlab.physics import TWO_PI, preset

cfg = preset("ne5torr")
om, gam = cfg.optics.rabi_control, cfg.optics.gamma
tt = transit_time(cfg.beam, cfg.gas)

models = {
    "lorentzian": (LineshapeModel("lorentzian", {"rabi_control": om, "gamma": gam}), 2 * om**2 / gam),
    "ty": (LineshapeModel("ty", {"rabi_control": om, "gamma": gam}), 2 * TY_HALF_WIDTH_ROOT * om**2 / gam),
    "transit": (LineshapeModel("transit", {"transit_time": tt}), 2 * 0.6931471805599453 / tt),
}
print(f"Omega^2/gamma = {om**2 / gam / TWO_PI:.1f} Hz, transit time {tt * 1e6:.2f} us")
for name, (model, closed) in models.items():
    w = fwhm(model)
    print(f"{name:>10}: FWHM {w / TWO_PI:10.1f} Hz  (closed form {closed / TWO_PI:10.1f} Hz)")
