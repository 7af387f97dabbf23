"""Golay saddle coil: gradient per ampere-turn and field quality."""
import numpy as np

from eitlab.coils import (CoilGeometry, build_golay_set, curl_and_linearity_report, distortion_check, field_map,
                          gradient_at_center, turns_for_gradient)

geom = CoilGeometry()
wires = build_golay_set(geom)
g = gradient_at_center(wires)
print(f"dBz/dx at centre: {g * 1e3:.2f} mG/(cm A) per turn")
print(f"turns for 40 mG/(cm A): {turns_for_gradient(g)}")

x = 0.1 * np.arange(-12, 13)
yz = 0.1 * np.arange(-3, 4)
rep = curl_and_linearity_report(field_map(wires, x, yz, yz))
print(f"curl {rep.curl_residual:.1e}, divergence {rep.divergence_residual:.1e}, "
      f"linearity over |x| <= 1 cm {100 * rep.linearity_deviation:.2f}%")

for b0 in (0.080, 0.132):
    d = distortion_check(4e-3, 7.0, b0)
    print(f"4 mG/cm over 7 cm at B0 = {b0 * 1e3:.0f} mG: ratio {d.ratio:.4f} ({d.status})")
