"""Store a slow-light pulse, wait, read it back.

The retrieved area decays with storage time; a partial first readout
followed by a dark interval lets coherence diffuse back into the beam, so
the second readout recovers as the dark time grows.
"""
from eitlab.storage import StorageProtocol, decay_curve, double_readout, group_delay, store_pulse
from eitlab.physics import preset

cfg = preset("storage")
proto = StorageProtocol()
_, transmitted = store_pulse(proto, cfg)
print(f"group delay {group_delay(proto.write_power) * 1e6:.0f} us, stored fraction {1 - transmitted:.3f}")

curve = decay_curve(proto, cfg, [20e-6, 50e-6, 100e-6, 200e-6, 500e-6, 1e-3, 2e-3])
for tau, a in zip(curve.taus, curve.areas):
    print(f"  tau = {tau * 1e6:6.0f} us: area {a:.4e}")
print(f"1/e time {curve.decay_time * 1e6:.0f} us, 1/(pi T) = {curve.linewidth_hz:.0f} Hz")

for name in ("storage", "ne100torr"):
    pts = double_readout(proto, preset(name), [10e-6, 100e-6, 1e-3, 3e-3, 10e-3])
    print(name, "double readout ratios:", " ".join(f"{p.ratio:.3f}" for p in pts))
