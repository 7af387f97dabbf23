import math

import numpy as np
import pytest

from eitlab.physics import preset
from eitlab.storage import (StorageFitError, StorageProtocol, decay_curve, double_readout, evolve_dark,
                            fit_exponential, group_delay, retrieve, run_protocol, store_pulse, stored_fraction)

PROTO = StorageProtocol()


def cfg_with(**kw):
    c = preset("storage")
    gas = {k: v for k, v in kw.items() if k == "diffusion_coefficient"}
    optics = {k: v for k, v in kw.items() if k == "gamma_bc"}
    return c.replace(gas=gas, optics=optics)


def test_group_delay_anchor_and_scaling():
    assert group_delay(50e-6) == pytest.approx(450e-6)
    assert group_delay(600e-6) == pytest.approx(37.5e-6)
    assert group_delay(1e3) < 1e-10
    with pytest.raises(ValueError):
        group_delay(0.0)


def test_stored_fraction_examples():
    assert stored_fraction(450e-6, 1e-3) == pytest.approx(0.5, abs=0.1)
    assert stored_fraction(100e-3, 1e-3) == pytest.approx(1.0, abs=1e-12)
    assert stored_fraction(0.0, 1e-3) == 0.0


def test_zero_write_power_stores_nothing():
    field, transmitted = store_pulse(StorageProtocol(write_power=0.0), preset("storage"))
    assert transmitted == 1.0
    rec, _ = retrieve(field, 600e-6, 200e-6)
    assert rec.area == 0.0


def test_protocol_validation():
    with pytest.raises(ValueError):
        StorageProtocol(schedule=(("off", 1e-4), ("off", 1e-4)))
    with pytest.raises(ValueError):
        StorageProtocol(schedule=(("dim", 1e-4),))
    with pytest.raises(ValueError):
        StorageProtocol(pulse_width=0.0)
    with pytest.raises(ValueError, match="bogus"):
        StorageProtocol.from_dict({"bogus": 1})
    p = StorageProtocol.from_dict(PROTO.double(1e-3, True).to_dict())
    assert p.schedule == PROTO.double(1e-3, True).schedule


def test_evolve_zero_duration_is_identity():
    field, _ = store_pulse(PROTO, preset("storage"))
    out = evolve_dark(field, 0.0)
    assert np.array_equal(out.amplitude, field.amplitude)


def test_no_diffusion_pointwise_decay():
    field, _ = store_pulse(PROTO, cfg_with(diffusion_coefficient=0.0, gamma_bc=800.0))
    out = evolve_dark(field, 1.3e-3)
    np.testing.assert_allclose(out.amplitude, field.amplitude * math.exp(-800.0 * 1.3e-3), rtol=1e-12, atol=1e-300)


def test_gaussian_spot_spreads_as_heat_kernel():
    D, t = 1.78, 1e-3
    field, _ = store_pulse(StorageProtocol(written_profile="beam"), cfg_with(diffusion_coefficient=D, gamma_bc=0.0))
    out = evolve_dark(field, t)

    def w2(f):
        a = f.amplitude.real
        return 2 * np.sum(a * f.grid.r2) / np.sum(a)

    assert w2(field) == pytest.approx(0.04**2, rel=1e-6)
    assert w2(out) == pytest.approx(0.04**2 + 8 * D * t, rel=0.01)


def test_evolve_is_linear():
    cfg = preset("storage").replace(**{"magnetics.gradient": 2e-3})
    f, _ = store_pulse(PROTO, cfg)
    g = f.copy()
    rng = np.random.default_rng(0)
    g.amplitude = rng.random(g.amplitude.shape) * g.grid.inside * 1e-3
    h = f.copy()
    h.amplitude = 2.0 * f.amplitude - 3.0 * g.amplitude
    ef, eg, eh = (evolve_dark(x, 400e-6) for x in (f, g, h))
    np.testing.assert_allclose(eh.amplitude, 2.0 * ef.amplitude - 3.0 * eg.amplitude, atol=1e-14)


def test_energy_non_increasing_in_dark():
    f, _ = store_pulse(PROTO, preset("storage"))
    energies = [f.energy]
    for _ in range(6):
        f = evolve_dark(f, 100e-6)
        energies.append(f.energy)
    assert np.all(np.diff(energies) <= 1e-15)


def test_norm_bookkeeping_closes():
    recs, final = run_protocol(PROTO.double(500e-6, True), preset("storage"))
    assert len(recs) == 2
    assert abs(final.balance()) < 0.01
    assert abs(final.balance()) < 1e-10


def test_empty_field_retrieves_nothing():
    f, _ = store_pulse(PROTO, preset("storage"))
    f.amplitude[:] = 0.0
    rec, _ = retrieve(f, 600e-6, 200e-6)
    assert rec.area == 0.0


def test_lossless_retrieval_returns_stored_fraction():
    cfg = cfg_with(diffusion_coefficient=0.0, gamma_bc=0.0)
    f, transmitted = store_pulse(PROTO, cfg)
    # u is uniform on (0, 1) under the stored weight, so after n drain times 1/n is left
    rec, rest = retrieve(f, 600e-6, 1000 * group_delay(600e-6))
    assert rec.area == pytest.approx(1 - transmitted, rel=0.01)
    assert rest.residual == pytest.approx((1 - transmitted) / 1000, rel=0.05)


def test_second_read_collects_what_the_first_left():
    cfg = cfg_with(diffusion_coefficient=0.0, gamma_bc=0.0)
    f, transmitted = store_pulse(StorageProtocol(written_profile="beam"), cfg)
    first, drained = retrieve(f, 600e-6, 200e-6)
    second, _ = retrieve(drained, 600e-6, 1000 * group_delay(600e-6))
    assert second.area < 0.5 * first.area
    assert first.area + second.area == pytest.approx(1 - transmitted, rel=0.01)


def test_waveform_integrates_to_area():
    f, _ = store_pulse(PROTO, preset("storage"))
    rec, _ = retrieve(f, 600e-6, 200e-6)
    dt = rec.times[1] - rec.times[0]
    assert np.sum(rec.amplitudes) * dt == pytest.approx(rec.area, rel=1e-12)
    assert np.all(rec.amplitudes >= 0)


def test_no_decay_flag():
    cfg = cfg_with(diffusion_coefficient=0.0, gamma_bc=0.0)
    curve = decay_curve(PROTO, cfg, [1e-5, 1e-4, 1e-3, 1e-2])
    assert curve.no_decay and math.isinf(curve.decay_time)


def test_doubling_gamma_halves_decay_time():
    taus = [1e-5, 1e-4, 1e-3, 3e-3]
    t1 = decay_curve(PROTO, cfg_with(diffusion_coefficient=0.0, gamma_bc=300.0), taus).decay_time
    t2 = decay_curve(PROTO, cfg_with(diffusion_coefficient=0.0, gamma_bc=600.0), taus).decay_time
    assert t1 == pytest.approx(1 / 300.0, rel=1e-6)
    assert t2 == pytest.approx(t1 / 2, rel=1e-6)


def test_fit_rejects_non_positive_areas():
    with pytest.raises(StorageFitError):
        fit_exponential([0.0, 1.0, 2.0], [1.0, 0.0, 0.5])


def test_retrieved_area_non_increasing_in_tau():
    curve = decay_curve(PROTO, preset("storage"), [0.0, 2e-5, 1e-4, 5e-4, 2e-3])
    assert np.all(np.diff(curve.areas) <= 0)


def test_double_readout_no_diffusion_is_flat():
    pts = double_readout(PROTO, cfg_with(diffusion_coefficient=0.0), [1e-5, 1e-3, 1e-2])
    ratios = [p.ratio for p in pts]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


def test_double_readout_replenishes_100torr():
    pts = double_readout(PROTO, preset("ne100torr"), [1e-5, 1e-4, 1e-3, 1e-2])
    ratios = np.array([p.ratio for p in pts])
    assert np.all(np.diff(ratios) > 0)
    assert ratios[0] < 0.5


def test_workers_do_not_change_results():
    taus = [1e-5, 1e-4, 1e-3]
    a = decay_curve(PROTO, preset("storage"), taus)
    b = decay_curve(PROTO, preset("storage"), taus, workers=3)
    assert np.array_equal(a.areas, b.areas) and a.decay_time == b.decay_time


def test_grid_convergence():
    taus = [2e-5, 2e-4, 1e-3]
    a = decay_curve(PROTO, preset("storage"), taus, n_grid=128).areas
    b = decay_curve(PROTO, preset("storage"), taus, n_grid=256).areas
    np.testing.assert_allclose(a, b, rtol=0.02)
