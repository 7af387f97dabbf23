import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitlab.diffusion import (CoherenceOde, DistortionWarning, TrajectoryParams, UndersampledGridWarning,
                              evolve_coherence, first_exit_times, gradient_scan, mean_squared_displacement,
                              simulate_ensemble, step_brownian, synth_spectrum)
from eitlab.physics import TWO_PI, preset

# the small test grids are coarser than production grids on purpose
pytestmark = pytest.mark.filterwarnings("ignore::eitlab.diffusion.UndersampledGridWarning")


def d0_oracle(R0, gamma_bc, delta):
    """Ensemble mean for frozen atoms drawn from the pumping profile.

    With u = I/I0 uniform on (0, 1) under intensity weighting,
    E[R0 u / (R0 u + a)] = 1 - (a/R0) ln(1 + R0/a), a = gamma_bc + i delta.
    """
    a = gamma_bc + 1j * np.asarray(delta)
    return 1 - (a / R0) * np.log(1 + R0 / a)


def test_step_zero_diffusion_is_identity():
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(50, 2)) * 0.1
    new, hit = step_brownian(pos, 0.0, 1e-6, rng, radius=1.25)
    assert np.array_equal(new, pos)
    assert not hit.any()


def test_step_reflects_inside_cell():
    rng = np.random.default_rng(1)
    pos = np.tile([[1.2, 0.0]], (1000, 1))
    new, hit = step_brownian(pos, 35.7, 1e-3, rng, radius=1.25)
    assert np.all(np.hypot(new[:, 0], new[:, 1]) <= 1.25 + 1e-12)
    assert hit.mean() > 0.5
    _, hit_bulk = step_brownian(pos, 35.7, 1e-3, rng, radius=1.25, boundary="bulk")
    assert not hit_bulk.any()


def test_msd_free_diffusion():
    rng = np.random.default_rng(2)
    D, dt, n = 35.7, 1e-6, 20
    msd = mean_squared_displacement(D, dt, n, 100000, rng)
    t = dt * np.arange(1, n + 1)
    np.testing.assert_allclose(msd, 4 * D * t, rtol=0.02)


def test_first_exit_time_small_sample():
    rng = np.random.default_rng(3)
    r, D = 0.04, 35.7
    te = first_exit_times(r, D, 0.001 * r * r / D, 20000, rng)
    assert np.mean(te) == pytest.approx(r * r / (4 * D), rel=0.03)
    assert r * r / (4 * D) == pytest.approx(11.2e-6, rel=0.01)


def test_trajectory_params_invariants():
    cfg = preset("ne5torr")
    p = TrajectoryParams.for_config(cfg)
    assert p.time_step == pytest.approx(0.04**2 / (25 * 35.7))
    assert p.max_duration == pytest.approx(min(20 / cfg.optics.gamma_bc, 50e-3))
    with pytest.raises(ValueError):
        TrajectoryParams.for_config(cfg, time_step=2 * p.time_step)
    with pytest.raises(ValueError):
        TrajectoryParams(time_step=0.0, max_duration=1.0)
    with pytest.raises(ValueError):
        TrajectoryParams(time_step=1e-6, max_duration=1.0, boundary="sticky")


def test_ode_pump_and_dephasing():
    ode = CoherenceOde(pump_rate=3e3, gamma_bc=10.0, waist_radius=0.04, dephasing_gradient=0.0)
    assert ode.pump(10.0) == 0.0
    assert ode.dephasing(0.3, 5.0) == 5.0
    cfg = preset("ne5torr").replace(**{"magnetics.gradient": 4e-3})
    assert CoherenceOde.from_config(cfg).dephasing(0.0, 7.0) == 7.0


def test_zeeman_dephasing_scale():
    ode = CoherenceOde.from_config(preset("ne5torr"), gradient=4e-3)
    assert ode.dephasing(0.08, 0.0) / TWO_PI == pytest.approx(448.0, rel=1e-3)
    assert ode.dephasing(1.0, 0.0) / TWO_PI == pytest.approx(5.6e3, rel=1e-3)


def test_evolve_stationary_center_reaches_one():
    ode = CoherenceOde(pump_rate=3e3, gamma_bc=0.0, waist_radius=0.04)
    traj = np.zeros((4001, 2))
    sig = evolve_coherence(traj, 0.0, ode, 1e-5)
    assert sig[-1] == pytest.approx(1.0, abs=1e-12)


def test_evolve_stationary_center_steady_state():
    R0, gbc = 3e3, 100.0
    ode = CoherenceOde(pump_rate=R0, gamma_bc=gbc, waist_radius=0.04)
    delta = np.linspace(-2e4, 2e4, 41)
    sig = evolve_coherence(np.zeros((2001, 2)), delta, ode, 1e-5)[-1]
    np.testing.assert_allclose(sig, R0 / (R0 + gbc + 1j * delta), rtol=1e-9, atol=1e-12)
    mag = np.abs(sig)
    half = np.abs(R0 / (R0 + gbc + 1j * (R0 + gbc)))
    assert half == pytest.approx(mag[20] / np.sqrt(2))


def test_evolve_dark_is_ramsey_phase():
    ode = CoherenceOde(pump_rate=3e3, gamma_bc=50.0, waist_radius=0.04)
    n, dt, delta = 200, 1e-5, 2e3
    traj = np.tile([[1.0, 0.0]], (n + 1, 1))
    sig = evolve_coherence(traj, delta, ode, dt, sigma0=0.3 + 0.1j)
    t = dt * np.arange(n + 1)
    np.testing.assert_allclose(sig, (0.3 + 0.1j) * np.exp(-(50.0 + 1j * delta) * t), rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2e4), st.floats(0.0, 1e3), st.floats(-1e4, 1e4))
def test_coherence_magnitude_bounded(seed, grad, gbc, delta):
    rng = np.random.default_rng(seed)
    ode = CoherenceOde(pump_rate=3e3, gamma_bc=gbc, waist_radius=0.04, dephasing_gradient=grad)
    steps = rng.normal(scale=np.sqrt(2 * 35.7 * 6e-7), size=(300, 2))
    traj = np.vstack([[0, 0], np.cumsum(steps, axis=0)])
    sig = evolve_coherence(traj, delta, ode, 6e-7)
    assert np.all(np.abs(sig) <= 1 + 1e-12)


def test_ensemble_matches_frozen_atom_oracle():
    cfg = preset("ne5torr").replace(gas={"diffusion_coefficient": 0.0}, optics={"gamma_bc": 1000.0})
    R0 = cfg.optics.pump_rate
    delta = TWO_PI * np.linspace(-2e3, 2e3, 81)
    params = TrajectoryParams(time_step=1e-5, max_duration=0.02)
    res = simulate_ensemble(cfg, [0.0], delta, 20000, params=params)
    dev = np.abs(res.coherence[0] - d0_oracle(R0, 1000.0, delta))
    assert np.all(dev < 4 * res.stderr[0])
    assert np.all(np.abs(res.coherence) <= 1)


def test_gamma_bc_dominated_limit_is_single_atom_lorentzian():
    cfg = preset("ne5torr").replace(gas={"diffusion_coefficient": 0.0})
    R0 = cfg.optics.pump_rate
    g = 50 * R0
    cfg = cfg.replace(optics={"gamma_bc": g})
    delta = np.linspace(0, 3 * g, 3001)
    params = TrajectoryParams(time_step=1 / (50 * g), max_duration=20 / g)
    res = simulate_ensemble(cfg, [0.0], delta, 4000, params=params)
    c = res.coherence[0].real / res.coherence[0, 0].real
    hw = np.interp(0.5, c[::-1], delta[::-1])
    assert hw == pytest.approx(R0 + g, rel=0.02)


def test_stderr_scales_as_inverse_sqrt_n():
    cfg = preset("ne5torr")
    delta = TWO_PI * np.linspace(-2e3, 2e3, 11)
    small = simulate_ensemble(cfg, [0.0], delta, 2048)
    large = simulate_ensemble(cfg, [0.0], delta, 8192)
    ratio = np.mean(small.stderr) / np.mean(large.stderr)
    assert ratio == pytest.approx(2.0, rel=0.35)


def test_deterministic_across_workers_and_reruns():
    cfg = preset("ne5torr")
    delta = TWO_PI * np.linspace(-5e3, 5e3, 201)
    a = synth_spectrum(cfg, delta, 1500, seed=7)
    b = synth_spectrum(cfg, delta, 1500, seed=7, workers=3)
    c = synth_spectrum(cfg, delta, 1500, seed=7)
    assert np.array_equal(a.transmissions, b.transmissions)
    assert np.array_equal(a.transmissions, c.transmissions)
    d = synth_spectrum(cfg, delta, 1500, seed=8)
    assert not np.array_equal(a.transmissions, d.transmissions)


def test_zero_gradient_scan_equals_synth_spectrum():
    cfg = preset("ne5torr")
    delta = TWO_PI * np.linspace(-5e3, 5e3, 201)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DistortionWarning)
        scan = gradient_scan(cfg, [0.0, 2e-3, 4e-3], delta, 1500, seed=11)
    single = synth_spectrum(cfg, delta, 1500, seed=11)
    assert np.array_equal(scan[0].transmissions, single.transmissions)


def test_normalization_and_symmetry():
    cfg = preset("ne5torr")
    delta = TWO_PI * np.linspace(-5e3, 5e3, 201)
    sp = synth_spectrum(cfg, delta, 2000, seed=3, baseline=0.2, peak=0.9)
    assert sp.transmissions[100] == pytest.approx(0.9, abs=1e-9)
    np.testing.assert_allclose(sp.transmissions, sp.transmissions[::-1], atol=1e-9)


def test_distortion_warning_attached():
    cfg = preset("ne5torr")
    delta = TWO_PI * np.linspace(-5e3, 5e3, 101)
    with pytest.warns(DistortionWarning):
        out = gradient_scan(cfg, [4e-3], delta, 256, seed=1)
    assert out[0].metadata["distortion"].status == "warn"


def test_undersampled_grid_warning():
    cfg = preset("ne5torr")
    delta = TWO_PI * np.linspace(-20e3, 20e3, 101)
    with pytest.warns(UndersampledGridWarning):
        synth_spectrum(cfg, delta, 1000, seed=1)
