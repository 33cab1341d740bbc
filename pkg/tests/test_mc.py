"""Particle simulations: reproducibility, diffusion oracles, estimator contracts."""

import math

import numpy as np
import pytest

from eddylab.errors import ConfigurationError, StatisticalError
from eddylab.fields import (
    cellular_eddy,
    self_similar_flow,
    single_scale_flow,
    zero_flow,
)
from eddylab.mc import (
    ExitTimeSample,
    SimConfig,
    default_pair_l,
    estimate_nu,
    event_frequency_from_samples,
    flow_delta,
    sample_rows,
    sample_summary,
    sim_dt,
    simulate_exit,
    simulate_pair,
    truncation_index,
)

ZF = zero_flow(0.5, n_scales=3)


def test_runs_are_bit_reproducible():
    flow = single_scale_flow(1.0, cellular_eddy(64))
    cfg = SimConfig(n_particles=200, seed=7, dt_factor=0.5)
    a = simulate_exit(flow, 2.0, cfg)
    b = simulate_exit(flow, 2.0, cfg)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.start_points, b.start_points)
    assert a.mean == b.mean and a.stderr == b.stderr


def test_pure_diffusion_matches_the_disk_average():
    # uniform start in the disk: E[tau] = r^2 / (8 kappa) = 1.0 here
    s = simulate_exit(ZF, 2.0, SimConfig(n_particles=800, seed=42, dt_factor=0.25))
    assert s.censored == 0
    assert abs(s.mean - 1.0) <= 3.0 * s.stderr


def test_halving_the_step_does_not_move_the_mean():
    flow = single_scale_flow(1.0, cellular_eddy(64))
    a = simulate_exit(flow, 2.0, SimConfig(n_particles=600, seed=7, dt_factor=0.5))
    b = simulate_exit(flow, 2.0, SimConfig(n_particles=600, seed=7, dt_factor=0.25))
    combined = math.hypot(a.stderr, b.stderr)
    assert abs(a.mean - b.mean) <= 3.0 * combined


def test_step_rule_reduces_to_the_diffusive_cap_without_drift():
    cfg = SimConfig(n_particles=10, seed=1, dt_factor=0.25)
    # finest included scale is 1, so dt = dt_factor / (128 kappa)
    assert sim_dt(ZF, 2.0, cfg) == 0.25 / (128.0 * 0.5)
    double = SimConfig(n_particles=10, seed=1, dt_factor=0.5)
    assert sim_dt(ZF, 2.0, double) == 2.0 * sim_dt(ZF, 2.0, cfg)


def test_truncation_follows_the_8r_rule():
    flow = self_similar_flow(1.0, cellular_eddy(64), 2.0, 4.0, 4)  # radii 1,4,16,64
    cfg = SimConfig(n_particles=10, seed=1)
    assert truncation_index(flow, 2.0, cfg) == 2
    assert truncation_index(flow, 0.5, cfg) == 1
    assert truncation_index(flow, 100.0, cfg) == 3
    override = SimConfig(n_particles=10, seed=1, scale_truncation=1)
    assert truncation_index(flow, 100.0, override) == 1
    too_deep = SimConfig(n_particles=10, seed=1, scale_truncation=4)
    with pytest.raises(ConfigurationError):
        truncation_index(flow, 2.0, too_deep)


def test_censored_particles_are_excluded_from_the_mean():
    cfg = SimConfig(n_particles=200, seed=42, dt_factor=0.25, max_steps=192)
    s = simulate_exit(ZF, 2.0, cfg)
    assert 0 < s.censored < s.n_particles
    good = s.times[~np.isnan(s.times)]
    assert s.n_uncensored == good.size
    assert s.mean == pytest.approx(float(good.mean()))
    # every uncensored exit happened within the step budget
    assert float(good.max()) <= cfg.max_steps * s.dt


def test_everything_censored_is_an_error():
    cfg = SimConfig(n_particles=100, seed=5, max_steps=1, dt_factor=0.001)
    with pytest.raises(StatisticalError):
        simulate_exit(ZF, 2.0, cfg)


def test_pair_separation_matches_the_relative_diffusion_oracle():
    # separation diffuses at 2 kappa; E[tau] = r^2 / (16 kappa) = 0.5 here
    cfg = SimConfig(n_particles=400, seed=11, dt_factor=0.125)
    s = simulate_pair(ZF, 2.0, 128.0, cfg)
    assert abs(s.mean - 0.5) <= 4.0 * s.stderr
    assert s.l_face_fraction <= 0.05
    assert s.l_limit_ok


def test_pair_domain_must_dominate_the_separation():
    cfg = SimConfig(n_particles=100, seed=1)
    with pytest.raises(ConfigurationError):
        simulate_pair(ZF, 2.0, 7.9, cfg)


def test_default_pair_l_covers_the_next_scale():
    flow = self_similar_flow(1.0, cellular_eddy(64), 2.0, 4.0, 4)
    assert default_pair_l(flow, 2.0) == 8.0    # 4r wins over scale radius 4
    assert default_pair_l(flow, 5.0) == 20.0   # 4r wins over scale radius 16


def test_pair_start_sampling_gives_up_loudly():
    cfg = SimConfig(n_particles=1, seed=5, max_steps=10)
    with pytest.raises(StatisticalError):
        simulate_pair(ZF, 0.001, 100.0, cfg)


def test_exit_radius_validation():
    cfg = SimConfig(n_particles=100, seed=1)
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ConfigurationError):
            simulate_exit(ZF, bad, cfg)


def test_sim_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=0, seed=1)
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=100, seed=-1)
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=100, seed=2 ** 64)
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=100, seed=1, dt_factor=0.0)
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=100, seed=1, dt_factor=1.5)
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=100, seed=1, max_steps=0)
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=100, seed=1, scale_truncation=-1)


def _fake_sample(r: float, mean: float, n: int = 200, censored: int = 0) -> ExitTimeSample:
    times = np.full(n, mean)
    if censored:
        times[:censored] = np.nan
    return ExitTimeSample(
        r=r, l=None, times=times, start_points=np.zeros((n, 2)),
        faces=np.full(n, "r", dtype="U8"), mean=mean,
        stderr=0.01 * mean, censored=censored, n_particles=n,
        dt=1e-3, n_truncation=0, seed=0)


def test_exponent_fit_recovers_a_power_law():
    samples = [_fake_sample(r, r ** 1.5) for r in (2.0, 8.0, 32.0)]
    flow = self_similar_flow(1.0, cellular_eddy(64), 2.0, 4.0, 4)
    table = estimate_nu(samples, flow)
    assert table.slope == pytest.approx(1.5, abs=1e-12)
    assert table.nu_hat == pytest.approx(0.5, abs=1e-12)
    assert table.prediction == pytest.approx(math.log(2.0) / math.log(4.0))
    for row in table.rows:
        assert row.nu_point == pytest.approx(0.5, abs=1e-12)


def test_exponent_fit_input_contracts():
    with pytest.raises(ConfigurationError):
        estimate_nu([_fake_sample(2.0, 4.0), _fake_sample(8.0, 20.0)])
    unordered = [_fake_sample(8.0, 20.0), _fake_sample(2.0, 4.0), _fake_sample(32.0, 80.0)]
    with pytest.raises(ConfigurationError):
        estimate_nu(unordered)
    narrow = [_fake_sample(r, r ** 1.5) for r in (2.0, 4.0, 8.0)]
    with pytest.raises(ConfigurationError):
        estimate_nu(narrow)
    small = [_fake_sample(r, r ** 1.5, n=50) for r in (2.0, 8.0, 32.0)]
    with pytest.raises(StatisticalError):
        estimate_nu(small)
    mostly_censored = [_fake_sample(r, r ** 1.5, censored=150) for r in (2.0, 8.0, 32.0)]
    with pytest.raises(StatisticalError):
        estimate_nu(mostly_censored)


def test_event_frequency_counts_and_intervals():
    n = 200
    times = np.full(n, 0.1)
    times[:40] = 10.0   # misses: above threshold
    times[40:50] = np.nan  # censored count as misses too
    sample = ExitTimeSample(
        r=4.0, l=None, times=times, start_points=np.zeros((n, 2)),
        faces=np.full(n, "r", dtype="U8"), mean=0.1, stderr=0.01,
        censored=10, n_particles=n, dt=1e-3, n_truncation=0, seed=0)
    table = event_frequency_from_samples([sample], delta=0.45)
    row = table.rows[0]
    assert row.threshold == pytest.approx(4.0 ** 1.55)
    assert row.frequency == pytest.approx(150 / 200)
    assert 0.0 < row.ci_lo < row.frequency < row.ci_hi < 1.0
    small = ExitTimeSample(
        r=4.0, l=None, times=times[:50], start_points=np.zeros((50, 2)),
        faces=np.full(50, "r", dtype="U8"), mean=0.1, stderr=0.01,
        censored=10, n_particles=50, dt=1e-3, n_truncation=0, seed=0)
    with pytest.raises(StatisticalError):
        event_frequency_from_samples([small], delta=0.45)


def test_flow_delta_value_and_contract():
    flow = self_similar_flow(1.0, cellular_eddy(64), 2.0, 4.0, 4)
    assert flow_delta(flow) == pytest.approx(0.9 * math.log(2.0) / math.log(4.0))
    with pytest.raises(ConfigurationError):
        flow_delta(single_scale_flow(1.0, cellular_eddy(64)))


def test_export_rows_and_summary():
    cfg = SimConfig(n_particles=200, seed=42, dt_factor=0.25, max_steps=192)
    s = simulate_exit(ZF, 2.0, cfg)
    rows = list(sample_rows(s))
    assert len(rows) == s.n_particles
    assert sum(r[2] for r in rows) == s.censored
    assert all(r[3] in ("r", "censored") for r in rows)
    doc = sample_summary(s, extras={"nu_point": 1.0})
    for key in ("r", "l", "n", "mean", "stderr", "censored", "dt",
                "scale_truncation", "seed", "nu_point"):
        assert key in doc
    assert "l_face_fraction" not in doc  # single-particle run has no l-face
    pair = simulate_pair(ZF, 2.0, 128.0, SimConfig(n_particles=400, seed=11, dt_factor=0.125))
    assert "l_face_fraction" in sample_summary(pair)
