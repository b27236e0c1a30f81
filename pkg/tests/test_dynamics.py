"""Probe waveforms, swing integration and the PMU record container."""

import math

import numpy as np
import pytest

from inertialab.dynamics import (
    InstabilityError,
    PmuRecordSet,
    ProbingSignal,
    SimConfig,
    integrate,
    probe_waveform,
    single_machine_response,
    swing_rhs,
)
from inertialab.grid import ReducedNetwork

OMEGA = 2.0 * math.pi * 60.0


def single_machine_net(m=8.0, d=1.0):
    return ReducedNetwork(
        buses=(1,),
        coupling=np.zeros((1, 1)),
        inertia=np.array([m]),
        damping=np.array([d]),
        injections=np.zeros(1),
        sync_speed=OMEGA,
    )


def two_machine_net(m=(1.0, 1.0), d=(0.1, 0.1), b=2.0):
    coupling = np.array([[-b, b], [b, -b]])
    return ReducedNetwork(
        buses=(1, 2),
        coupling=coupling,
        inertia=np.asarray(m, dtype=float),
        damping=np.asarray(d, dtype=float),
        injections=np.zeros(2),
        sync_speed=OMEGA,
    )


class TestProbeWaveform:
    def test_quiescent_before_start(self):
        spec = ProbingSignal(amplitude=0.001, injection_bus=1, start=0.25)
        assert probe_waveform(spec, 0.1) == 0.0

    def test_step_amplitude_inside_window(self):
        spec = ProbingSignal(amplitude=0.001, injection_bus=1, start=0.0, duration=0.5)
        assert probe_waveform(spec, 0.2) == 0.001

    def test_half_open_window(self):
        spec = ProbingSignal(amplitude=0.001, injection_bus=1, start=0.25, duration=0.25)
        assert probe_waveform(spec, 0.25) == 0.001
        assert probe_waveform(spec, 0.5) == 0.0

    def test_negative_time(self):
        spec = ProbingSignal(injection_bus=1)
        with pytest.raises(ValueError):
            probe_waveform(spec, -0.1)

    def test_prbs_chip_values_and_mean(self):
        spec = ProbingSignal(
            kind="prbs",
            amplitude=0.002,
            injection_bus=1,
            start=0.0,
            duration=30.0,
            prbs_chip=0.02,
            seed=7,
        )
        times = (np.arange(1500) + 0.5) * 0.02  # chip centers, 1500 chips
        values = np.array([probe_waveform(spec, t) for t in times])
        assert set(np.round(np.abs(values), 12)) == {0.002}
        assert abs(values.mean()) < 0.1 * spec.amplitude

    def test_prbs_deterministic_under_seed(self):
        spec = ProbingSignal(kind="prbs", amplitude=1.0, injection_bus=1, duration=1.0,
                             prbs_chip=0.1, seed=3)
        again = ProbingSignal(kind="prbs", amplitude=1.0, injection_bus=1, duration=1.0,
                              prbs_chip=0.1, seed=3)
        ts = np.linspace(0.0, 0.99, 37)
        assert [probe_waveform(spec, t) for t in ts] == [
            probe_waveform(again, t) for t in ts
        ]

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ProbingSignal(kind="triangle")
        with pytest.raises(ValueError):
            ProbingSignal(amplitude=-1.0)
        with pytest.raises(ValueError):
            ProbingSignal(duration=0.0)


class TestSwingRhs:
    def test_equilibrium_fixed_point(self):
        net = two_machine_net()
        state = np.zeros(4)
        deriv = swing_rhs(state, net, np.zeros(2))
        assert np.all(deriv == 0.0)

    def test_antisymmetric_perturbation(self):
        net = two_machine_net()
        state = np.array([0.01, -0.01, 0.002, -0.002])
        deriv = swing_rhs(state, net, np.zeros(2))
        assert deriv[0] == pytest.approx(-deriv[1], rel=1e-12)
        assert deriv[2] == pytest.approx(-deriv[3], rel=1e-12)

    def test_dimension_mismatch(self):
        net = two_machine_net()
        with pytest.raises(ValueError):
            swing_rhs(np.zeros(3), net, np.zeros(2))
        with pytest.raises(ValueError):
            swing_rhs(np.zeros(4), net, np.zeros(3))

    def test_energy_bookkeeping_oracle(self):
        """dE/dt from central differences matches the dissipation identity.

        E = omega_s * sum(m dw^2)/2 - sum_{i<j} B_ij cos(theta_i - theta_j);
        along trajectories dE/dt = -omega_s * sum(d dw^2) with no injection.
        """
        rng = np.random.default_rng(11)
        coupling = rng.uniform(0.5, 2.0, size=(3, 3))
        coupling = (coupling + coupling.T) / 2.0
        np.fill_diagonal(coupling, 0.0)
        np.fill_diagonal(coupling, -coupling.sum(axis=1))
        net = ReducedNetwork(
            buses=(1, 2, 3),
            coupling=coupling,
            inertia=rng.uniform(0.5, 2.0, 3),
            damping=rng.uniform(0.05, 0.2, 3),
            injections=np.zeros(3),
            sync_speed=OMEGA,
        )

        def energy(state):
            theta, dw = state[:3], state[3:]
            kinetic = 0.5 * OMEGA * float(net.inertia @ dw**2)
            potential = -sum(
                net.coupling[i, j] * math.cos(theta[i] - theta[j])
                for i in range(3)
                for j in range(i + 1, 3)
            )
            return kinetic + potential

        state = np.concatenate([rng.uniform(-0.05, 0.05, 3), rng.uniform(-1e-3, 1e-3, 3)])
        deriv = swing_rhs(state, net, np.zeros(3))
        eps = 1e-4  # large enough that the E(x+eps f) - E(x-eps f) difference
        # stays clear of float cancellation (E is O(1), dE/dt is O(1e-5))
        numeric = (energy(state + eps * deriv) - energy(state - eps * deriv)) / (2 * eps)
        expected = -OMEGA * float(net.damping @ state[3:] ** 2)
        assert numeric == pytest.approx(expected, rel=1e-4, abs=1e-12)


class TestSingleMachineResponse:
    def test_starts_at_zero(self):
        assert single_machine_response(8.0, 1.0, 0.01, 0.0) == 0.0

    def test_steady_state(self):
        m, d, dp = 6.0, 1.2, 0.02
        value = single_machine_response(m, d, dp, 50.0 * m / d)
        assert value == pytest.approx(dp / d, rel=1e-6)

    def test_arithmetic_oracle(self):
        # frozen from an independent evaluation of (dp/d)(1 - exp(-d t/m))
        assert single_machine_response(8.0, 1.0, 0.01, 4.0) == pytest.approx(
            0.003934693402873665, rel=1e-14
        )

    @pytest.mark.parametrize("m,d", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_domain(self, m, d):
        with pytest.raises(ValueError):
            single_machine_response(m, d, 0.01, 1.0)


class TestIntegrate:
    def test_zero_probe_is_quiescent(self):
        net = two_machine_net()
        probe = ProbingSignal(amplitude=0.0, injection_bus=1)
        rec = integrate(net, probe, SimConfig())
        for name in PmuRecordSet.CHANNELS:
            assert np.all(rec.channel(name) == 0.0)

    def test_matches_closed_form(self):
        net = single_machine_net(m=8.0, d=1.0)
        probe = ProbingSignal(amplitude=0.001, injection_bus=1, duration=2.0)
        cfg = SimConfig(t_end=1.5)
        rec = integrate(net, probe, cfg)
        t = np.arange(rec.n_samples) / rec.rate
        ref = single_machine_response(8.0, 1.0, 0.001, t)
        assert np.abs(rec.speed[0] - ref).max() < 1e-6

    def test_initial_rocof_scales_inversely_with_inertia(self):
        probe = ProbingSignal(amplitude=0.004, injection_bus=1, duration=2.0)
        cfg = SimConfig(t_end=1.5)
        r1 = integrate(single_machine_net(m=2.0), probe, cfg)
        r2 = integrate(single_machine_net(m=4.0), probe, cfg)
        assert r1.rocof[0, 0] == pytest.approx(0.004 / 2.0, rel=1e-12)
        assert r2.rocof[0, 0] == pytest.approx(r1.rocof[0, 0] / 2.0, rel=1e-12)

    def test_pre_probe_samples_zero(self):
        net = two_machine_net()
        probe = ProbingSignal(amplitude=0.001, injection_bus=2, start=0.5, duration=0.5)
        rec = integrate(net, probe, SimConfig())
        pre = slice(0, int(0.5 * rec.rate))
        for name in PmuRecordSet.CHANNELS:
            assert np.all(rec.channel(name)[:, pre] == 0.0)

    def test_time_invariance_under_shift(self):
        net = two_machine_net()
        cfg = SimConfig(t_end=2.0)
        tau = 0.125  # 360 PMU periods
        base = integrate(
            net, ProbingSignal(amplitude=0.001, injection_bus=1, start=0.25), cfg
        )
        shifted = integrate(
            net, ProbingSignal(amplitude=0.001, injection_bus=1, start=0.25 + tau), cfg
        )
        lag = round(tau * cfg.pmu_rate)
        for name in PmuRecordSet.CHANNELS:
            a = base.channel(name)[:, : base.n_samples - lag]
            b = shifted.channel(name)[:, lag:]
            np.testing.assert_array_equal(a, b)

    def test_small_signal_linearity(self):
        net = two_machine_net()
        cfg = SimConfig(t_end=1.5)
        small = integrate(net, ProbingSignal(amplitude=0.0005, injection_bus=1), cfg)
        double = integrate(net, ProbingSignal(amplitude=0.001, injection_bus=1), cfg)
        scale = np.abs(small.speed).max()
        err = np.abs(double.speed - 2.0 * small.speed).max()
        assert err < 0.01 * 2.0 * scale

    def test_rk4_order(self):
        net = two_machine_net(m=(0.8, 1.3), d=(0.05, 0.08), b=3.0)
        probe = ProbingSignal(amplitude=0.01, injection_bus=1, duration=2.0)
        h = 1.0 / 2880.0

        def run(step):
            cfg = SimConfig(t_end=1.5, integrator_step=step)
            return integrate(net, probe, cfg).speed

        ref = run(h / 8.0)
        err_h = np.abs(run(h) - ref).max()
        err_h2 = np.abs(run(h / 2.0) - ref).max()
        assert err_h / err_h2 >= 8.0

    def test_instability_reported_with_time(self):
        net = single_machine_net(m=0.05, d=0.01)
        probe = ProbingSignal(amplitude=2.0, injection_bus=1, duration=2.0)
        with pytest.raises(InstabilityError) as err:
            integrate(net, probe, SimConfig(t_end=1.5))
        assert 0.0 < err.value.time <= 1.5

    def test_monitored_subset(self):
        net = two_machine_net()
        probe = ProbingSignal(amplitude=0.001, injection_bus=1)
        rec = integrate(net, probe, SimConfig(), monitored=(2,))
        assert rec.bus_ids == (2,)
        assert rec.speed.shape[0] == 1


class TestSimConfig:
    def test_step_must_divide_sample_period(self):
        with pytest.raises(ValueError):
            SimConfig(integrator_step=1.0 / 5000.0)

    def test_step_not_larger_than_period(self):
        with pytest.raises(ValueError):
            SimConfig(integrator_step=1.0 / 1000.0)

    def test_minimum_duration(self):
        with pytest.raises(ValueError):
            SimConfig(t_end=1.0)

    def test_sample_count(self):
        assert SimConfig(t_end=1.5).n_samples == 4320


class TestRecordContainer:
    def make_record(self):
        net = two_machine_net()
        probe = ProbingSignal(amplitude=0.001, injection_bus=1)
        return integrate(net, probe, SimConfig(), h_sys=4.25)

    def test_binary_round_trip(self, tmp_path):
        rec = self.make_record()
        path = tmp_path / "rec.bin"
        rec.save(path)
        back = PmuRecordSet.load(path)
        assert back.rate == rec.rate
        assert back.bus_ids == rec.bus_ids
        assert back.h_sys == rec.h_sys
        assert back.probe_amplitude == rec.probe_amplitude
        for name in PmuRecordSet.CHANNELS:
            np.testing.assert_array_equal(
                back.channel(name), rec.channel(name).astype(np.float32).astype(np.float64)
            )

    def test_csv_export_lossless(self, tmp_path):
        rec = self.make_record()
        path = tmp_path / "rec.csv"
        rec.to_csv(path)
        lines = path.read_text().splitlines()
        assert len(lines) == rec.n_samples + 1
        header = lines[0].split(",")
        assert header[0] == "time"
        assert len(header) == 1 + 3 * len(rec.bus_ids)
        probe_row = lines[1 + 600].split(",")  # sample at t > probe start
        assert float(probe_row[1]) == rec.speed[0, 600]
