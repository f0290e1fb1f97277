import math

import numpy as np
import pytest
from scipy.integrate import quad

import multiobs as m
from multiobs.engine import HOMODYNE_DIFFUSIVE, PHOTODETECTION
from multiobs.errors import ModelError, StepSizeError
from multiobs.models import (
    CatState,
    fokker_planck_cdf,
    rescaled_time,
    run_cat_ensemble,
)


class TestBuilders:
    def test_photodetection_two_channel(self):
        spec = m.build_atom_photodetection(20.0, (0.5, 0.1))
        sx, _, _, c = m.make_atom_operators()
        assert np.allclose(spec.hamiltonian, 20.0 * sx)
        assert np.allclose(spec.lindblad_op, c)
        assert [ch.scheme for ch in spec.channels] == [PHOTODETECTION] * 2
        assert spec.total_efficiency == pytest.approx(0.6)

    def test_pure_decay_model(self):
        spec = m.build_atom_photodetection(0.0, (1.0,))
        assert not np.any(spec.hamiltonian)

    def test_fig4_style_efficiencies(self):
        spec = m.build_atom_photodetection(20.0, (0.7, 0.3))
        assert [ch.efficiency for ch in spec.channels] == [0.7, 0.3]

    def test_overcommitted_efficiency(self):
        with pytest.raises(ModelError):
            m.build_atom_photodetection(20.0, (0.8, 0.4))

    def test_homodyne_diffusive_channels(self):
        spec = m.build_atom_homodyne(20.0, [(0.1, 0.0), (0.1, math.pi / 2)], diffusive=True)
        assert [ch.scheme for ch in spec.channels] == [HOMODYNE_DIFFUSIVE] * 2
        assert spec.channels[1].lo_phase == pytest.approx(math.pi / 2)
        assert spec.is_diffusive

    def test_finite_amplitude_requires_value(self):
        with pytest.raises(ModelError):
            m.build_atom_homodyne(20.0, [(0.1, 0.0)], diffusive=False)

    def test_qbm_interaction_picture_hamiltonian_is_zero(self):
        spec = m.build_qbm_homodyne(12, (0.5,), lo_amplitude=3.0)
        assert not np.any(spec.hamiltonian)
        a, _ = m.make_fock_operators(12)
        assert np.allclose(spec.lindblad_op, a)


class TestCatSde:
    def test_saturated_drift_increases_b(self):
        state = CatState(0.0, 10.0, (10.0,))
        out = m.cat_sde_step(state, (0.5,), 0.01, np.zeros(1))
        # drift = eta * tanh(10) ~ eta
        assert out.b_super == pytest.approx(10.0 + 0.01 * 0.5, abs=1e-6)
        assert out.tau == pytest.approx(0.01)

    def test_unmonitored_observer_stays_put(self):
        state = CatState(0.0, 0.0, (0.0, 0.0))
        out = state
        for k in range(50):
            dw = np.array([math.sin(k + 1.0), 0.0]) * math.sqrt(0.005)
            out = m.cat_sde_step(out, (0.7, 0.0), 0.005, dw)
        assert out.b_single[1] == 0.0
        assert out.b_single[0] != 0.0

    def test_step_guard(self):
        with pytest.raises(StepSizeError):
            m.cat_sde_step(CatState(0.0, 0.0, (0.0,)), (1.0,), 0.05, np.zeros(1))

    def test_clamp(self):
        state = CatState(0.0, 29.999, (29.999,))
        out = m.cat_sde_step(state, (1.0,), 0.005, np.array([5.0]))
        assert out.b_super <= 30.0 and out.b_single[0] <= 30.0

    def test_imbalance_property(self):
        state = CatState(0.0, 1.0, (0.5, -2.0))
        assert state.a_super == pytest.approx(math.tanh(1.0))
        assert state.a_single[1] == pytest.approx(math.tanh(-2.0))

    def test_rescaled_time(self):
        assert rescaled_time(2.0, 3.0, 0.0, 0.0) == pytest.approx(72.0)
        assert rescaled_time(2.0, 3.0, math.pi / 2, 0.0) == pytest.approx(0.0, abs=1e-12)


class TestCatEnsemble:
    def test_deterministic_replay(self):
        a = run_cat_ensemble((0.7, 0.3), 1.0, 0.005, 64, seed=5)
        b = run_cat_ensemble((0.7, 0.3), 1.0, 0.005, 64, seed=5)
        assert np.array_equal(a.b_super, b.b_super)
        assert np.array_equal(a.b_single, b.b_single)

    def test_sign_consensus_grows(self):
        res = run_cat_ensemble((0.7, 0.3), 20.0, 0.005, 2000, seed=9)
        sign = np.sign(res.a_super)
        agree = (np.sign(res.a_single[0]) == sign) & (np.sign(res.a_single[1]) == sign)
        assert agree.mean() >= 0.95
        # the all-records state itself is settled hard at +/-1
        assert np.abs(res.a_super).min() > 0.999

    def test_heun_and_euler_agree_pathwise(self):
        heun = run_cat_ensemble((0.5,), 2.0, 0.002, 128, seed=7, heun=True)
        euler = run_cat_ensemble((0.5,), 2.0, 0.002, 128, seed=7, heun=False)
        assert np.abs(heun.b_super - euler.b_super).max() < 0.05

    def test_single_run_trace_shape(self):
        res = run_cat_ensemble((0.7, 0.3), 1.0, 0.005, 8, seed=3, sample_stride=50)
        assert res.trace_a.shape == (res.taus.size, 3)
        assert np.all(np.abs(res.trace_a) <= 1.0)


class TestFokkerPlanck:
    def test_symmetric(self):
        b = np.linspace(-3, 3, 201)
        p = m.fokker_planck_solution(2.0, b, 0.3)
        assert np.allclose(p, p[::-1], atol=1e-14)

    def test_normalized_by_quadrature(self):
        # independent oracle: adaptive quadrature over the full line
        for tau, eta in ((2.0, 0.3), (5.0, 1.0), (0.5, 0.05)):
            val, err = quad(lambda b: m.fokker_planck_solution(tau, b, eta), -np.inf, np.inf)
            assert abs(val - 1.0) < 1e-8

    def test_short_time_concentration(self):
        tau = 1e-6
        mass, _ = quad(lambda b: m.fokker_planck_solution(tau, b, 1.0), -0.01, 0.01)
        assert mass > 1.0 - 1e-8

    def test_invalid_tau(self):
        with pytest.raises(ModelError):
            m.fokker_planck_solution(0.0, 0.0, 0.3)

    def test_cdf_matches_quadrature(self):
        tau, eta = 2.0, 0.3
        for b in (-1.0, 0.0, 0.7, 2.5):
            want, _ = quad(lambda x: m.fokker_planck_solution(tau, x, eta), -np.inf, b)
            assert fokker_planck_cdf(tau, b, eta) == pytest.approx(want, abs=1e-9)


class TestQbmPointerStates:
    def test_unmonitored_coherent_state_stays_pure(self):
        # zero-temperature pointer states: no entropy is produced
        n, z0 = 24, 1.5
        spec = m.build_qbm_homodyne(n, (), lo_amplitude=0.0)
        state = m.initial_trajectory_state(m.coherent_state(z0, n), 0)
        res = m.run_trajectory(spec, state, 1.0, 2e-4, m.RngStream(1, 0), sample_stride=1000)
        a, _ = m.make_fock_operators(n)
        assert m.purity(res.rho_super[-1]) > 1.0 - 1e-6
        amp = np.trace(a @ res.rho_super[-1])
        assert abs(amp - z0 * math.exp(-0.5)) < 2e-3

    def test_monitored_cat_picks_a_branch(self):
        # one efficient homodyne observer resolves the superposition quickly
        n, z0 = 20, 2.0
        spec = m.build_qbm_homodyne(n, (1.0,), lo_amplitude=40.0, lo_phase=0.0)
        state = m.initial_trajectory_state(m.cat_state(z0, n), 1)
        res = m.run_trajectory(spec, state, 0.2, 5e-5, m.RngStream(3, 0), sample_stride=4000)
        plus = m.coherent_state(z0, n)
        minus = m.coherent_state(-z0, n)
        p_plus = np.trace(plus @ res.rho_super[-1]).real
        p_minus = np.trace(minus @ res.rho_super[-1]).real
        imbalance = abs(p_plus - p_minus) / (p_plus + p_minus)
        assert imbalance > 0.9
