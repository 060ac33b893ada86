"""Plant dynamics, uncertainty schedule, baseline, and delay-line tests."""

import numpy as np
import pytest

from l1gp import numerics, plant


J = np.diag([0.011, 0.011, 0.021])
A_M = -3.0 * np.eye(3)


def make_cfg(kind="quadratic", switch_time=None, **kw):
    if switch_time is None:
        sched = plant.UncertaintySchedule(((0.0, kind),))
    else:
        sched = plant.UncertaintySchedule(((0.0, kind), (switch_time, "sine_switch")))
    return plant.PlantConfig(J=J, uncertainty=sched, A_m=A_M, **kw)


class TestUncertainty:
    def test_poly_at_origin(self):
        sched = plant.UncertaintySchedule(((0.0, "quadratic"),))
        assert np.array_equal(plant.uncertainty_eval(sched, 0.0, np.zeros(3)), np.zeros(3))

    def test_poly_at_ones(self):
        sched = plant.UncertaintySchedule(((0.0, "quadratic"),))
        got = plant.uncertainty_eval(sched, 1.0, np.ones(3))
        assert np.allclose(got, [0.02, 0.02, 0.01], atol=1e-15)

    def test_sine_at_origin(self):
        sched = plant.UncertaintySchedule(((0.0, "sine_switch"),))
        got = plant.uncertainty_eval(sched, 0.0, np.zeros(3))
        assert np.allclose(got, [0.0, 0.01, 0.5], atol=1e-15)

    def test_switch_timing(self):
        sched = plant.UncertaintySchedule(((0.0, "quadratic"), (35.0, "sine_switch")))
        x = np.zeros(3)
        assert np.allclose(sched.eval(34.999, x), 0.0)
        assert np.allclose(sched.eval(35.0, x), [0.0, 0.01, 0.5])

    def test_deterministic(self):
        sched = plant.UncertaintySchedule(((0.0, "quadratic"),))
        x = np.array([0.3, -0.7, 1.1])
        assert np.array_equal(sched.eval(3.0, x), sched.eval(3.0, x))

    def test_custom_callable(self):
        sched = plant.UncertaintySchedule(((0.0, lambda x: 2.0 * x),))
        assert np.allclose(sched.eval(0.0, np.ones(3)), 2.0)

    def test_bad_schedules(self):
        with pytest.raises(ValueError):
            plant.UncertaintySchedule(((1.0, "zero"),))
        with pytest.raises(ValueError):
            plant.UncertaintySchedule(((0.0, "zero"), (0.0, "quadratic")))
        with pytest.raises(ValueError):
            plant.UncertaintySchedule(((0.0, "nope"),))


class TestBaseline:
    def test_zero(self):
        assert np.array_equal(plant.baseline_control(np.zeros(3), J, A_M), np.zeros(3))

    def test_single_axis(self):
        got = plant.baseline_control(np.array([1.0, 0.0, 0.0]), J, A_M)
        assert np.allclose(got, [-0.033, 0.0, 0.0], atol=1e-15)

    def test_symmetric_inertia_cross_cancels(self):
        x = np.array([1.0, 1.0, 0.0])
        got = plant.baseline_control(x, J, A_M)
        assert np.allclose(got, -3.0 * J @ x, atol=1e-15)

    def test_gyroscopic_orthogonality(self):
        rng = np.random.default_rng(2)
        for _ in range(10000):
            x = rng.normal(size=3)
            Jx = J @ x
            cross = np.cross(x, Jx)
            assert abs(x @ cross) < 1e-12 * max(1.0, np.linalg.norm(x) ** 2)


class TestPlantDerivative:
    def test_equilibrium(self):
        cfg = make_cfg("zero")
        got = plant.plant_derivative(np.zeros(3), np.zeros(3), 0.0, cfg)
        assert np.array_equal(got, np.zeros(3))

    def test_closed_loop_identity(self):
        # with the baseline included the physical form must equal
        # A_m x + B_m (u + f(x)) to round-off, for any state
        cfg = make_cfg("quadratic")
        B_m = cfg.J_inv
        rng = np.random.default_rng(5)
        for _ in range(100):
            x = rng.normal(size=3)
            u = rng.normal(size=3)
            got = plant.plant_derivative(x, u, 0.0, cfg)
            f = plant.poly_quadratic_uncertainty(x)
            want = A_M @ x + B_m @ (u + f)
            assert np.allclose(got, want, atol=1e-12 * max(1, np.max(np.abs(want))))

    def test_nominal_numbers(self):
        cfg = make_cfg("quadratic")
        got = plant.plant_derivative(np.ones(3), np.zeros(3), 0.0, cfg)
        want = np.array(
            [-3 + 0.02 / 0.011, -3 + 0.02 / 0.011, -3 + 0.01 / 0.021]
        )
        assert np.allclose(got, want, atol=1e-12)
        assert np.allclose(want, [-1.1818, -1.1818, -2.5238], atol=1e-4)

    def test_linear_when_uncertainty_zero(self):
        # u_bl exactly cancels the gyroscopic term: trajectory == exp(A_m t) x0
        cfg = make_cfg("zero")
        x = np.array([1.0, -0.5, 0.8])
        x0 = x.copy()
        h = 0.001
        for i in range(5000):
            x = numerics.rk4_step(
                lambda t, z: plant.plant_derivative(z, np.zeros(3), t, cfg), i * h, x, h
            )
        want = numerics.matrix_exponential(A_M, 5.0) @ x0
        assert np.max(np.abs(x - want)) < 1e-8


class TestDelayLine:
    def test_zero_delay_identity(self):
        line = plant.DelayLine(0.0, 0.001)
        u = np.array([1.0, 2.0, 3.0])
        assert plant.DelayLine(0.0, 0.001).push(u) is u
        assert np.array_equal(line.push(u), u)

    def test_shift(self):
        line = plant.DelayLine(0.003, 0.001)
        outs = [line.push(np.full(3, float(k))) for k in range(6)]
        # zero-padded for the first three pushes, then the delayed stream
        assert np.array_equal(np.array(outs)[:, 0], [0, 0, 0, 0, 1, 2])

    def test_non_multiple_rejected(self):
        with pytest.raises(ValueError):
            plant.DelayLine(0.0015, 0.001)
