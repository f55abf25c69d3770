"""Baseline integrators: hand-checked steps, oracle agreement, convergence orders."""

import numpy as np
import pytest

from gasolve.diffusion import (
    MixtureModel,
    NoiseSchedule,
    State,
    data_prediction,
    exact_gaussian_path,
)
from gasolve.base_solvers import (
    TeacherConfig,
    Trajectory,
    dpmpp3m_rollout,
    dpmpp3m_step,
    euler_rollout,
    euler_step,
    rk4_solve,
    teacher_rollout,
)
from gasolve.grids import logsnr_grid

VE = NoiseSchedule(T=10.0, delta=1e-3)
STD_GAUSS = MixtureModel.single([0.0], 1.0)

# problem where all three solvers sit cleanly in their asymptotic regimes
# over N in {10, 20, 40, 80} (measured during calibration)
ORDER_SCHED = NoiseSchedule(T=20.0, delta=0.3)
ORDER_MODEL = MixtureModel.single([0.0], 0.25)


def fitted_order(run, exact, step_counts=(10, 20, 40, 80)):
    errs = [float(np.linalg.norm(run(n) - exact)) for n in step_counts]
    return np.polyfit(np.log(1.0 / np.asarray(step_counts, float)), np.log(errs), 1)[0]


class TestEulerStep:
    def test_hand_value(self):
        out = euler_step(STD_GAUSS, VE, State(x=[2.0], t=1.0), 0.5)
        assert out.t == 0.5
        np.testing.assert_allclose(out.x, [1.5], rtol=1e-14)

    def test_zero_velocity_at_mode(self):
        model = MixtureModel.single([1.0], 0.3)
        out = euler_step(model, VE, State(x=[1.0], t=1.0), 0.25)
        np.testing.assert_allclose(out.x, [1.0], atol=1e-15)

    def test_zero_length_step(self):
        out = euler_step(STD_GAUSS, VE, State(x=[2.0], t=1.0), 1.0)
        np.testing.assert_array_equal(out.x, [2.0])

    def test_rejects_increasing_time(self):
        with pytest.raises(ValueError):
            euler_step(STD_GAUSS, VE, State(x=[2.0], t=1.0), 1.5)


class TestDpmpp3mStep:
    def test_first_step_hand_value(self):
        # grid [2, 1]: a = sigma_1/sigma_2 = 0.5, h = log 2, psi1 = -0.5,
        # xhat0(2, 2) = s^2 x/(s^2+t^2) = 0.4  ->  x1 = 0.5*2 - 1*(-0.5)*0.4 = 1.2
        from gasolve.grids import TimeGrid

        grid = TimeGrid(np.array([2.0, 1.0]))
        traj = Trajectory()
        traj.append_point(np.array([2.0]))
        traj.append_eval(data_prediction(STD_GAUSS, VE, np.array([2.0]), 2.0), 2.0)
        got = dpmpp3m_step(VE, traj, grid, 0)
        np.testing.assert_allclose(got, [1.2], rtol=1e-14)
        # independent straight-line evaluation of the one-step update
        xhat = 1.0 * 2.0 / (1.0 + 4.0)
        h = np.log(2.0)
        want = 0.5 * 2.0 - (np.expm1(-h)) * xhat
        np.testing.assert_allclose(got, [want], rtol=1e-14)

    def test_zero_data_prediction_keeps_linear_term(self):
        from gasolve.grids import TimeGrid

        grid = TimeGrid(np.array([2.0, 1.0]))
        traj = Trajectory()
        traj.append_point(np.array([3.0]))
        traj.append_eval(np.array([0.0]), 2.0)  # stubbed model output
        got = dpmpp3m_step(VE, traj, grid, 0)
        np.testing.assert_array_equal(got, [0.5 * 3.0])

    def test_requires_history(self):
        from gasolve.grids import TimeGrid

        grid = TimeGrid(np.array([2.0, 1.0, 0.5]))
        traj = Trajectory()
        traj.append_point(np.array([3.0]))
        with pytest.raises(ValueError):
            dpmpp3m_step(VE, traj, grid, 0)  # eval for step 0 missing

    def test_three_step_rollout_near_exact(self):
        exact = exact_gaussian_path(STD_GAUSS, VE, State(x=[3.0], t=10.0), 1e-3)
        got = dpmpp3m_rollout(STD_GAUSS, VE, logsnr_grid(3, VE), np.array([3.0]))
        err = float(np.linalg.norm(got - exact))
        assert err < 0.2  # measured 0.106 at calibration; order-3-scale bound

    def test_single_step_equals_exponential_integrator(self):
        # N=1 rollout must equal the closed-form one-step update exactly
        grid = logsnr_grid(1, VE)
        x0 = np.array([4.0])
        got = dpmpp3m_rollout(STD_GAUSS, VE, grid, x0)
        t0, t1 = grid[0], grid[1]
        xhat = data_prediction(STD_GAUSS, VE, x0, t0)
        h = np.log(t0) - np.log(t1)
        want = (t1 / t0) * x0 - np.expm1(-h) * xhat
        np.testing.assert_array_equal(got, want)


class TestRk4:
    def test_matches_exact_path(self):
        sched = NoiseSchedule(T=2.0, delta=1e-3)
        got = rk4_solve(STD_GAUSS, sched, np.array([3.0]), 10_000)
        want = exact_gaussian_path(STD_GAUSS, sched, State(x=[3.0], t=2.0), 1e-3)
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_halving_error_ratio_is_order_four(self):
        sched = NoiseSchedule(T=2.0, delta=1.0)
        exact = exact_gaussian_path(STD_GAUSS, sched, State(x=[3.0], t=2.0), 1.0)
        e1 = np.linalg.norm(rk4_solve(STD_GAUSS, sched, np.array([3.0]), 1) - exact)
        e2 = np.linalg.norm(rk4_solve(STD_GAUSS, sched, np.array([3.0]), 2) - exact)
        assert 10.0 < e1 / e2 < 24.0  # measured 15.5; 2^4 up to higher-order terms

    def test_mode_is_fixed_point(self):
        model = MixtureModel.single([1.0], 0.5)
        got = rk4_solve(model, VE, np.array([1.0]), 50)
        np.testing.assert_allclose(got, [1.0], atol=1e-14)

    def test_rejects_bad_substeps(self):
        with pytest.raises(ValueError):
            rk4_solve(STD_GAUSS, VE, np.array([1.0]), 0)


class TestTeacherRollout:
    def test_rk4_oracle_matches_exact(self):
        cfg = TeacherConfig(kind="rk4-oracle", nfe=10_000)
        got = teacher_rollout(STD_GAUSS, VE, cfg, np.array([3.0]))
        want = exact_gaussian_path(STD_GAUSS, VE, State(x=[3.0], t=10.0), 1e-3)
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_dpmpp3m_nfe20_close_to_exact(self):
        cfg = TeacherConfig(kind="dpmpp3m", nfe=20, grid_kind="logsnr")
        got = teacher_rollout(STD_GAUSS, VE, cfg, np.array([3.0]))
        want = exact_gaussian_path(STD_GAUSS, VE, State(x=[3.0], t=10.0), 1e-3)
        assert float(np.linalg.norm(got - want)) < 1e-4  # measured 7.3e-6

    def test_fixed_point_for_both_kinds(self):
        model = MixtureModel.single([2.0], 0.5)
        for kind, nfe in (("dpmpp3m", 8), ("rk4-oracle", 64)):
            got = teacher_rollout(model, VE, TeacherConfig(kind=kind, nfe=nfe), np.array([2.0]))
            np.testing.assert_allclose(got, [2.0], atol=1e-13)

    def test_deterministic(self):
        cfg = TeacherConfig(kind="dpmpp3m", nfe=12)
        x = np.array([1.7, -0.3])
        model = MixtureModel.single([0.0, 0.0], 1.0)
        a = teacher_rollout(model, VE, cfg, x)
        b = teacher_rollout(model, VE, cfg, x)
        np.testing.assert_array_equal(a, b)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TeacherConfig(kind="unipc")
        with pytest.raises(ValueError):
            TeacherConfig(nfe=0)


class TestConvergenceOrders:
    def setup_method(self):
        self.exact = exact_gaussian_path(
            ORDER_MODEL, ORDER_SCHED, State(x=[3.0], t=ORDER_SCHED.T), ORDER_SCHED.delta
        )

    def test_euler_first_order(self):
        order = fitted_order(
            lambda n: euler_rollout(ORDER_MODEL, ORDER_SCHED, logsnr_grid(n, ORDER_SCHED), np.array([3.0])),
            self.exact,
        )
        assert abs(order - 1.0) < 0.15

    def test_dpmpp3m_third_order(self):
        order = fitted_order(
            lambda n: dpmpp3m_rollout(ORDER_MODEL, ORDER_SCHED, logsnr_grid(n, ORDER_SCHED), np.array([3.0])),
            self.exact,
        )
        assert abs(order - 3.0) < 0.5

    def test_rk4_fourth_order(self):
        order = fitted_order(
            lambda n: rk4_solve(ORDER_MODEL, ORDER_SCHED, np.array([3.0]), n),
            self.exact,
        )
        assert abs(order - 4.0) < 0.5
