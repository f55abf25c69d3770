"""Learned solver: parameter accounting, base-solver reduction, differentiability."""

import numpy as np
import pytest

from gasolve.base_solvers import Trajectory, dpmpp3m_rollout
from gasolve.diffusion import MixtureModel, NoiseSchedule, data_prediction
from gasolve.grids import stickbreak_grid, stickbreak_inverse
from gasolve.gsolver import (
    GsParams,
    a_off_index,
    c_old_index,
    c_recent_index,
    eval_time,
    gs_rollout,
    gs_rollout_graph,
    gs_step,
    init_params,
    make_leaves,
    param_count,
)
from gasolve.tape import Tape, finite_diff, gradient_vector

VE = NoiseSchedule(T=10.0, delta=1e-3)


def random_mixture(rng, max_k=3, max_d=3):
    k = int(rng.integers(1, max_k + 1))
    d = int(rng.integers(1, max_d + 1))
    w = rng.random(k) + 0.1
    return MixtureModel(
        weights=w / w.sum(),
        means=rng.normal(scale=1.5, size=(k, d)),
        variances=rng.random(k) + 0.1,
    )


class TestParamCount:
    @pytest.mark.parametrize("n,count", [(1, 4), (2, 10), (4, 28), (10, 130)])
    def test_closed_form(self, n, count):
        assert param_count(n) == count

    def test_matches_init_vector(self):
        for n in range(1, 11):
            assert init_params(n).to_vector().size == param_count(n)

    def test_layout_indices_cover_vector(self):
        n = 5
        p = init_params(n)
        seen = {a_off_index(j, m) for m in range(1, n) for j in range(m)}
        assert seen == set(range(p.a_off.size))
        seen = {c_recent_index(m, k) for m in range(n) for k in range(min(m + 1, 3))}
        assert seen == set(range(p.c_recent.size))
        seen = {c_old_index(j, m) for m in range(3, n) for j in range(m - 2)}
        assert seen == set(range(p.c_old.size))

    def test_vector_round_trip(self):
        rng = np.random.default_rng(0)
        vec = rng.normal(size=param_count(6))
        p = GsParams.from_vector(6, vec)
        np.testing.assert_array_equal(p.to_vector(), vec)

    def test_bad_vector_length(self):
        with pytest.raises(ValueError):
            GsParams.from_vector(4, np.zeros(5))


class TestInitParams:
    def test_corrections_zero(self):
        p = init_params(4)
        for name in ("xi", "a_diag", "a_off", "c_recent", "c_old"):
            np.testing.assert_array_equal(getattr(p, name), 0.0)

    def test_grid_is_time_uniform_with_short_final_step(self):
        p = init_params(4)
        g = stickbreak_grid(p.theta, VE.T, VE.delta)
        d, T = VE.delta, VE.T
        want_interior = [(3 / 4) * (T - d) + d, (2 / 4) * (T - d) + d, (1 / 4) * (T - d) + d]
        np.testing.assert_allclose(g.steps[1:4], want_interior, rtol=1e-12)
        np.testing.assert_allclose(g.steps[4], d + 0.1 * (g.steps[3] - d), rtol=1e-12)

    def test_single_step_init(self):
        p = init_params(1)
        g = stickbreak_grid(p.theta, 1.0, 0.0)
        np.testing.assert_allclose(g.steps, [1.0, 0.1], rtol=1e-12)


class TestReduction:
    def test_zero_corrections_match_base_solver(self):
        rng = np.random.default_rng(14)
        for n_steps in range(1, 11):
            params = init_params(n_steps)
            grid = stickbreak_grid(params.theta, VE.T, VE.delta)
            for _ in range(5):
                model = random_mixture(rng)
                x_T = rng.normal(scale=VE.T, size=model.d)
                a = gs_rollout(model, VE, params, x_T)
                b = dpmpp3m_rollout(model, VE, grid, x_T)
                dev = np.abs(a - b) / np.maximum(np.abs(b), 1e-300)
                assert dev.max() < 1e-12

    def test_tape_rollout_matches_numpy(self):
        rng = np.random.default_rng(3)
        for n_steps in (1, 2, 3, 5):
            params = init_params(n_steps)
            params.xi[:] = rng.normal(scale=0.05, size=n_steps)
            params.a_diag[:] = rng.normal(scale=0.02, size=n_steps)
            params.a_off[:] = rng.normal(scale=0.02, size=params.a_off.size)
            params.c_recent[:] = rng.normal(scale=0.02, size=params.c_recent.size)
            params.c_old[:] = rng.normal(scale=0.02, size=params.c_old.size)
            model = random_mixture(rng)
            X = rng.normal(scale=VE.T, size=(4, model.d))
            tp = Tape()
            leaves = make_leaves(tp, params)
            node = gs_rollout_graph(tp, model, VE, leaves, X)
            direct = gs_rollout(model, VE, params, X)
            np.testing.assert_allclose(node.value, direct, rtol=1e-14, atol=1e-14)


class TestHandExamples:
    def setup_method(self):
        self.sched = NoiseSchedule(T=2.0, delta=1e-3)
        self.model = MixtureModel.single([0.0], 1.0)
        theta = stickbreak_inverse(np.array([2.0, 1.0]), self.sched.delta)
        self.base = GsParams.from_vector(1, np.concatenate([theta, np.zeros(3)]))

    def _traj(self):
        traj = Trajectory()
        traj.append_point(np.array([2.0]))
        traj.append_eval(data_prediction(self.model, self.sched, np.array([2.0]), 2.0), 2.0)
        return traj

    def test_zero_corrections_reproduce_base_value(self):
        got = gs_step(self.model, self.sched, self._traj(), self.base, 0)
        np.testing.assert_allclose(got, [1.2], rtol=1e-12)

    def test_current_point_correction(self):
        p = self.base.copy()
        p.a_diag[0] = 0.1
        got = gs_step(self.model, self.sched, self._traj(), p, 0)
        np.testing.assert_allclose(got, [1.2 + 0.1 * 2.0], rtol=1e-12)

    def test_bracket_correction_on_first_velocity_term(self):
        p = self.base.copy()
        p.c_recent[c_recent_index(0, 0)] = 0.5
        got = gs_step(self.model, self.sched, self._traj(), p, 0)
        # 0.5*2 - (1*(-0.5) + 0.5)*0.4 = 1.0
        np.testing.assert_allclose(got, [1.0], rtol=1e-12)

    def test_missing_history_raises(self):
        traj = Trajectory()
        traj.append_point(np.array([2.0]))
        with pytest.raises(ValueError):
            gs_step(self.model, self.sched, traj, self.base, 0)


class TestEvalTimeClamp:
    def test_saturates_both_ends(self):
        assert eval_time(VE, 5.0, 100.0) == VE.T
        assert eval_time(VE, 5.0, -100.0) == VE.delta
        assert eval_time(VE, 5.0, 0.25) == 5.25

    def test_rollout_with_extreme_offsets_stays_finite(self):
        params = init_params(3)
        params.xi[:] = [1e6, -1e6, 42.0]
        model = MixtureModel.single([0.0], 1.0)
        out = gs_rollout(model, VE, params, np.array([3.0]))
        assert np.all(np.isfinite(out))


class TestContinuity:
    def test_single_coordinate_perturbations_are_first_order(self):
        model = MixtureModel.single([0.5], 0.8)
        params = init_params(4)
        x_T = np.array([4.0])
        base = gs_rollout(model, VE, params, x_T)
        vec = params.to_vector()
        rng = np.random.default_rng(8)
        for i in rng.choice(vec.size, size=6, replace=False):
            deltas = []
            for eps in (1e-6, 1e-7):
                v = vec.copy()
                v[i] += eps
                out = gs_rollout(model, VE, GsParams.from_vector(4, v), x_T)
                deltas.append(np.linalg.norm(out - base) / eps)
            if deltas[0] < 1e-12 and deltas[1] < 1e-12:
                continue  # coordinate without influence at this configuration
            assert deltas[1] == pytest.approx(deltas[0], rel=0.1)


class TestGradients:
    @pytest.mark.parametrize("n_steps", [2, 4])
    def test_backward_matches_finite_differences(self, n_steps):
        rng = np.random.default_rng(100 + n_steps)
        model = random_mixture(rng, max_k=2, max_d=2)
        X = rng.normal(scale=VE.T, size=(3, model.d))
        target = rng.normal(size=(3, model.d))
        p0 = init_params(n_steps)
        vec0 = p0.to_vector() + rng.normal(scale=0.02, size=param_count(n_steps))

        def loss_fn(vec):
            out = gs_rollout(model, VE, GsParams.from_vector(n_steps, vec), X)
            return float(np.mean((out - target) ** 2))

        tp = Tape()
        leaves = make_leaves(tp, GsParams.from_vector(n_steps, vec0))
        out = gs_rollout_graph(tp, model, VE, leaves, X)
        diff = tp.sub(out, tp.constant(target))
        loss = tp.mean(tp.square(diff))
        got = gradient_vector(tp, loss, leaves.ordered())
        want = finite_diff(loss_fn, vec0, h=1e-6)
        denom = np.maximum(np.abs(want), 1e-8)
        assert np.max(np.abs(got - want) / denom) < 1e-5
