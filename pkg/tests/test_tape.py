"""Reverse-mode tape: primitive VJPs, full-graph gradients, derivative networks."""

import numpy as np
import pytest

from gasolve.diffusion import MixtureModel, NoiseSchedule, velocity
from gasolve.tape import Tape, backward, finite_diff, grad_of_input, gradient_vector

VE = NoiseSchedule(T=10.0, delta=1e-3)


def test_square_of_leaf():
    tp = Tape()
    p = tp.leaf(np.array(3.0))
    loss = tp.mul(p, p)
    grads = backward(tp, loss)
    assert grads[p] == pytest.approx(6.0)


def test_unused_leaf_gets_zero():
    tp = Tape()
    p = tp.leaf(np.array(3.0))
    q = tp.leaf(np.array(2.0))
    loss = tp.mul(p, p)
    vec = gradient_vector(tp, loss, [p, q])
    np.testing.assert_array_equal(vec, [6.0, 0.0])


def test_non_scalar_loss_rejected():
    tp = Tape()
    p = tp.leaf(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        backward(tp, p)


def test_euler_step_gradient_wrt_step_size():
    # d/d(dt) of || x + dt * v(x, t) ||^2 against central differences
    model = MixtureModel.single([0.0], 1.0)
    x0 = np.array([2.0, -1.0])
    t0 = 1.0
    v = velocity(model, VE, x0, t0)

    def loss_fn(p):
        dt = p[0]
        x1 = x0 + dt * v
        return float(np.sum(x1 * x1))

    tp = Tape()
    dt = tp.leaf(np.array(-0.3))
    x1 = tp.add(tp.constant(x0), tp.mul(dt, tp.constant(v)))
    loss = tp.sum(tp.square(x1))
    g = backward(tp, loss)[dt]
    want = finite_diff(loss_fn, np.array([-0.3]), h=1e-6)[0]
    assert g == pytest.approx(want, rel=1e-6)


PRIMITIVES = [
    ("add", lambda tp, a, b: tp.add(a, b), 2),
    ("sub", lambda tp, a, b: tp.sub(a, b), 2),
    ("mul", lambda tp, a, b: tp.mul(a, b), 2),
    ("div", lambda tp, a, b: tp.div(a, b), 2),
    ("neg", lambda tp, a: tp.neg(a), 1),
    ("log", lambda tp, a: tp.log(a), 1),
    ("exp", lambda tp, a: tp.exp(a), 1),
    ("sigmoid", lambda tp, a: tp.sigmoid(a), 1),
    ("softplus", lambda tp, a: tp.softplus(a), 1),
    ("square", lambda tp, a: tp.square(a), 1),
    ("abs", lambda tp, a: tp.absval(a), 1),
    ("scale", lambda tp, a: tp.scale(a, -1.7), 1),
    ("shift", lambda tp, a: tp.shift(a, 0.4), 1),
]


@pytest.mark.parametrize("name,build,arity", PRIMITIVES)
def test_primitive_matches_finite_differences(name, build, arity):
    rng = np.random.default_rng(hash(name) % 2**32)
    vals = rng.uniform(0.2, 1.5, size=(arity, 3))

    def loss_fn(flat):
        args = flat.reshape(arity, 3)
        tp = Tape()
        nodes = [tp.leaf(a) for a in args]
        out = build(tp, *nodes)
        return float(np.sum(out.value * out.value))

    tp = Tape()
    nodes = [tp.leaf(v) for v in vals]
    out = build(tp, *nodes)
    loss = tp.sum(tp.square(out))
    grads = backward(tp, loss)
    got = np.concatenate([grads[n].ravel() for n in nodes])
    want = finite_diff(loss_fn, vals.ravel(), h=1e-6)
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-8)


def test_matmul_cases_match_fd():
    rng = np.random.default_rng(5)
    cases = [
        ((4, 3), (3, 2)),
        ((4, 3), (3,)),
        ((3,), (3,)),
        ((3,), (3, 2)),
    ]
    for sa, sb in cases:
        A = rng.normal(size=sa)
        B = rng.normal(size=sb)

        def loss_fn(flat):
            a = flat[: A.size].reshape(sa)
            b = flat[A.size:].reshape(sb)
            out = a @ b
            return float(np.sum(out * out))

        tp = Tape()
        na, nb = tp.leaf(A), tp.leaf(B)
        loss = tp.sum(tp.square(tp.matmul(na, nb)))
        grads = backward(tp, loss)
        got = np.concatenate([grads[na].ravel(), grads[nb].ravel()])
        want = finite_diff(loss_fn, np.concatenate([A.ravel(), B.ravel()]), h=1e-6)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)


def test_broadcast_add_and_sum_axis():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(4, 3))
    b = rng.normal(size=3)

    def loss_fn(flat):
        x = flat[:12].reshape(4, 3)
        bb = flat[12:]
        return float(np.sum((x + bb).sum(axis=-1) ** 2))

    tp = Tape()
    nx, nb = tp.leaf(X), tp.leaf(b)
    loss = tp.sum(tp.square(tp.sum(tp.add(nx, nb), axis=-1)))
    grads = backward(tp, loss)
    got = np.concatenate([grads[nx].ravel(), grads[nb].ravel()])
    want = finite_diff(loss_fn, np.concatenate([X.ravel(), b]), h=1e-6)
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)


def test_clamp_saturation_gradient():
    tp = Tape()
    a = tp.leaf(np.array([0.5, 2.0, -3.0]))
    out = tp.clamp(a, 0.0, 1.0)
    loss = tp.sum(out)
    g = backward(tp, loss)[a]
    np.testing.assert_array_equal(g, [1.0, 0.0, 0.0])


def test_index_scatter():
    tp = Tape()
    a = tp.leaf(np.array([1.0, 2.0, 3.0]))
    loss = tp.square(tp.index(a, 1))
    g = backward(tp, loss)[a]
    np.testing.assert_array_equal(g, [0.0, 4.0, 0.0])


def test_score_eval_vjps_match_fd():
    model = MixtureModel(
        weights=[0.4, 0.6], means=[[-1.0, 0.5], [1.0, -0.2]], variances=[0.3, 0.8]
    )
    x0 = np.array([0.3, -0.1])
    t0 = 0.7

    def loss_fn(p):
        from gasolve.diffusion import score

        s = score(model, VE, p[:2], p[2])
        return float(np.sum(s * s))

    tp = Tape()
    x = tp.leaf(x0)
    t = tp.leaf(np.array(t0))
    s = tp.score_eval(model, VE, x, t)
    loss = tp.sum(tp.square(s))
    grads = backward(tp, loss)
    got = np.concatenate([grads[x], [grads[t]]])
    want = finite_diff(loss_fn, np.array([*x0, t0]), h=1e-6)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-9)


def test_forward_replay_is_bitwise_deterministic():
    rng = np.random.default_rng(21)
    X = rng.normal(size=(3, 2))

    def build():
        tp = Tape()
        x = tp.leaf(X)
        out = tp.mean(tp.square(tp.softplus(tp.scale(x, 1.3))))
        return out.value.copy()

    np.testing.assert_array_equal(build(), build())


def test_finite_diff_basics():
    assert finite_diff(lambda p: float(p[0] ** 2), np.array([3.0]), h=1e-5)[0] == pytest.approx(6.0, abs=1e-9)
    np.testing.assert_array_equal(
        finite_diff(lambda p: 1.0, np.array([0.3, -0.4])), [0.0, 0.0]
    )
    with pytest.raises(ValueError):
        finite_diff(lambda p: 0.0, np.array([1.0]), h=0.0)


class TestGradOfInput:
    def test_linear_map(self):
        w = np.array([0.3, -1.2, 0.7])
        tp = Tape()
        x = tp.leaf(np.array([1.0, 2.0, 3.0]))
        D = tp.add(tp.matmul(x, tp.constant(w)), tp.constant(np.array(0.5)))
        g = grad_of_input(tp, D, x)
        np.testing.assert_allclose(g.value, w, rtol=1e-15)

    def test_half_squared_norm(self):
        tp = Tape()
        x = tp.leaf(np.array([1.0, -2.0, 0.5]))
        D = tp.scale(tp.sum(tp.square(x)), 0.5)
        g = grad_of_input(tp, D, x)
        np.testing.assert_allclose(g.value, x.value, rtol=1e-14)

    def test_two_layer_mlp_matches_fd(self):
        rng = np.random.default_rng(2)
        d, hdim = 3, 5
        W1 = rng.normal(size=(d, hdim))
        b1 = rng.normal(size=hdim)
        W2 = rng.normal(size=(hdim, hdim))
        b2 = rng.normal(size=hdim)
        w3 = rng.normal(size=hdim)
        x0 = rng.normal(size=d)

        def disc(x):
            a1 = np.logaddexp(0.0, x @ W1 + b1)
            a2 = np.logaddexp(0.0, a1 @ W2 + b2)
            return float(a2 @ w3)

        tp = Tape()
        x = tp.leaf(x0)
        a1 = tp.softplus(tp.add(tp.matmul(x, tp.constant(W1)), tp.constant(b1)))
        a2 = tp.softplus(tp.add(tp.matmul(a1, tp.constant(W2)), tp.constant(b2)))
        D = tp.matmul(a2, tp.constant(w3))
        g = grad_of_input(tp, D, x)
        want = finite_diff(lambda p: disc(p), x0, h=1e-6)
        np.testing.assert_allclose(g.value, want, rtol=1e-5, atol=1e-9)

    def test_unreachable_input_gives_zeros(self):
        tp = Tape()
        x = tp.leaf(np.array([1.0, 2.0]))
        y = tp.leaf(np.array(2.0))
        D = tp.square(y)
        g = grad_of_input(tp, D, x)
        np.testing.assert_array_equal(g.value, [0.0, 0.0])

    def test_derivative_network_is_differentiable(self):
        # backprop through || grad_x D ||^2 into the weights, vs finite differences
        rng = np.random.default_rng(4)
        d, hdim = 2, 4
        x0 = rng.normal(size=(3, d))
        W1 = rng.normal(size=(d, hdim))
        w2 = rng.normal(size=hdim)

        def penalty(flat):
            W = flat[: d * hdim].reshape(d, hdim)
            w = flat[d * hdim:]
            z = x0 @ W
            a = np.logaddexp(0.0, z)
            # rows of grad_x D for D = sum_i a_i . w
            G = (expit_np(z) * w) @ W.T
            return float(np.mean(np.sum(G * G, axis=-1)))

        def expit_np(z):
            return 1.0 / (1.0 + np.exp(-z))

        tp = Tape()
        X = tp.constant(x0)
        nW1 = tp.leaf(W1)
        nw2 = tp.leaf(w2)
        a = tp.softplus(tp.matmul(X, nW1))
        D = tp.sum(tp.matmul(a, nw2))
        G = grad_of_input(tp, D, X)
        pen = tp.mean(tp.sum(tp.square(G), axis=-1))
        grads = backward(tp, pen)
        got = np.concatenate([grads[nW1].ravel(), grads[nw2].ravel()])
        want = finite_diff(penalty, np.concatenate([W1.ravel(), w2]), h=1e-6)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)

    def test_rejects_nonscalar(self):
        tp = Tape()
        x = tp.leaf(np.array([1.0, 2.0]))
        y = tp.square(x)
        with pytest.raises(ValueError):
            grad_of_input(tp, y, x)
