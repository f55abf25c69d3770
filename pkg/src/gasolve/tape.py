"""Minimal reverse-mode differentiation on an append-only tape.

Nodes hold float64 arrays: scalars (), vectors (d,), or batches (B, d) /
(B, H).  Each primitive records numeric vector-Jacobian products, so
`backward` is one reverse sweep in append order.  Score evaluations enter as
opaque primitives whose VJPs are the analytic mixture score-Jacobian and
score time-derivative.

`grad_of_input` builds the gradient of a scalar with respect to an input
vector *as new tape nodes* (a derivative network), by replaying symbolic VJP
rules for the smooth primitives (affine maps, softplus, products,
reductions).  Running the ordinary numeric backward over the extended tape
then differentiates through that gradient, which is all the gradient-penalty
terms need; primitives outside the smooth subset (clamps, score evaluations)
deliberately have no symbolic rule.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from gasolve.diffusion import score, score_time_derivative, score_vjp


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` after a broadcast op."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Node:
    __slots__ = ("value", "parents", "vjps", "op", "aux", "requires_grad", "idx")

    def __init__(self, value, parents=(), vjps=(), op="leaf", aux=None, requires_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.op = op
        self.aux = aux
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.idx = -1

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Append-only computation record; one per loss evaluation."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _push(self, node: Node) -> Node:
        node.idx = len(self.nodes)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        return self._push(Node(value, op="leaf", requires_grad=True))

    def constant(self, value) -> Node:
        return self._push(Node(value, op="const"))

    # -- arithmetic ---------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        v = a.value + b.value
        return self._push(Node(
            v, (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
            op="add",
        ))

    def sub(self, a: Node, b: Node) -> Node:
        v = a.value - b.value
        return self._push(Node(
            v, (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
            op="sub",
        ))

    def neg(self, a: Node) -> Node:
        return self._push(Node(-a.value, (a,), (lambda g: -g,), op="neg"))

    def mul(self, a: Node, b: Node) -> Node:
        v = a.value * b.value
        return self._push(Node(
            v, (a, b),
            (lambda g: _unbroadcast(g * b.value, a.shape),
             lambda g: _unbroadcast(g * a.value, b.shape)),
            op="mul",
        ))

    def div(self, a: Node, b: Node) -> Node:
        v = a.value / b.value
        return self._push(Node(
            v, (a, b),
            (lambda g: _unbroadcast(g / b.value, a.shape),
             lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.shape)),
            op="div",
        ))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._push(Node(c * a.value, (a,), (lambda g: c * g,), op="scale", aux=c))

    def shift(self, a: Node, c: float) -> Node:
        return self._push(Node(a.value + float(c), (a,), (lambda g: g,), op="shift", aux=float(c)))

    # -- nonlinearities -----------------------------------------------------

    def log(self, a: Node) -> Node:
        return self._push(Node(np.log(a.value), (a,), (lambda g: g / a.value,), op="log"))

    def exp(self, a: Node) -> Node:
        v = np.exp(a.value)
        return self._push(Node(v, (a,), (lambda g: g * v,), op="exp"))

    def expm1_neg(self, a: Node) -> Node:
        """e^{-a} - 1, accurate for small a."""
        v = np.expm1(-a.value)
        return self._push(Node(v, (a,), (lambda g: -g * (v + 1.0),), op="expm1_neg"))

    def sigmoid(self, a: Node) -> Node:
        v = expit(a.value)
        return self._push(Node(v, (a,), (lambda g: g * v * (1.0 - v),), op="sigmoid"))

    def softplus(self, a: Node) -> Node:
        v = np.logaddexp(0.0, a.value)
        return self._push(Node(v, (a,), (lambda g: g * expit(a.value),), op="softplus"))

    def square(self, a: Node) -> Node:
        return self._push(Node(a.value * a.value, (a,), (lambda g: 2.0 * g * a.value,), op="square"))

    def absval(self, a: Node) -> Node:
        return self._push(Node(np.abs(a.value), (a,), (lambda g: g * np.sign(a.value),), op="abs"))

    def clamp(self, a: Node, lo: float, hi: float) -> Node:
        v = np.clip(a.value, lo, hi)
        inside = (a.value > lo) & (a.value < hi)
        return self._push(Node(v, (a,), (lambda g: g * inside,), op="clamp", aux=(lo, hi)))

    # -- shape ops ----------------------------------------------------------

    def reshape(self, a: Node, shape) -> Node:
        shape = tuple(shape)
        return self._push(Node(
            a.value.reshape(shape), (a,), (lambda g: g.reshape(a.shape),),
            op="reshape", aux=shape,
        ))

    def transpose(self, a: Node) -> Node:
        return self._push(Node(a.value.T, (a,), (lambda g: g.T,), op="transpose"))

    def broadcast_to(self, a: Node, shape) -> Node:
        shape = tuple(shape)
        return self._push(Node(
            np.broadcast_to(a.value, shape).copy(), (a,),
            (lambda g: _unbroadcast(g, a.shape),),
            op="broadcast_to", aux=shape,
        ))

    def slice1d(self, a: Node, start: int, stop: int) -> Node:
        start, stop = int(start), int(stop)

        def vjp(g):
            z = np.zeros(a.shape)
            z[start:stop] = g
            return z

        return self._push(Node(
            a.value[start:stop].copy(), (a,), (vjp,), op="slice", aux=(start, stop),
        ))

    def index(self, a: Node, i: int) -> Node:
        i = int(i)

        def vjp(g):
            z = np.zeros(a.shape)
            z[i] = g
            return z

        return self._push(Node(a.value[i], (a,), (vjp,), op="index", aux=i))

    def sum(self, a: Node, axis=None) -> Node:
        v = a.value.sum(axis=axis)

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, a.shape).copy()
            return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

        return self._push(Node(v, (a,), (vjp,), op="sum", aux=axis))

    def mean(self, a: Node) -> Node:
        return self.scale(self.sum(a), 1.0 / a.value.size)

    def matmul(self, a: Node, b: Node) -> Node:
        v = a.value @ b.value
        an, bn = a.value.ndim, b.value.ndim

        def vjp_a(g):
            if an == 2 and bn == 2:
                return g @ b.value.T
            if an == 2 and bn == 1:
                return np.outer(g, b.value)
            if an == 1 and bn == 1:
                return g * b.value
            return b.value @ g  # (k,) @ (k,m)

        def vjp_b(g):
            if an == 2 and bn == 2:
                return a.value.T @ g
            if an == 2 and bn == 1:
                return a.value.T @ g
            if an == 1 and bn == 1:
                return g * a.value
            return np.outer(a.value, g)  # (k,) @ (k,m)

        return self._push(Node(v, (a, b), (vjp_a, vjp_b), op="matmul"))

    def dot(self, a: Node, b: Node) -> Node:
        return self.matmul(a, b)

    # -- opaque model primitive ----------------------------------------------

    def score_eval(self, model, schedule, x: Node, t: Node) -> Node:
        """Mixture score at (x, t); VJPs are the analytic Jacobian products."""
        x_val, t_val = x.value, float(t.value)
        v = score(model, schedule, x_val, t_val)

        def vjp_x(g):
            return score_vjp(model, schedule, x_val, t_val, g)

        def vjp_t(g):
            return np.asarray(
                np.sum(g * score_time_derivative(model, schedule, x_val, t_val))
            )

        return self._push(Node(v, (x, t), (vjp_x, vjp_t), op="score"))


def backward(tape: Tape, loss: Node) -> dict:
    """Cotangents of a scalar loss for every reachable node, keyed by node.

    Visits nodes in reverse append order exactly once; leaves that do not
    influence the loss are absent (read them as zero).
    """
    if loss.value.shape != ():
        raise ValueError("backward expects a scalar loss node")
    cot = {loss.idx: np.asarray(1.0)}
    grads = {}
    for i in range(loss.idx, -1, -1):
        node = tape.nodes[i]
        g = cot.pop(i, None)
        if g is None:
            continue
        if node.requires_grad and not node.parents:
            grads[node] = g
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad:
                continue
            contrib = np.asarray(vjp(g))
            if parent.idx in cot:
                cot[parent.idx] = cot[parent.idx] + contrib
            else:
                cot[parent.idx] = contrib
    return grads


def gradient_vector(tape: Tape, loss: Node, leaves) -> np.ndarray:
    """Flat gradient over `leaves` in the given order; unreached leaves get 0."""
    grads = backward(tape, loss)
    parts = []
    for leaf in leaves:
        g = grads.get(leaf)
        parts.append(np.zeros(leaf.value.size) if g is None else np.asarray(g).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def finite_diff(loss_fn, params, h: float = 1e-6) -> np.ndarray:
    """Central differences (f(p + h e_i) - f(p - h e_i)) / 2h per coordinate."""
    if h <= 0.0:
        raise ValueError("h must be positive")
    params = np.asarray(params, dtype=float)
    out = np.zeros_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = h
        out[i] = (loss_fn(params + e) - loss_fn(params - e)) / (2.0 * h)
    return out


# -- symbolic backward (derivative networks) ---------------------------------


def _require_shape(node: Node, parent: Node):
    if node.shape != parent.shape:
        raise NotImplementedError(
            f"symbolic rule would need broadcast reduction: {node.shape} vs {parent.shape}"
        )
    return node


def _sym_passthrough(tape, node, pi, cot):
    return _require_shape(cot, node.parents[pi])


def _sym_sub(tape, node, pi, cot):
    out = cot if pi == 0 else tape.neg(cot)
    return _require_shape(out, node.parents[pi])


def _sym_neg(tape, node, pi, cot):
    return tape.neg(cot)


def _sym_mul(tape, node, pi, cot):
    other = node.parents[1 - pi]
    return _require_shape(tape.mul(cot, other), node.parents[pi])


def _sym_scale(tape, node, pi, cot):
    return tape.scale(cot, node.aux)


def _sym_square(tape, node, pi, cot):
    return tape.mul(cot, tape.scale(node.parents[0], 2.0))


def _sym_softplus(tape, node, pi, cot):
    return tape.mul(cot, tape.sigmoid(node.parents[0]))


def _sym_sum(tape, node, pi, cot):
    a = node.parents[0]
    if node.aux is None:
        return tape.broadcast_to(cot, a.shape)
    expanded = tape.reshape(cot, cot.shape + (1,)) if node.aux in (-1, a.value.ndim - 1) else None
    if expanded is None:
        raise NotImplementedError("symbolic sum only supports axis None or -1")
    return tape.broadcast_to(expanded, a.shape)


def _sym_reshape(tape, node, pi, cot):
    return tape.reshape(cot, node.parents[0].shape)


def _sym_broadcast(tape, node, pi, cot):
    raise NotImplementedError("symbolic rule for broadcast_to is not supported")


def _sym_matmul(tape, node, pi, cot):
    a, b = node.parents
    an, bn = a.value.ndim, b.value.ndim
    if pi == 0:
        if an == 2 and bn == 2:
            return tape.matmul(cot, tape.transpose(b))
        if an == 2 and bn == 1:
            return tape.mul(tape.reshape(cot, (cot.shape[0], 1)), b)
        if an == 1 and bn == 1:
            return tape.mul(cot, b)
        return tape.matmul(b, cot)
    if an == 1 and bn == 1:
        return tape.mul(cot, a)
    raise NotImplementedError("symbolic matmul rule for the weight side is not supported")


_SYMBOLIC_RULES = {
    "add": _sym_passthrough,
    "shift": _sym_passthrough,
    "sub": _sym_sub,
    "neg": _sym_neg,
    "mul": _sym_mul,
    "scale": _sym_scale,
    "square": _sym_square,
    "softplus": _sym_softplus,
    "sum": _sym_sum,
    "reshape": _sym_reshape,
    "matmul": _sym_matmul,
}


def grad_of_input(tape: Tape, scalar: Node, input_node: Node) -> Node:
    """Gradient of `scalar` w.r.t. `input_node`, built as tape nodes.

    Only the smooth primitives between the input and the scalar are
    supported; the result can feed differentiable norms, so a later numeric
    backward differentiates through it.
    """
    if scalar.value.shape != ():
        raise ValueError("grad_of_input expects a scalar node")
    on_path = {input_node.idx}
    for i in range(input_node.idx + 1, scalar.idx + 1):
        node = tape.nodes[i]
        if any(p.idx in on_path for p in node.parents):
            on_path.add(i)
    if scalar.idx not in on_path:
        return tape.constant(np.zeros(input_node.shape))
    cot: dict[int, Node] = {scalar.idx: tape.constant(np.array(1.0))}
    for i in range(scalar.idx, input_node.idx, -1):
        node = tape.nodes[i]
        g = cot.pop(i, None)
        if g is None or i not in on_path:
            continue
        rule = _SYMBOLIC_RULES.get(node.op)
        if rule is None:
            raise NotImplementedError(f"no symbolic rule for op {node.op!r}")
        for pi, parent in enumerate(node.parents):
            if parent.idx not in on_path:
                continue
            contrib = rule(tape, node, pi, g)
            if parent.idx in cot:
                cot[parent.idx] = tape.add(cot[parent.idx], contrib)
            else:
                cot[parent.idx] = contrib
    return cot[input_node.idx]
