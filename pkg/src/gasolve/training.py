"""Distillation and adversarial training of the learned solver.

The solver descends on  distill + w_adv * E f(D(student) - D(teacher))  with
f(t) = -log(1 + e^{-t}); the discriminator ascends on the same expectation
minus squared input-gradient penalties at real and fake samples.  Optimizer
recipe: Adam, global-norm gradient clipping, and an exponential moving
average of the solver parameters used for evaluation.

Randomness is counter-based: every draw comes from a stream keyed by
(master seed, purpose, iteration), so runs are bitwise reproducible and no
consumer can perturb another's stream.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from gasolve.errors import TrainingDivergedError
from gasolve.gsolver import (
    GsParams,
    gs_rollout_graph,
    init_params,
    make_leaves,
    param_count,
)
from gasolve.tape import Node, Tape, grad_of_input, gradient_vector

DISTANCES = ("l2", "l1")

# stream purposes for the counter-based RNG scheme
STREAM_TEACHER_PRIOR = 0
STREAM_BATCH = 1
STREAM_REAL_BATCH = 2
STREAM_DISC_INIT = 3
STREAM_EVAL_PRIOR = 4


def stream(seed: int, purpose: int, counter: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, counter)."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(counter)))
    )


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults follow the published training recipe."""

    lr: float = 1e-3
    disc_lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    clip_norm: float = 1.0
    w_adv: float = 0.0
    lambda1: float = 0.1
    lambda2: float = 0.1
    batch_size: int = 24
    iterations: int = 2000
    seed: int = 0
    distance: str = "l2"

    def __post_init__(self):
        if self.lr <= 0.0 or self.disc_lr <= 0.0:
            raise ValueError("learning rates must be positive")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.clip_norm <= 0.0:
            raise ValueError("clip_norm must be positive")
        if self.w_adv < 0.0:
            raise ValueError("w_adv must be non-negative")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size >= 1 and iterations >= 0 required")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")


# -- losses -------------------------------------------------------------------


def distill_loss(student_out, teacher_out, kind: str = "l2") -> float:
    """Mean over all elements of |diff| (l1) or diff^2 (l2)."""
    a = np.asarray(student_out, dtype=float)
    b = np.asarray(teacher_out, dtype=float)
    if a.shape != b.shape:
        raise ValueError("student and teacher batches must have equal shapes")
    if kind == "l1":
        return float(np.mean(np.abs(a - b)))
    if kind == "l2":
        return float(np.mean((a - b) ** 2))
    raise ValueError(f"unknown distance {kind!r}")


def distill_graph(tape: Tape, out: Node, teacher, kind: str = "l2") -> Node:
    diff = tape.sub(out, tape.constant(np.asarray(teacher, dtype=float)))
    if kind == "l1":
        return tape.mean(tape.absval(diff))
    if kind == "l2":
        return tape.mean(tape.square(diff))
    raise ValueError(f"unknown distance {kind!r}")


def relativistic_f(t) -> np.ndarray:
    """f(t) = -log(1 + e^{-t}), overflow-safe at both tails."""
    return -np.logaddexp(0.0, -np.asarray(t, dtype=float))


def relativistic_f_graph(tape: Tape, t: Node) -> Node:
    return tape.neg(tape.softplus(tape.neg(t)))


# -- discriminator ------------------------------------------------------------


class Discriminator:
    """Two hidden affine layers with softplus activation, scoring vectors.

    The activation is the logistic-based softplus (derivative expit, second
    derivative expit') so input gradients have closed forms on the tape.
    Weights live in one flat array: W1, b1, W2, b2, w3, b3.
    """

    HIDDEN = 64
    ACTIVATION = "softplus-logistic"

    def __init__(self, d: int, weights=None):
        self.d = int(d)
        h = self.HIDDEN
        self._slices = {}
        start = 0
        for name, shape in (
            ("W1", (self.d, h)),
            ("b1", (h,)),
            ("W2", (h, h)),
            ("b2", (h,)),
            ("w3", (h,)),
            ("b3", ()),
        ):
            size = int(np.prod(shape, dtype=int)) if shape else 1
            self._slices[name] = (slice(start, start + size), shape)
            start += size
        self.n_weights = start
        if weights is None:
            weights = np.zeros(start)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.size != start:
            raise ValueError(f"expected {start} weights for d={d}, got {self.weights.size}")

    @classmethod
    def weight_count(cls, d: int) -> int:
        return (d + 1) * cls.HIDDEN + (cls.HIDDEN + 1) * cls.HIDDEN + cls.HIDDEN + 1

    @classmethod
    def initialized(cls, d: int, rng: np.random.Generator) -> "Discriminator":
        """Scaled-Gaussian weight matrices, zero biases."""
        h = cls.HIDDEN
        disc = cls(d)
        w = disc.weights
        sl = disc._slices
        w[sl["W1"][0]] = rng.normal(scale=1.0 / np.sqrt(d), size=d * h)
        w[sl["W2"][0]] = rng.normal(scale=1.0 / np.sqrt(h), size=h * h)
        w[sl["w3"][0]] = rng.normal(scale=1.0 / np.sqrt(h), size=h)
        return disc

    def _parts(self, weights):
        out = {}
        for name, (sl, shape) in self._slices.items():
            arr = weights[sl]
            out[name] = arr.reshape(shape) if shape else arr[0]
        return out

    def forward(self, X) -> np.ndarray:
        """Scores for a batch (B, d) -> (B,)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self._parts(self.weights)
        a1 = np.logaddexp(0.0, X @ p["W1"] + p["b1"])
        a2 = np.logaddexp(0.0, a1 @ p["W2"] + p["b2"])
        return a2 @ p["w3"] + p["b3"]

    def graph(self, tape: Tape, X: Node, weights: Node | None = None) -> Node:
        """Score graph; `weights` None freezes the current weights as constants."""
        w = weights if weights is not None else tape.constant(self.weights)

        def mat(name):
            sl, shape = self._slices[name]
            return tape.reshape(tape.slice1d(w, sl.start, sl.stop), shape)

        def vec(name):
            sl, _ = self._slices[name]
            return tape.slice1d(w, sl.start, sl.stop)

        a1 = tape.softplus(tape.add(tape.matmul(X, mat("W1")), vec("b1")))
        a2 = tape.softplus(tape.add(tape.matmul(a1, mat("W2")), vec("b2")))
        b3 = tape.index(w, self._slices["b3"][0].start)
        return tape.add(tape.matmul(a2, vec("w3")), b3)


def adv_loss(disc: Discriminator, fake, real) -> float:
    """Mean relativistic score over independently drawn (fake, real) pairs."""
    fake = np.atleast_2d(np.asarray(fake, dtype=float))
    real = np.atleast_2d(np.asarray(real, dtype=float))
    if fake.shape[0] == 0 or real.shape[0] == 0:
        raise ValueError("batches must be non-empty")
    return float(np.mean(relativistic_f(disc.forward(fake) - disc.forward(real))))


def adv_loss_graph(tape: Tape, disc: Discriminator, fake: Node, real: Node,
                   weights: Node | None = None) -> Node:
    df = disc.graph(tape, fake, weights)
    dr = disc.graph(tape, real, weights)
    return tape.mean(relativistic_f_graph(tape, tape.sub(df, dr)))


def grad_penalty_graph(tape: Tape, disc: Discriminator, weights: Node | None,
                       real: Node, fake: Node, lambda1: float, lambda2: float) -> Node:
    """lambda1 E||grad_x D(real)||^2 + lambda2 E||grad_x D(fake)||^2.

    The input gradients are built as derivative networks, so the penalty is
    differentiable with respect to the discriminator weights.
    """
    def term(X: Node) -> Node:
        total = tape.sum(disc.graph(tape, X, weights))
        g = grad_of_input(tape, total, X)
        return tape.mean(tape.sum(tape.square(g), axis=-1))

    return tape.add(tape.scale(term(real), lambda1), tape.scale(term(fake), lambda2))


def grad_penalty(disc: Discriminator, real, fake, lambda1: float, lambda2: float) -> float:
    tape = Tape()
    real_n = tape.constant(np.atleast_2d(np.asarray(real, dtype=float)))
    fake_n = tape.constant(np.atleast_2d(np.asarray(fake, dtype=float)))
    return float(grad_penalty_graph(tape, disc, None, real_n, fake_n, lambda1, lambda2).value)


# -- optimizer pieces ---------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0):
    """Bias-corrected Adam update; returns (new_params, new_state)."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads, and state must have matching lengths")
    if weight_decay != 0.0:
        grads = grads + weight_decay * params
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, t=t)


def ema_update(shadow, params, decay: float) -> np.ndarray:
    """shadow' = decay * shadow + (1 - decay) * params."""
    shadow = np.asarray(shadow, dtype=float)
    params = np.asarray(params, dtype=float)
    if shadow.shape != params.shape:
        raise ValueError("shadow and params must have matching lengths")
    return decay * shadow + (1.0 - decay) * params


def clip_grad_norm(grads, max_norm: float) -> np.ndarray:
    """Scale to global L2 norm max_norm when exceeded; identity otherwise."""
    if max_norm <= 0.0:
        raise ValueError("max_norm must be positive")
    grads = np.asarray(grads, dtype=float)
    norm = float(np.linalg.norm(grads))
    if norm <= max_norm:
        return grads
    return grads * (max_norm / norm)


# -- training loops -----------------------------------------------------------


@dataclass
class TrainResult:
    params: GsParams
    ema_params: GsParams
    adam: AdamState
    records: list
    iteration: int
    disc: Discriminator | None = None
    disc_adam: AdamState | None = None


def _check_finite(value: float, iteration: int, what: str):
    if not np.isfinite(value):
        raise TrainingDivergedError(iteration, f"{what} became non-finite ({value})")


def train_gs(model, schedule, cfg: TrainConfig, dataset, n_steps: int,
             init: GsParams | None = None) -> TrainResult:
    """Distillation-only training; deterministic given cfg.seed."""
    params = init.copy() if init is not None else init_params(n_steps)
    vec = params.to_vector()
    assert vec.size == param_count(n_steps)
    adam = AdamState.zeros(vec.size)
    ema = vec.copy()
    records = []
    n_rows = dataset.x_T.shape[0]
    for it in range(cfg.iterations):
        t_start = time.perf_counter()
        idx = stream(cfg.seed, STREAM_BATCH, it).integers(0, n_rows, cfg.batch_size)
        X, Y = dataset.x_T[idx], dataset.teacher[idx]

        tape = Tape()
        leaves = make_leaves(tape, GsParams.from_vector(n_steps, vec))
        out = gs_rollout_graph(tape, model, schedule, leaves, X)
        loss = distill_graph(tape, out, Y, cfg.distance)
        loss_val = float(loss.value)
        _check_finite(loss_val, it, "distillation loss")

        grads = gradient_vector(tape, loss, leaves.ordered())
        grad_norm = float(np.linalg.norm(grads))
        grads = clip_grad_norm(grads, cfg.clip_norm)
        vec, adam = adam_step(vec, grads, adam, cfg.lr, cfg.beta1, cfg.beta2,
                              weight_decay=cfg.weight_decay)
        ema = ema_update(ema, vec, cfg.ema_decay)
        records.append({
            "iteration": it,
            "distill_loss": loss_val,
            "adv_loss": 0.0,
            "disc_objective": 0.0,
            "grad_norm_pre_clip": grad_norm,
            "wallclock_ms": (time.perf_counter() - t_start) * 1e3,
        })
    return TrainResult(
        params=GsParams.from_vector(n_steps, vec),
        ema_params=GsParams.from_vector(n_steps, ema),
        adam=adam,
        records=records,
        iteration=cfg.iterations,
    )


def train_gas(model, schedule, cfg: TrainConfig, dataset, n_steps: int,
              init: GsParams | None = None) -> TrainResult:
    """Alternating solver / discriminator updates.

    With w_adv = 0 the solver consumes exactly the streams and graphs of
    train_gs, so its parameter trajectory is bitwise identical; the
    discriminator still trains on its own streams.
    """
    params = init.copy() if init is not None else init_params(n_steps)
    vec = params.to_vector()
    adam = AdamState.zeros(vec.size)
    ema = vec.copy()
    disc = Discriminator.initialized(dataset.x_T.shape[1], stream(cfg.seed, STREAM_DISC_INIT))
    disc_adam = AdamState.zeros(disc.n_weights)
    records = []
    n_rows = dataset.x_T.shape[0]
    for it in range(cfg.iterations):
        t_start = time.perf_counter()
        idx = stream(cfg.seed, STREAM_BATCH, it).integers(0, n_rows, cfg.batch_size)
        idx_real = stream(cfg.seed, STREAM_REAL_BATCH, it).integers(0, n_rows, cfg.batch_size)
        X, Y = dataset.x_T[idx], dataset.teacher[idx]
        Y_real = dataset.teacher[idx_real]

        # solver update
        tape = Tape()
        leaves = make_leaves(tape, GsParams.from_vector(n_steps, vec))
        out = gs_rollout_graph(tape, model, schedule, leaves, X)
        distill = distill_graph(tape, out, Y, cfg.distance)
        if cfg.w_adv > 0.0:
            adv = adv_loss_graph(tape, disc, out, tape.constant(Y_real))
            total = tape.add(distill, tape.scale(adv, cfg.w_adv))
            adv_val = float(adv.value)
        else:
            total = distill
            adv_val = adv_loss(disc, out.value, Y_real)
        distill_val = float(distill.value)
        _check_finite(distill_val, it, "distillation loss")
        _check_finite(adv_val, it, "adversarial loss")

        grads = gradient_vector(tape, total, leaves.ordered())
        grad_norm = float(np.linalg.norm(grads))
        grads = clip_grad_norm(grads, cfg.clip_norm)
        vec, adam = adam_step(vec, grads, adam, cfg.lr, cfg.beta1, cfg.beta2,
                              weight_decay=cfg.weight_decay)
        ema = ema_update(ema, vec, cfg.ema_decay)

        # discriminator update on detached samples: ascend adv - penalty
        fake_vals = out.value
        tape_d = Tape()
        w_leaf = tape_d.leaf(disc.weights)
        fake_n = tape_d.constant(fake_vals)
        real_n = tape_d.constant(Y_real)
        adv_d = adv_loss_graph(tape_d, disc, fake_n, real_n, weights=w_leaf)
        pen = grad_penalty_graph(tape_d, disc, w_leaf, real_n, fake_n,
                                 cfg.lambda1, cfg.lambda2)
        objective = tape_d.sub(adv_d, pen)
        obj_val = float(objective.value)
        _check_finite(obj_val, it, "discriminator objective")
        disc_grads = gradient_vector(tape_d, objective, [w_leaf])
        new_w, disc_adam = adam_step(disc.weights, -disc_grads, disc_adam,
                                     cfg.disc_lr, cfg.beta1, cfg.beta2,
                                     weight_decay=cfg.weight_decay)
        disc = Discriminator(disc.d, new_w)

        records.append({
            "iteration": it,
            "distill_loss": distill_val,
            "adv_loss": adv_val,
            "disc_objective": obj_val,
            "grad_norm_pre_clip": grad_norm,
            "wallclock_ms": (time.perf_counter() - t_start) * 1e3,
        })
    return TrainResult(
        params=GsParams.from_vector(n_steps, vec),
        ema_params=GsParams.from_vector(n_steps, ema),
        adam=adam,
        records=records,
        iteration=cfg.iterations,
        disc=disc,
        disc_adam=disc_adam,
    )
