"""Forward-noising schedule and analytic Gaussian-mixture oracles.

The forward process perturbs data as q(x_t | x_0) = N(α_t x_0, σ_t² I).
Running the probability-flow ODE

    dx/dt = f(t) x - ½ g²(t) ∇_x log p_t(x),
    f(t) = d log α_t / dt,   g²(t) = dσ_t²/dt - 2 f(t) σ_t²

backwards from t = T to t = δ transports the tractable prior to the data
distribution.  With a Gaussian-mixture data distribution every quantity a
solver needs is available in closed form: the marginal at time t is again a
mixture, p_t = Σ_k w_k N(α_t μ_k, (α_t² s_k² + σ_t²) I), so the score, its
Jacobian, its time derivative, and the posterior mean E[x_0 | x_t] are all
exact.  These oracles replace a trained score network.

Only the variance-exploding schedule (α ≡ 1, σ_t = t) is shipped; the
drift/diffusion coefficients are derived generically from (α, σ) hooks so
further schedules can slot in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANCE_EXPLODING = "ve"

_SCHEDULE_KINDS = (VARIANCE_EXPLODING,)


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise schedule (α_t, σ_t) on the time interval [delta, T]."""

    kind: str = VARIANCE_EXPLODING
    T: float = 10.0
    delta: float = 1e-3

    def __post_init__(self):
        if self.kind not in _SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (0.0 < self.delta < self.T):
            raise ValueError("schedule requires 0 < delta < T")

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.delta) or np.any(t > self.T):
            raise ValueError(
                f"time {t} outside schedule range [{self.delta}, {self.T}]"
            )
        return t

    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def sigma(self, t):
        return np.asarray(t, dtype=float)

    def alpha_dot(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def sigma_dot(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def alpha_sigma(self, t):
        """(α_t, σ_t), validating t ∈ [delta, T]."""
        t = self._check_time(t)
        return self.alpha(t), self.sigma(t)

    def log_snr(self, t):
        """λ_t = log(α_t / σ_t), the solver-internal convention."""
        t = self._check_time(t)
        return np.log(self.alpha(t)) - np.log(self.sigma(t))

    def time_of_log_snr(self, lam):
        """Inverse of log_snr; for the VE schedule t = exp(-λ)."""
        return np.exp(-np.asarray(lam, dtype=float))

    def drift_coeff(self, t):
        """f(t) = d log α_t / dt."""
        t = np.asarray(t, dtype=float)
        return self.alpha_dot(t) / self.alpha(t)

    # tape builders used by the differentiable rollout; the VE forms are
    # alpha = 1, sigma = t, lambda = -log t
    def tape_alpha(self, tape, t_node):
        return tape.constant(np.array(1.0))

    def tape_sigma(self, tape, t_node):
        return t_node

    def tape_log_snr(self, tape, t_node):
        return tape.neg(tape.log(t_node))

    def diffusion_sq(self, t):
        """g²(t) = dσ_t²/dt - 2 f(t) σ_t²."""
        t = np.asarray(t, dtype=float)
        sig = self.sigma(t)
        return 2.0 * sig * self.sigma_dot(t) - 2.0 * self.drift_coeff(t) * sig**2


@dataclass(frozen=True)
class MixtureModel:
    """Isotropic Gaussian mixture playing the role of the data distribution.

    Components are (weight w_k, mean μ_k ∈ R^d, variance s_k²) with
    Σ w_k = 1.  Per-component covariances are s_k² I.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if m.shape[0] != w.shape[0] or v.shape[0] != w.shape[0]:
            raise ValueError("weights, means, variances must agree on K")
        if np.any(w <= 0.0) or np.any(w > 1.0):
            raise ValueError("component weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1 within 1e-12")
        if np.any(v <= 0.0):
            raise ValueError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @classmethod
    def single(cls, mean, var: float) -> "MixtureModel":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(np.array([1.0]), mean[None, :], np.array([float(var)]))


@dataclass
class State:
    """A point x on the PF-ODE trajectory at time t."""

    x: np.ndarray
    t: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = float(self.t)
        if not np.all(np.isfinite(self.x)):
            raise ValueError("state x must be finite")


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"x must be a vector or batch of vectors, got shape {x.shape}")


def _marginal_moments(model: MixtureModel, schedule: NoiseSchedule, t: float):
    """Component means α_t μ_k and inflated variances v_k = α_t² s_k² + σ_t²."""
    alpha, sigma = schedule.alpha_sigma(float(t))
    m = alpha * model.means
    v = alpha**2 * model.variances + sigma**2
    return m, v


def _responsibilities(model: MixtureModel, x2d, m, v):
    """Posterior component probabilities γ_k(x) under p_t, shape (B, K)."""
    d = model.d
    sq = ((x2d[:, None, :] - m[None, :, :]) ** 2).sum(axis=2)
    loglik = np.log(model.weights)[None, :] - 0.5 * d * np.log(2.0 * np.pi * v)[None, :] - sq / (2.0 * v)[None, :]
    loglik = loglik - loglik.max(axis=1, keepdims=True)
    g = np.exp(loglik)
    return g / g.sum(axis=1, keepdims=True)


def score(model: MixtureModel, schedule: NoiseSchedule, x, t: float):
    """∇_x log p_t(x) for the noised mixture, in closed form.

    Accepts a single vector (d,) or a batch (B, d); the output matches.
    """
    x2d, squeeze = _as_batch(x)
    m, v = _marginal_moments(model, schedule, t)
    gamma = _responsibilities(model, x2d, m, v)
    g = -(x2d[:, None, :] - m[None, :, :]) / v[None, :, None]
    out = np.einsum("bk,bkd->bd", gamma, g)
    return out[0] if squeeze else out


def data_prediction(model: MixtureModel, schedule: NoiseSchedule, x, t: float):
    """Posterior mean x̂_0 = E[x_0 | x_t] = (x + σ_t² score) / α_t."""
    alpha, sigma = schedule.alpha_sigma(float(t))
    return (np.asarray(x, dtype=float) + sigma * sigma * score(model, schedule, x, t)) / alpha


def velocity(model: MixtureModel, schedule: NoiseSchedule, x, t: float):
    """PF-ODE velocity f(t) x - ½ g²(t) score(x, t); -t·score for VE."""
    t = float(t)
    x = np.asarray(x, dtype=float)
    return schedule.drift_coeff(t) * x - 0.5 * schedule.diffusion_sq(t) * score(
        model, schedule, x, t
    )


def score_vjp(model: MixtureModel, schedule: NoiseSchedule, x, t: float, w):
    """wᵀ·(∂score/∂x) from the closed-form mixture Hessian.

    ∂score/∂x = Σ_k γ_k (-I/v_k + g_k g_kᵀ) - s sᵀ with
    g_k = -(x - α_t μ_k)/v_k and s the score; the matrix is symmetric so the
    product is evaluated as H w.
    """
    x2d, squeeze = _as_batch(x)
    w2d, _ = _as_batch(w)
    if w2d.shape != x2d.shape:
        raise ValueError("cotangent w must match the shape of x")
    m, v = _marginal_moments(model, schedule, t)
    gamma = _responsibilities(model, x2d, m, v)
    g = -(x2d[:, None, :] - m[None, :, :]) / v[None, :, None]
    s = np.einsum("bk,bkd->bd", gamma, g)
    gw = np.einsum("bkd,bd->bk", g, w2d)
    out = (
        -np.einsum("bk,k,bd->bd", gamma, 1.0 / v, w2d)
        + np.einsum("bk,bk,bkd->bd", gamma, gw, g)
        - s * np.einsum("bd,bd->b", s, w2d)[:, None]
    )
    return out[0] if squeeze else out


def score_time_derivative(model: MixtureModel, schedule: NoiseSchedule, x, t: float):
    """∂score/∂t at fixed x, via the v_k = α² s_k² + σ² chain."""
    t = float(t)
    x2d, squeeze = _as_batch(x)
    m, v = _marginal_moments(model, schedule, t)
    alpha, sigma = schedule.alpha(t), schedule.sigma(t)
    v_dot = 2.0 * alpha * schedule.alpha_dot(t) * model.variances + 2.0 * sigma * schedule.sigma_dot(t)
    m_dot = schedule.alpha_dot(t) * model.means

    gamma = _responsibilities(model, x2d, m, v)
    diff = x2d[:, None, :] - m[None, :, :]
    g = -diff / v[None, :, None]
    sq = (diff**2).sum(axis=2)
    d = model.d
    # d/dt of log N(x; m_k, v_k I)
    loglik_dot = (
        -0.5 * d * (v_dot / v)[None, :]
        + np.einsum("bkd,kd->bk", diff, m_dot) / v[None, :]
        + sq * (v_dot / (2.0 * v**2))[None, :]
    )
    gamma_dot = gamma * (loglik_dot - (gamma * loglik_dot).sum(axis=1, keepdims=True))
    g_dot = m_dot[None, :, :] / v[None, :, None] - g * (v_dot / v)[None, :, None]
    out = np.einsum("bk,bkd->bd", gamma_dot, g) + np.einsum("bk,bkd->bd", gamma, g_dot)
    return out[0] if squeeze else out


def data_prediction_time_derivative(model, schedule, x, t: float):
    """∂x̂_0/∂t at fixed x (chain through σ_t² score and 1/α_t)."""
    t = float(t)
    x = np.asarray(x, dtype=float)
    alpha, sigma = schedule.alpha_sigma(t)
    s = score(model, schedule, x, t)
    ds_dt = score_time_derivative(model, schedule, x, t)
    num_dot = 2.0 * sigma * schedule.sigma_dot(t) * s + sigma * sigma * ds_dt
    return num_dot / alpha - schedule.alpha_dot(t) * (x + sigma * sigma * s) / alpha**2


def exact_gaussian_path(
    model: MixtureModel, schedule: NoiseSchedule, state: State, to_t: float
):
    """Exact PF-ODE solution for a single-component mixture under VE.

    The marginal stays Gaussian, so x(t) - μ = (x(t₀) - μ)·√((s²+t²)/(s²+t₀²)).
    """
    if model.n_components != 1:
        raise ValueError("exact path is only available for a single component")
    if schedule.kind != VARIANCE_EXPLODING:
        raise ValueError("exact path implemented for the VE schedule only")
    mu = model.means[0]
    s2 = model.variances[0]
    ratio = np.sqrt((s2 + float(to_t) ** 2) / (s2 + state.t**2))
    return mu + ratio * (state.x - mu)
