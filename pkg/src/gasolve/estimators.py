"""Scikit-learn style estimators wrapping solver distillation.

The sampler is fit/predict shaped: `fit(X, y)` distills the solver from
paired (prior draw, teacher endpoint) data and `predict(X)` pushes new prior
draws through the learned sampler.  Inheriting from BaseEstimator provides
get_params/set_params/clone, so the samplers drop into pipelines and
hyperparameter search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from gasolve.dataset import PairedDataset
from gasolve.diffusion import MixtureModel, NoiseSchedule
from gasolve.gsolver import gs_rollout
from gasolve.metrics import endpoint_error
from gasolve.training import TrainConfig, train_gas, train_gs
from gasolve.validation import check_n_features, check_paired


class SolverDistiller(BaseEstimator):
    """Few-step sampler distilled from teacher endpoints.

    Parameters mirror the published training recipe; `mixture` is the
    analytic data distribution whose score the sampler queries.
    """

    def __init__(
        self,
        mixture: MixtureModel | None = None,
        n_steps: int = 4,
        end_time: float = 10.0,
        terminal_time: float = 1e-3,
        iterations: int = 2000,
        batch_size: int = 24,
        learning_rate: float = 1e-3,
        ema_decay: float = 0.999,
        clip_norm: float = 1.0,
        distance: str = "l2",
        seed: int = 0,
    ):
        self.mixture = mixture
        self.n_steps = n_steps
        self.end_time = end_time
        self.terminal_time = terminal_time
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.ema_decay = ema_decay
        self.clip_norm = clip_norm
        self.distance = distance
        self.seed = seed

    def _schedule(self) -> NoiseSchedule:
        return NoiseSchedule(T=self.end_time, delta=self.terminal_time)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.learning_rate,
            ema_decay=self.ema_decay,
            clip_norm=self.clip_norm,
            batch_size=self.batch_size,
            iterations=self.iterations,
            seed=self.seed,
            distance=self.distance,
        )

    def _run_training(self, cfg, dataset):
        return train_gs(
            self.mixture, self._schedule(), cfg, dataset, n_steps=self.n_steps
        )

    def fit(self, X, y):
        """Distill from prior draws X and teacher endpoints y (both (n, d))."""
        if self.mixture is None:
            raise ValueError("a MixtureModel is required to evaluate the score")
        X, y = check_paired(X, y)
        if X.shape[1] != self.mixture.d:
            raise ValueError(
                f"X has {X.shape[1]} features but the mixture is {self.mixture.d}-dimensional"
            )
        dataset = PairedDataset(x_T=X, teacher=y, seed=self.seed)
        result = self._run_training(self._train_config(), dataset)
        self.n_features_in_ = X.shape[1]
        self.params_ = result.params
        self.ema_params_ = result.ema_params
        self.history_ = result.records
        self._result = result
        return self

    def predict(self, X) -> np.ndarray:
        """Sampler endpoints for prior draws X, using the EMA parameters."""
        if not hasattr(self, "ema_params_"):
            raise NotFittedError("this estimator has not been fitted yet")
        X = check_n_features(X, self.n_features_in_)
        return gs_rollout(self.mixture, self._schedule(), self.ema_params_, X)

    def score(self, X, y) -> float:
        """Negative mean endpoint error (higher is better)."""
        X, y = check_paired(X, y)
        return -endpoint_error(self.predict(X), y)


class AdversarialSolverDistiller(SolverDistiller):
    """Solver distillation with the relativistic adversarial term."""

    def __init__(
        self,
        mixture: MixtureModel | None = None,
        n_steps: int = 4,
        end_time: float = 10.0,
        terminal_time: float = 1e-3,
        iterations: int = 2000,
        batch_size: int = 24,
        learning_rate: float = 1e-3,
        ema_decay: float = 0.999,
        clip_norm: float = 1.0,
        distance: str = "l2",
        seed: int = 0,
        adv_weight: float = 1.0,
        disc_learning_rate: float = 1e-5,
        penalty_real: float = 0.1,
        penalty_fake: float = 0.1,
    ):
        super().__init__(
            mixture=mixture,
            n_steps=n_steps,
            end_time=end_time,
            terminal_time=terminal_time,
            iterations=iterations,
            batch_size=batch_size,
            learning_rate=learning_rate,
            ema_decay=ema_decay,
            clip_norm=clip_norm,
            distance=distance,
            seed=seed,
        )
        self.adv_weight = adv_weight
        self.disc_learning_rate = disc_learning_rate
        self.penalty_real = penalty_real
        self.penalty_fake = penalty_fake

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.learning_rate,
            disc_lr=self.disc_learning_rate,
            ema_decay=self.ema_decay,
            clip_norm=self.clip_norm,
            w_adv=self.adv_weight,
            lambda1=self.penalty_real,
            lambda2=self.penalty_fake,
            batch_size=self.batch_size,
            iterations=self.iterations,
            seed=self.seed,
            distance=self.distance,
        )

    def _run_training(self, cfg, dataset):
        result = train_gas(
            self.mixture, self._schedule(), cfg, dataset, n_steps=self.n_steps
        )
        self.discriminator_ = result.disc
        return result
