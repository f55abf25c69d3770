"""Flat key=value configuration files.

Lines are `key = value`; `#` starts a comment line.  Unknown keys are
rejected by name.  Mixture components use indexed keys
(`mixture.0.weight`, `mixture.0.mean`, `mixture.0.var`); vector values are
comma-separated decimals.
"""

from __future__ import annotations

import re

import numpy as np

from gasolve.base_solvers import TeacherConfig
from gasolve.diffusion import MixtureModel, NoiseSchedule
from gasolve.errors import ConfigError
from gasolve.training import TrainConfig


def _parse_float(s):
    return float(s)

def _parse_int(s):
    return int(s)

def _parse_str(s):
    return s

def _parse_float_list(s):
    return [float(v) for v in s.split(",")]


_CHOICES = {
    "teacher.kind": ("dpmpp3m", "rk4-oracle"),
    "teacher.grid": ("logsnr", "polynomial"),
    "student.mode": ("gs", "gas"),
    "train.distance": ("l2", "l1"),
}

# key -> (parser, has_default); patterned mixture keys are handled separately
_SCHEMA = {
    "problem.d": _parse_int,
    "problem.T": _parse_float,
    "problem.delta": _parse_float,
    "teacher.kind": _parse_str,
    "teacher.nfe": _parse_int,
    "teacher.grid": _parse_str,
    "teacher.rho": _parse_float,
    "teacher.samples": _parse_int,
    "student.N": _parse_int,
    "student.mode": _parse_str,
    "train.lr": _parse_float,
    "train.disc_lr": _parse_float,
    "train.beta1": _parse_float,
    "train.beta2": _parse_float,
    "train.weight_decay": _parse_float,
    "train.ema_decay": _parse_float,
    "train.clip_norm": _parse_float,
    "train.w_adv": _parse_float,
    "train.lambda1": _parse_float,
    "train.lambda2": _parse_float,
    "train.batch_size": _parse_int,
    "train.iterations": _parse_int,
    "train.seed": _parse_int,
    "train.distance": _parse_str,
    "eval.samples": _parse_int,
    "sweep.w_adv": _parse_float_list,
    "out.dir": _parse_str,
}

_MIXTURE_KEY = re.compile(r"mixture\.(\d+)\.(weight|mean|var)")

_DEFAULTS = {
    "problem.T": 10.0,
    "problem.delta": 1e-3,
    "teacher.kind": "dpmpp3m",
    "teacher.nfe": 20,
    "teacher.grid": "logsnr",
    "teacher.rho": 1.0,
    "teacher.samples": 1400,
    "student.mode": "gs",
    "train.lr": 1e-3,
    "train.disc_lr": 1e-5,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.weight_decay": 0.0,
    "train.ema_decay": 0.999,
    "train.clip_norm": 1.0,
    "train.w_adv": 0.0,
    "train.lambda1": 0.1,
    "train.lambda2": 0.1,
    "train.batch_size": 24,
    "train.iterations": 2000,
    "train.seed": 0,
    "train.distance": "l2",
    "eval.samples": 4096,
}


class Config(dict):
    """Typed key-value map with spec defaults for optional keys."""

    def get_or_default(self, key):
        if key in self:
            return self[key]
        if key in _DEFAULTS:
            return _DEFAULTS[key]
        raise ConfigError(key, "required key is missing")

    def require(self, *keys):
        for key in keys:
            if key not in self and key not in _DEFAULTS:
                raise ConfigError(key, "required key is missing")


def parse_config(text: str) -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in cfg:
            raise ConfigError(key, "duplicate key")
        m = _MIXTURE_KEY.fullmatch(key)
        if m is not None:
            parser = _parse_float_list if m.group(2) == "mean" else _parse_float
        elif key in _SCHEMA:
            parser = _SCHEMA[key]
        else:
            raise ConfigError(key, "unknown key")
        try:
            parsed = parser(value)
        except ValueError:
            raise ConfigError(key, f"cannot parse value {value!r}") from None
        if key in _CHOICES and parsed not in _CHOICES[key]:
            raise ConfigError(key, f"must be one of {_CHOICES[key]}")
        cfg[key] = parsed
    return cfg


def load_config(path) -> Config:
    with open(path) as fh:
        return parse_config(fh.read())


def make_schedule(cfg: Config) -> NoiseSchedule:
    return NoiseSchedule(
        T=cfg.get_or_default("problem.T"), delta=cfg.get_or_default("problem.delta")
    )


def make_mixture(cfg: Config) -> MixtureModel:
    cfg.require("problem.d")
    d = cfg["problem.d"]
    indices = sorted(
        {int(m.group(1)) for k in cfg if (m := _MIXTURE_KEY.fullmatch(k))}
    )
    if not indices:
        raise ConfigError("mixture.0.weight", "no mixture components configured")
    if indices != list(range(len(indices))):
        raise ConfigError(f"mixture.{indices[-1]}.weight", "component indices must be contiguous from 0")
    weights, means, variances = [], [], []
    for k in indices:
        for field in ("weight", "mean", "var"):
            if f"mixture.{k}.{field}" not in cfg:
                raise ConfigError(f"mixture.{k}.{field}", "required key is missing")
        weights.append(cfg[f"mixture.{k}.weight"])
        mean = cfg[f"mixture.{k}.mean"]
        if len(mean) != d:
            raise ConfigError(
                f"mixture.{k}.mean", f"has {len(mean)} entries but problem.d = {d}"
            )
        means.append(mean)
        variances.append(cfg[f"mixture.{k}.var"])
    try:
        return MixtureModel(
            weights=np.asarray(weights), means=np.asarray(means), variances=np.asarray(variances)
        )
    except ValueError as exc:
        raise ConfigError("mixture", str(exc)) from None


def make_teacher(cfg: Config) -> TeacherConfig:
    grid = cfg.get_or_default("teacher.grid")
    return TeacherConfig(
        kind=cfg.get_or_default("teacher.kind"),
        nfe=cfg.get_or_default("teacher.nfe"),
        grid_kind=grid,
        rho=cfg.get_or_default("teacher.rho"),
    )


def make_train_config(cfg: Config, seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        lr=cfg.get_or_default("train.lr"),
        disc_lr=cfg.get_or_default("train.disc_lr"),
        beta1=cfg.get_or_default("train.beta1"),
        beta2=cfg.get_or_default("train.beta2"),
        weight_decay=cfg.get_or_default("train.weight_decay"),
        ema_decay=cfg.get_or_default("train.ema_decay"),
        clip_norm=cfg.get_or_default("train.clip_norm"),
        w_adv=cfg.get_or_default("train.w_adv"),
        lambda1=cfg.get_or_default("train.lambda1"),
        lambda2=cfg.get_or_default("train.lambda2"),
        batch_size=cfg.get_or_default("train.batch_size"),
        iterations=cfg.get_or_default("train.iterations"),
        seed=cfg.get_or_default("train.seed") if seed is None else int(seed),
        distance=cfg.get_or_default("train.distance"),
    )


def config_echo(cfg: Config) -> list[str]:
    """Stable text rendering of all configured keys, for checkpoint headers."""
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, list):
            rendered = ",".join(f"{v:.17g}" for v in value)
        elif isinstance(value, float):
            rendered = f"{value:.17g}"
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return lines
