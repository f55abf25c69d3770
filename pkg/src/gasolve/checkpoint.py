"""Text checkpoints: one named array per line, 17 significant digits.

Layout:

    # gasolve-ckpt v1
    # activation=softplus-logistic
    config <key> = <value>        (echo of the training configuration)
    iteration <int>
    n_steps <int>
    theta <v,v,...>               (then xi, a_diag, a_off, c_recent, c_old)
    ema_theta <...>               (same six groups for the EMA shadow)
    adam_m / adam_v <...>         (flat, canonical order), adam_t <int>
    disc_weights, disc_adam_*     (present only for adversarial runs)

Loading validates the version, every array name, and every array length, and
reproduces each float bitwise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from gasolve.errors import (
    ArrayLengthError,
    CheckpointError,
    UnknownArrayError,
    VersionMismatchError,
)
from gasolve.gsolver import GsParams, param_count
from gasolve.training import AdamState, Discriminator

CKPT_VERSION = 1
_GROUPS = ("theta", "xi", "a_diag", "a_off", "c_recent", "c_old")
ACTIVATION_NOTE = "softplus-logistic"


@dataclass
class Checkpoint:
    config: dict
    iteration: int
    n_steps: int
    params: GsParams
    ema_params: GsParams
    adam: AdamState
    disc_weights: np.ndarray | None = None
    disc_adam: AdamState | None = None


def _fmt(arr) -> str:
    return ",".join(f"{v:.17g}" for v in np.asarray(arr, dtype=float).ravel())


def save_checkpoint(path, ckpt: Checkpoint):
    lines = [f"# gasolve-ckpt v{CKPT_VERSION}", f"# activation={ACTIVATION_NOTE}"]
    for key in sorted(ckpt.config):
        lines.append(f"config {key} = {ckpt.config[key]}")
    lines.append(f"iteration {ckpt.iteration}")
    lines.append(f"n_steps {ckpt.n_steps}")
    for name in _GROUPS:
        lines.append(f"{name} {_fmt(getattr(ckpt.params, name))}")
    for name in _GROUPS:
        lines.append(f"ema_{name} {_fmt(getattr(ckpt.ema_params, name))}")
    lines.append(f"adam_m {_fmt(ckpt.adam.m)}")
    lines.append(f"adam_v {_fmt(ckpt.adam.v)}")
    lines.append(f"adam_t {ckpt.adam.t}")
    if ckpt.disc_weights is not None:
        lines.append(f"disc_weights {_fmt(ckpt.disc_weights)}")
        lines.append(f"disc_adam_m {_fmt(ckpt.disc_adam.m)}")
        lines.append(f"disc_adam_v {_fmt(ckpt.disc_adam.v)}")
        lines.append(f"disc_adam_t {ckpt.disc_adam.t}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_array(payload: str) -> np.ndarray:
    payload = payload.strip()
    if not payload:
        return np.zeros(0)
    return np.asarray([float(v) for v in payload.split(",")], dtype=float)


_INT_FIELDS = ("iteration", "n_steps", "adam_t", "disc_adam_t")


def _expected_lengths(n_steps: int, d: int | None) -> dict:
    base = {
        "theta": n_steps,
        "xi": n_steps,
        "a_diag": n_steps,
        "a_off": n_steps * (n_steps - 1) // 2,
        "c_recent": 1 if n_steps == 1 else 3 * n_steps - 3,
        "c_old": (n_steps - 3) * (n_steps - 2) // 2 if n_steps >= 3 else 0,
    }
    out = dict(base)
    out.update({f"ema_{k}": v for k, v in base.items()})
    out["adam_m"] = out["adam_v"] = param_count(n_steps)
    if d is not None:
        n_disc = Discriminator.weight_count(d)
        out["disc_weights"] = out["disc_adam_m"] = out["disc_adam_v"] = n_disc
    return out


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        m = re.fullmatch(r"# gasolve-ckpt v(\d+)", first)
        if m is None:
            raise CheckpointError(f"not a gasolve checkpoint: header {first!r}")
        if int(m.group(1)) != CKPT_VERSION:
            raise VersionMismatchError(
                f"checkpoint version {m.group(1)} is unsupported (expected {CKPT_VERSION})"
            )
        config: dict = {}
        ints: dict = {}
        arrays: dict = {}
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if line.startswith("config "):
                key, _, value = line[len("config "):].partition("=")
                config[key.strip()] = value.strip()
                continue
            name, _, payload = line.partition(" ")
            if name in _INT_FIELDS:
                ints[name] = int(payload.strip())
            else:
                arrays[name] = _parse_array(payload)

    for field in ("iteration", "n_steps", "adam_t"):
        if field not in ints:
            raise CheckpointError(f"checkpoint missing field {field!r}")
    n_steps = ints["n_steps"]
    d = int(config["problem.d"]) if "problem.d" in config else None
    expected = _expected_lengths(n_steps, d)

    for name in arrays:
        if name not in expected:
            raise UnknownArrayError(f"unknown checkpoint array {name!r}")
    has_disc = "disc_weights" in arrays
    required = [k for k in expected if not k.startswith("disc")]
    if has_disc:
        if d is None:
            raise CheckpointError("discriminator arrays require 'config problem.d'")
        required += ["disc_weights", "disc_adam_m", "disc_adam_v"]
    for name in required:
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing array {name!r}")
        if arrays[name].size != expected[name]:
            raise ArrayLengthError(
                f"array '{name}' has {arrays[name].size} entries, expected {expected[name]}"
            )

    params = GsParams(*[arrays[k] for k in _GROUPS])
    ema = GsParams(*[arrays[f"ema_{k}"] for k in _GROUPS])
    adam = AdamState(m=arrays["adam_m"], v=arrays["adam_v"], t=ints["adam_t"])
    disc_w = arrays.get("disc_weights")
    disc_adam = None
    if has_disc:
        if "disc_adam_t" not in ints:
            raise CheckpointError("checkpoint missing field 'disc_adam_t'")
        disc_adam = AdamState(
            m=arrays["disc_adam_m"], v=arrays["disc_adam_v"], t=ints["disc_adam_t"]
        )
    return Checkpoint(
        config=config,
        iteration=ints["iteration"],
        n_steps=n_steps,
        params=params,
        ema_params=ema,
        adam=adam,
        disc_weights=disc_w,
        disc_adam=disc_adam,
    )
