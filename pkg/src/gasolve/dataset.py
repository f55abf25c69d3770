"""Paired (x_T, teacher endpoint) datasets and their text file format.

File layout: a header line `# gasolve-dataset v1 d=<d> n=<rows> seed=<s>`, a
comment line recording the teacher solver and grid, then one CSV row per
pair: xT_1..xT_d, x0_1..x0_d at 17 significant digits (lossless for
float64).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from gasolve.base_solvers import TeacherConfig, teacher_rollout
from gasolve.diffusion import MixtureModel, NoiseSchedule

DATASET_HEADER = "# gasolve-dataset v1"


@dataclass
class PairedDataset:
    """Prior draws and the teacher endpoints they map to."""

    x_T: np.ndarray
    teacher: np.ndarray
    seed: int

    def __post_init__(self):
        self.x_T = np.atleast_2d(np.asarray(self.x_T, dtype=float))
        self.teacher = np.atleast_2d(np.asarray(self.teacher, dtype=float))
        if self.x_T.shape != self.teacher.shape:
            raise ValueError("x_T and teacher arrays must have matching shapes")

    @property
    def n_rows(self) -> int:
        return self.x_T.shape[0]

    @property
    def d(self) -> int:
        return self.x_T.shape[1]


def generate_dataset(
    model: MixtureModel,
    schedule: NoiseSchedule,
    teacher_cfg: TeacherConfig,
    n_rows: int,
    seed: int,
) -> PairedDataset:
    """Draw x_T ~ N(0, sigma_T^2 I) and pair with teacher endpoints.

    The prior draw comes from the teacher-prior stream of `seed`, so
    regenerating with the same arguments reproduces the file byte for byte.
    """
    from gasolve.training import STREAM_TEACHER_PRIOR, stream

    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    rng = stream(seed, STREAM_TEACHER_PRIOR)
    sigma_T = float(schedule.sigma(schedule.T))
    x_T = sigma_T * rng.standard_normal((n_rows, model.d))
    outputs = teacher_rollout(model, schedule, teacher_cfg, x_T)
    return PairedDataset(x_T=x_T, teacher=np.asarray(outputs), seed=seed)


def save_dataset(path, ds: PairedDataset, teacher_cfg: TeacherConfig | None = None):
    lines = [f"{DATASET_HEADER} d={ds.d} n={ds.n_rows} seed={ds.seed}"]
    if teacher_cfg is not None:
        grid = teacher_cfg.grid_kind
        if grid == "polynomial":
            grid += f"(rho={teacher_cfg.rho:g})"
        lines.append(f"# solver={teacher_cfg.kind} nfe={teacher_cfg.nfe} grid={grid}")
    for xt, x0 in zip(ds.x_T, ds.teacher):
        row = np.concatenate([xt, x0])
        lines.append(",".join(f"{v:.17g}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> PairedDataset:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        m = re.fullmatch(
            r"# gasolve-dataset v1 d=(\d+) n=(\d+) seed=(\d+)", header
        )
        if m is None:
            raise ValueError(f"not a gasolve dataset file: header {header!r}")
        d, n, seed = int(m.group(1)), int(m.group(2)), int(m.group(3))
        rows = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            values = [float(v) for v in line.split(",")]
            if len(values) != 2 * d:
                raise ValueError(
                    f"dataset row has {len(values)} columns, expected {2 * d}"
                )
            rows.append(values)
    if len(rows) != n:
        raise ValueError(f"dataset has {len(rows)} rows, header promised {n}")
    arr = np.asarray(rows, dtype=float)
    return PairedDataset(x_T=arr[:, :d], teacher=arr[:, d:], seed=seed)
