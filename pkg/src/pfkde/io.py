"""CSV and JSON formats for trajectories, filter runs, densities and reports.

Floats are written with ``repr`` so files round-trip exactly and identical
inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from pfkde.errors import ConfigError
from pfkde.model import LinearGaussianModel, Trajectory
from pfkde.oracle import GridDensity, KalmanBelief
from pfkde.pf_core import FilterRun, ParticleCloud


def _fmt(v) -> str:
    return repr(float(v))


def write_csv_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_model(source) -> LinearGaussianModel:
    """Model from a JSON file path or an already parsed document."""
    doc = read_json(source) if isinstance(source, (str, Path)) else source
    try:
        return LinearGaussianModel.from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad model specification: {exc}") from None


def save_model(path, model: LinearGaussianModel) -> None:
    write_json(path, model.to_dict())


# trajectories: t, x_1..x_d, y_1..y_dy; y blank at t = 0


def write_trajectory_csv(path, traj: Trajectory) -> None:
    d = traj.states.shape[1]
    dy = traj.observations.shape[1]
    header = ["t"] + [f"x_{j + 1}" for j in range(d)] + [f"y_{j + 1}" for j in range(dy)]
    rows = []
    for t, x in enumerate(traj.states):
        ys = [""] * dy if t == 0 else [_fmt(v) for v in traj.observations[t - 1]]
        rows.append([t] + [_fmt(v) for v in x] + ys)
    write_csv_rows(path, header, rows)


def read_trajectory_csv(path) -> Trajectory:
    header, rows = _read_rows(path)
    xs = [i for i, h in enumerate(header) if h.startswith("x_")]
    ys = [i for i, h in enumerate(header) if h.startswith("y_")]
    states = np.array([[float(r[i]) for i in xs] for r in rows])
    obs = np.array([[float(r[i]) for i in ys] for r in rows[1:]]).reshape(len(rows) - 1, len(ys))
    return Trajectory(states, obs)


# filter runs: t, i, x_1..x_d, w_i, stage


def _cloud_rows(t, cloud: ParticleCloud, stage: str):
    w = cloud.normalized_weights()
    for i, (x, wi) in enumerate(zip(cloud.particles, w)):
        yield [t, i] + [_fmt(v) for v in x] + [_fmt(wi), stage]


def write_filter_run_csv(path, run: FilterRun) -> None:
    d = run.initial.dim
    header = ["t", "i"] + [f"x_{j + 1}" for j in range(d)] + ["w_i", "stage"]
    rows = []
    for step in run.steps:
        for stage in ("predicted", "weighted", "resampled"):
            cloud = getattr(step, stage)
            if cloud is not None:
                rows.extend(_cloud_rows(step.t, cloud, {"predicted": "pred"}.get(stage, stage)))
    write_csv_rows(path, header, rows)


def read_filter_run_csv(path) -> dict:
    """{(t, stage): ParticleCloud}."""
    header, rows = _read_rows(path)
    xs = [i for i, h in enumerate(header) if h.startswith("x_")]
    groups: dict = {}
    for r in rows:
        groups.setdefault((int(r[0]), r[-1]), []).append(r)
    out = {}
    for (t, stage), rs in groups.items():
        x = np.array([[float(r[i]) for i in xs] for r in rs])
        w = np.array([float(r[-2]) for r in rs])
        weights = None if stage != "weighted" else w / w.sum()
        out[(t, stage)] = ParticleCloud(x, t, weights)
    return out


def write_summary_csv(path, run: FilterRun) -> None:
    """Per step: resampled-cloud mean and covariance plus the mean unnormalised weight."""
    d = run.initial.dim
    cov_names = [f"cov_{a + 1}{b + 1}" for a in range(d) for b in range(a, d)]
    header = ["t"] + [f"mean_{j + 1}" for j in range(d)] + cov_names + ["mean_unnorm_weight"]
    rows = []
    for step in run.steps:
        cloud = step.resampled
        if cloud is None:
            continue
        mu, cov = cloud.mean(), cloud.covariance()
        rows.append(
            [step.t]
            + [_fmt(v) for v in mu]
            + [_fmt(cov[a, b]) for a in range(d) for b in range(a, d)]
            + [_fmt(step.mean_unnormalized_weight)]
        )
    write_csv_rows(path, header, rows)


# densities: x_1..x_d, p_hat[, deriv][, extra columns]


def write_density_csv(path, points, p_hat, deriv=None, extra: dict | None = None) -> None:
    pts = np.asarray(points, dtype=np.float64)
    pts = pts[:, None] if pts.ndim == 1 else pts
    header = [f"x_{j + 1}" for j in range(pts.shape[1])] + ["p_hat"]
    cols = [np.asarray(p_hat).reshape(-1)]
    if deriv is not None:
        header.append("deriv")
        cols.append(np.asarray(deriv).reshape(-1))
    for name, vals in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(vals).reshape(-1))
    rows = [[_fmt(v) for v in x] + [_fmt(c[k]) for c in cols] for k, x in enumerate(pts)]
    write_csv_rows(path, header, rows)


def read_density_csv(path) -> dict:
    header, rows = _read_rows(path)
    data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    return {h: data[:, k] for k, h in enumerate(header)}


def write_grid_density_csv(path, grid: GridDensity) -> None:
    write_csv_rows(path, ["x", "p"], [[_fmt(x), _fmt(p)] for x, p in zip(grid.nodes, grid.values)])


def read_grid_density_csv(path, time: int = 0) -> GridDensity:
    _, rows = _read_rows(path)
    x = np.array([float(r[0]) for r in rows])
    p = np.array([float(r[1]) for r in rows])
    return GridDensity(float(x[0]), float(x[-1]), p, time)


def write_belief_json(path, belief: KalmanBelief) -> None:
    write_json(path, belief.to_dict())


def read_belief_json(path) -> KalmanBelief:
    return KalmanBelief.from_dict(read_json(path))


def write_ise_csv(path, ise_values: dict) -> None:
    """Per-replication ISE values as ``n, rep, ise`` (blank ise for excluded runs)."""
    rows = []
    for n in sorted(ise_values):
        for r, v in enumerate(ise_values[n]):
            rows.append([n, r, "" if np.isnan(v) else _fmt(v)])
    write_csv_rows(path, ["n", "rep", "ise"], rows)


def read_ise_csv(path) -> dict:
    _, rows = _read_rows(path)
    out: dict = {}
    for n, _, v in rows:
        out.setdefault(int(n), []).append(float("nan") if v == "" else float(v))
    return out
