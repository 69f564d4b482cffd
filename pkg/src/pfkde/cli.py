"""Command-line front end.

    pfkde <subcommand> --config path.json [--out dir] [--seed u64] [--threads k]

The config is a JSON object; see :class:`ExperimentConfig` for its keys.
``PFKDE_SEED`` in the environment overrides the config seed and ``--seed``
overrides both.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 4 a verification check failed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pfkde import io
from pfkde.analysis import (
    bound_report,
    gaussian_Kb_constants,
    mise_monte_carlo,
    verify_lemma3,
)
from pfkde.errors import ConfigError, NumericalError
from pfkde.kde import BandwidthSchedule, build_estimate, eval_derivative_estimate, eval_estimate
from pfkde.kernels import KERNELS, get_kernel, kernel_l2_norms, multi_indices, verify_order
from pfkde.model import LinearGaussianModel, Trajectory, benchmark_bivariate_model, simulate_trajectory
from pfkde.oracle import grid_filter_run, kalman_density, kalman_density_derivative, kalman_envelope, kalman_run
from pfkde.pf_core import run_filter
from pfkde.quadrature import GridSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

_KEYS = ("model", "horizon", "particle_counts", "replications", "kernel", "schedule", "seed", "output", "options")


@dataclass
class ExperimentConfig:
    """Keys: ``model`` (matrices F, H, Q, R, mu0, Sigma0), ``horizon``,
    ``particle_counts``, ``replications``, ``kernel``, ``schedule``
    ({alpha, beta, m}), ``seed``, ``output`` and free-form ``options``."""

    model: dict
    horizon: int = 10
    particle_counts: list = field(default_factory=lambda: [1000])
    replications: int = 100
    kernel: str = "gaussian"
    schedule: dict = field(default_factory=lambda: {"alpha": 1.0, "beta": 1, "m": 0})
    seed: int = 0
    output: str = "out"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.model, dict):
            raise ConfigError("model must be a JSON object")
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be >= 1")
        if not self.particle_counts or any(int(n) < 1 for n in self.particle_counts):
            raise ConfigError("particle_counts must be a non-empty list of positive integers")
        if int(self.replications) < 1:
            raise ConfigError("replications must be positive")
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel '{self.kernel}' (choose from {sorted(KERNELS)})")
        if not set(self.schedule) <= {"alpha", "beta", "m"}:
            raise ConfigError(f"schedule keys are alpha, beta, m; got {sorted(self.schedule)}")
        self.build_schedule(1)
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "model" not in doc:
            raise ConfigError("config needs a 'model'")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _KEYS}

    def build_model(self) -> LinearGaussianModel:
        return io.load_model(self.model)

    def build_schedule(self, dim: int) -> BandwidthSchedule:
        s = self.schedule
        try:
            return BandwidthSchedule(dim, float(s.get("alpha", 1.0)), int(s.get("beta", 1)), int(s.get("m", 0)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        doc = io.read_json(path)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    return ExperimentConfig.from_dict(doc)


def _observations(cfg: ExperimentConfig, model) -> Trajectory:
    """Observations from options.trajectory (CSV) or simulated with seed (seed, 0)."""
    path = cfg.options.get("trajectory")
    if path:
        traj = io.read_trajectory_csv(path)
        if traj.observations.shape[1] != model.dim_y:
            raise ConfigError(f"{path}: observation dimension does not match the model")
        return traj
    return simulate_trajectory(model, int(cfg.horizon), (cfg.seed, 0))


def _eval_grid(cfg, belief, h: float) -> GridSpec:
    m = int(cfg.options.get("grid_points", 201 if belief.mu.size == 1 else 61))
    sd = np.sqrt(np.diag(belief.sigma))
    half = float(cfg.options.get("grid_width", 5.0)) * sd + 3.0 * h
    return GridSpec(tuple(belief.mu - half), tuple(belief.mu + half), m)


# ---------------------------------------------------------------------------
# subcommands; each returns an exit code


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    traj = simulate_trajectory(cfg.build_model(), int(cfg.horizon), (cfg.seed, 0))
    io.write_trajectory_csv(out / "trajectory.csv", traj)
    return EXIT_OK


def cmd_filter(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    model = cfg.build_model()
    traj = _observations(cfg, model)
    n = int(cfg.particle_counts[0])
    run = run_filter(model, traj.observations, n, (cfg.seed, n, 0))
    io.write_trajectory_csv(out / "trajectory.csv", traj)
    io.write_filter_run_csv(out / "filter_run.csv", run)
    io.write_summary_csv(out / "summary.csv", run)
    beliefs = kalman_run(model, traj.observations)
    io.write_json(out / "kalman.json", [b.to_dict() for b in beliefs])
    return EXIT_OK


def cmd_kde(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    model = cfg.build_model()
    traj = _observations(cfg, model)
    kernel = get_kernel(cfg.kernel, model.dim_x)
    sched = cfg.build_schedule(model.dim_x)
    n = int(cfg.particle_counts[0])
    h = sched(n)
    run = run_filter(model, traj.observations, n, (cfg.seed, n, 0), keep_clouds=False)
    est = build_estimate(run.final, kernel, h)
    belief = kalman_run(model, traj.observations)[-1]
    grid = _eval_grid(cfg, belief, h)
    pts = grid.points()
    extra = {"kalman": kalman_density(belief, pts)}
    deriv = None
    if sched.deriv_order > 0:
        mi = tuple(cfg.options.get("multi_index", (sched.deriv_order,) + (0,) * (model.dim_x - 1)))
        if sum(mi) != sched.deriv_order:
            raise ConfigError(f"multi_index {mi} does not have order m={sched.deriv_order}")
        deriv = eval_derivative_estimate(est, mi, pts)
        extra["kalman_deriv"] = kalman_density_derivative(belief, mi, pts)
    io.write_density_csv(out / "density.csv", pts, eval_estimate(est, pts), deriv, extra)
    return EXIT_OK


def cmd_mise(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    model = cfg.build_model()
    kernel = get_kernel(cfg.kernel, model.dim_x)
    sched = cfg.build_schedule(model.dim_x)
    mi = None
    if sched.deriv_order > 0:
        mi = tuple(cfg.options.get("multi_index", (sched.deriv_order,) + (0,) * (model.dim_x - 1)))
    report = mise_monte_carlo(
        model, kernel, sched, cfg.particle_counts, int(cfg.horizon), int(cfg.replications), cfg.seed,
        multi_index=mi, workers=threads,
    )
    io.write_json(out / "mise_report.json", report.to_dict())
    io.write_ise_csv(out / "ise.csv", report.ise_values)
    return EXIT_OK


def cmd_bounds(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Bound constants with grid-oracle normalisers (1-D) or particle plug-in ones."""
    model = cfg.build_model()
    d = model.dim_x
    kernel = get_kernel(cfg.kernel, d)
    sched = cfg.build_schedule(d)
    traj = _observations(cfg, model)
    source = cfg.options.get("normalizers", "grid" if d == 1 else "plugin")
    if source == "grid":
        if d != 1:
            raise ConfigError("grid normalisers are available in one dimension only")
        lo, hi = kalman_envelope(model, traj.observations)
        z = grid_filter_run(model, traj.observations, lo, hi, int(cfg.options.get("grid_nodes", 2048))).normalizers
    elif source == "plugin":
        n = int(cfg.options.get("plugin_particles", max(cfg.particle_counts)))
        z = run_filter(model, traj.observations, n, (cfg.seed, n, 0), keep_clouds=False).normalizers()
    else:
        raise ConfigError(f"normalizers must be 'grid' or 'plugin', got {source!r}")
    m = sched.deriv_order
    mi = tuple(cfg.options.get("multi_index", (m,) + (0,) * (d - 1)))
    consts = kernel_l2_norms(kernel, [mi] if m > 0 else [], beta=sched.beta)
    knorm = consts.deriv_l2_norm[mi] if m > 0 else consts.l2_norm
    A = float(cfg.options.get("A", consts.A))
    try:
        _, L_Kb = gaussian_Kb_constants(model.Q, sched.beta)
    except ValueError as exc:
        raise NumericalError(str(exc)) from None
    report = bound_report(A, sched.alpha, sched.beta, d, m, knorm, model.noise_density_sup, L_Kb, z,
                          cfg.particle_counts)
    doc = report.to_dict()
    doc["inputs"]["normalizer_source"] = source
    io.write_json(out / "bound_report.json", doc)
    return EXIT_OK


def cmd_verify_kernel(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    d = int(cfg.options.get("dim", cfg.build_model().dim_x))
    kernel = get_kernel(cfg.kernel, d)
    sched = cfg.build_schedule(d)
    ell = int(cfg.options.get("order", kernel.claimed_order))
    holds = verify_order(kernel, ell)
    above = verify_order(kernel, ell + 1)
    mis = multi_indices(d, 1) if kernel.derivative is not None else []
    consts = kernel_l2_norms(kernel, mis, beta=sched.beta)
    doc = {
        "kernel": cfg.kernel,
        "dim": d,
        "constants": consts.to_dict(),
        "order": ell,
        "order_holds": holds.passed,
        "next_order_holds": above.passed,
        "max_moment": holds.max_moment,
    }
    io.write_json(out / "kernel_constants.json", doc)
    return EXIT_OK if holds.passed and not above.passed else EXIT_VERIFY


def cmd_lemma3(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Moment identities of the empirical characteristic function of N(0, 1) samples."""
    omegas = [float(w) for w in cfg.options.get("omegas", [0.5, 1.0, 2.0])]

    def sampler(size, rng):
        return rng.standard_normal(size)

    def phi(w):
        return np.exp(-0.5 * np.sum(w * w, axis=1))

    entries, ok = [], True
    for n in cfg.particle_counts:
        rep = verify_lemma3(sampler, phi, omegas, int(n), int(cfg.replications), (cfg.seed, int(n)))
        ok &= rep.passed
        for e in rep.entries:
            entries.append(
                {
                    "n": e.n,
                    "omega": e.omega,
                    "mean_phi_n": [e.mean_phi_n.real, e.mean_phi_n.imag],
                    "target_phi": [e.target_phi.real, e.target_phi.imag],
                    "mean_abs2": e.mean_abs2,
                    "target_abs2": e.target_abs2,
                    "mean_err2": e.mean_err2,
                    "target_err2": e.target_err2,
                    "se": [e.se_phi_n, e.se_abs2, e.se_err2],
                    "passed": e.passed,
                }
            )
    io.write_json(out / "lemma3.json", {"replications": int(cfg.replications), "passed": bool(ok), "entries": entries})
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_table_vi(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Particle vs Kalman moments at time T for each n, one trajectory per row,
    plus the final-time density estimate of the largest run on a grid."""
    model = cfg.build_model()
    T = int(cfg.horizon)
    kernel = get_kernel(cfg.kernel, model.dim_x)
    d = model.dim_x
    rows, last = [], None
    for k, n in enumerate(cfg.particle_counts):
        n = int(n)
        try:
            traj = simulate_trajectory(model, T, (cfg.seed, k, 0))
            run = run_filter(model, traj.observations, n, (cfg.seed, k, n), keep_clouds=False)
        except NumericalError as exc:
            raise NumericalError(f"table row n={n}: {exc}") from exc
        belief = kalman_run(model, traj.observations)[-1]
        rows.append(
            {
                "n": n,
                "mu_hat": run.final.mean().tolist(),
                "mu": belief.mu.tolist(),
                "sigma_hat": run.final.covariance().tolist(),
                "sigma": belief.sigma.tolist(),
            }
        )
        last = (run, belief, n)
    io.write_json(out / "table.json", rows)
    header = ["n"] + [f"mu_hat_{j + 1}" for j in range(d)] + [f"mu_{j + 1}" for j in range(d)]
    header += [f"sigma_hat_{a + 1}{b + 1}" for a in range(d) for b in range(d)]
    header += [f"sigma_{a + 1}{b + 1}" for a in range(d) for b in range(d)]
    csv_rows = []
    for r in rows:
        vals = r["mu_hat"] + r["mu"] + sum(r["sigma_hat"], []) + sum(r["sigma"], [])
        csv_rows.append([r["n"]] + [repr(float(v)) for v in vals])
    io.write_csv_rows(out / "table.csv", header, csv_rows)

    run, belief, n = last
    h = n ** (-1.0 / (2 + d))
    est = build_estimate(run.final, kernel, h)
    grid = _eval_grid(cfg, belief, h)
    pts = grid.points()
    io.write_density_csv(out / "density_grid.csv", pts, eval_estimate(est, pts), extra={"kalman": kalman_density(belief, pts)})
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "kde": cmd_kde,
    "mise": cmd_mise,
    "bounds": cmd_bounds,
    "verify-kernel": cmd_verify_kernel,
    "lemma3": cmd_lemma3,
    "table-vi": cmd_table_vi,
}


def default_table_config() -> dict:
    """Config for the bivariate benchmark table: n in {10, 100, 1000}, T = 100."""
    return {
        "model": benchmark_bivariate_model().to_dict(),
        "horizon": 100,
        "particle_counts": [10, 100, 1000],
        "replications": 1,
        "kernel": "gaussian",
        "seed": 0,
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfkde", description="Particle-filter kernel density experiments")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (default: config 'output')")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replications")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if os.environ.get("PFKDE_SEED"):
            try:
                cfg.seed = int(os.environ["PFKDE_SEED"])
            except ValueError:
                raise ConfigError("PFKDE_SEED must be an integer") from None
        if args.seed is not None:
            cfg.seed = args.seed
        if not 0 <= cfg.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out or cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"pfkde: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"pfkde: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
