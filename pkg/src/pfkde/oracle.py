"""Exact references for the filtering densities.

* Kalman recursions for linear-Gaussian models in any dimension.
* A 1-D grid filter: trapezoid quadrature of the prediction integral followed
  by the pointwise Bayes update, valid for any model with a transition
  density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pfkde.errors import NumericalError
from pfkde.model import LOG_2PI, LinearGaussianModel
from pfkde.quadrature import trapezoid_weights


@dataclass(frozen=True, eq=False)
class KalmanBelief:
    mu: np.ndarray
    sigma: np.ndarray
    time: int = 0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64)).ravel()
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if sigma.shape != (mu.size, mu.size):
            raise ValueError("sigma must be d x d for a length-d mean")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_model(cls, model: LinearGaussianModel) -> "KalmanBelief":
        return cls(model.mu0, model.Sigma0, 0)

    def to_dict(self) -> dict:
        return {"t": self.time, "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "KalmanBelief":
        return cls(doc["mu"], doc["sigma"], int(doc["t"]))


def kalman_predict(model: LinearGaussianModel, belief: KalmanBelief) -> KalmanBelief:
    F = model.F
    return KalmanBelief(F @ belief.mu, F @ belief.sigma @ F.T + model.Q, belief.time + 1)


def kalman_step(model: LinearGaussianModel, belief: KalmanBelief, y_t) -> tuple[KalmanBelief, float]:
    """One predict/update cycle; returns the new belief and log N(y; H mu_pred, S)."""
    pred = kalman_predict(model, belief)
    H = model.H
    y = np.atleast_1d(np.asarray(y_t, dtype=np.float64))
    S = H @ pred.sigma @ H.T + model.R
    try:
        cS = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError(f"innovation covariance is not invertible at t={pred.time}") from None
    innov = y - H @ pred.mu
    # gain K = P H^T S^{-1} via two triangular solves
    PHt = pred.sigma @ H.T
    gain = np.linalg.solve(cS.T, np.linalg.solve(cS, PHt.T)).T
    mu = pred.mu + gain @ innov
    sigma = (np.eye(model.dim_x) - gain @ H) @ pred.sigma
    sigma = 0.5 * (sigma + sigma.T)
    z = np.linalg.solve(cS, innov)
    loglik = -0.5 * (z @ z) - np.log(np.diag(cS)).sum() - 0.5 * y.size * LOG_2PI
    return KalmanBelief(mu, sigma, pred.time), float(loglik)


def kalman_run(model: LinearGaussianModel, observations: Sequence, initial: KalmanBelief | None = None):
    """Beliefs at t = 0..T (the initial one included)."""
    belief = initial if initial is not None else KalmanBelief.from_model(model)
    beliefs = [belief]
    obs = np.asarray(observations, dtype=np.float64)
    if obs.size == 0:
        return beliefs
    obs = obs.reshape(len(obs), -1)
    for y in obs:
        belief, _ = kalman_step(model, belief, y)
        beliefs.append(belief)
    return beliefs


def kalman_loglik_increments(model: LinearGaussianModel, observations, initial=None) -> np.ndarray:
    belief = initial if initial is not None else KalmanBelief.from_model(model)
    out = []
    for y in np.asarray(observations, dtype=np.float64).reshape(len(observations), -1):
        belief, ll = kalman_step(model, belief, y)
        out.append(ll)
    return np.array(out)


def _chol(belief: KalmanBelief):
    try:
        return np.linalg.cholesky(belief.sigma)
    except np.linalg.LinAlgError:
        raise NumericalError("belief covariance is singular; no density") from None


def kalman_density(belief: KalmanBelief, points) -> np.ndarray:
    """N(mu, Sigma) density at ``points`` of shape (N, d) (or (N,) when d = 1)."""
    L = _chol(belief)
    d = belief.mu.size
    pts = np.asarray(points, dtype=np.float64).reshape(-1, d)
    z = np.linalg.solve(L, (pts - belief.mu).T)
    logp = -0.5 * np.sum(z**2, axis=0) - np.log(np.diag(L)).sum() - 0.5 * d * LOG_2PI
    return np.exp(logp)


def kalman_density_derivative(belief: KalmanBelief, multi_index, points) -> np.ndarray:
    """Mixed partial derivative of the belief density.

    Any order in one dimension (Hermite polynomials); first order in general
    dimension, where d/dx_j N = -[Sigma^{-1}(x - mu)]_j N.
    """
    mi = tuple(int(i) for i in multi_index)
    d = belief.mu.size
    pts = np.asarray(points, dtype=np.float64).reshape(-1, d)
    dens = kalman_density(belief, pts)
    m = sum(mi)
    if m == 0:
        return dens
    if d == 1:
        s = np.sqrt(belief.sigma[0, 0])
        z = (pts[:, 0] - belief.mu[0]) / s
        coef = np.zeros(m + 1)
        coef[m] = 1.0
        return (-1) ** m * np.polynomial.hermite_e.hermeval(z, coef) * dens / s**m
    if m == 1:
        j = mi.index(1)
        prec = np.linalg.solve(belief.sigma, (pts - belief.mu).T)
        return -prec[j] * dens
    raise NotImplementedError("derivatives above first order are implemented for d = 1 only")


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Density values on m equispaced nodes of [lo, hi]; trapezoid mass one."""

    lo: float
    hi: float
    values: np.ndarray
    time: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("values must be a 1-D array with at least two nodes")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("grid density values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.m)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.lo, self.hi, self.m)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    def mass(self) -> float:
        return float(self.weights @ self.values)

    def mean(self) -> float:
        return float(self.weights @ (self.nodes * self.values))

    def variance(self) -> float:
        mu = self.mean()
        return float(self.weights @ ((self.nodes - mu) ** 2 * self.values))

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation, zero outside [lo, hi]."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return np.interp(x, self.nodes, self.values, left=0.0, right=0.0)

    def charfn(self, omega) -> np.ndarray:
        """Trapezoid characteristic function sum_k w_k p_k exp(i omega x_k)."""
        om = np.asarray(omega, dtype=np.float64).reshape(-1)
        wp = self.weights * self.values
        return np.exp(1j * np.outer(om, self.nodes)) @ wp


def grid_from_density(density, lo: float, hi: float, m: int = 2048, time: int = 0) -> GridDensity:
    """Tabulate ``density(nodes)`` and renormalise to trapezoid mass one."""
    nodes = np.linspace(lo, hi, m)
    vals = np.asarray(density(nodes[:, None]), dtype=np.float64).reshape(-1)
    mass = trapezoid_weights(lo, hi, m) @ vals
    if not mass > 0:
        raise NumericalError("density has no mass on the grid")
    return GridDensity(lo, hi, vals / mass, time)


def initial_grid(model, lo: float, hi: float, m: int = 2048) -> GridDensity:
    return grid_from_density(lambda x: np.exp(model.initial_logdensity(x)), lo, hi, m)


def transition_matrix(model, grid: GridDensity, t: int) -> np.ndarray:
    """K(x_j | x_k) on the grid nodes; ``transition_logdensity`` must broadcast."""
    x = grid.nodes
    return np.exp(model.transition_logdensity(t, x[:, None, None], x[None, :, None]))


def grid_predict(model, grid: GridDensity, t: int, kmat: np.ndarray | None = None) -> GridDensity:
    """p_pred(x_j) = sum_k w_k K(x_j | x_k) p(x_k), trapezoid in the previous state.

    ``kmat`` is an optional precomputed :func:`transition_matrix`.
    """
    if getattr(model, "transition_is_deterministic", False):
        # noise-free linear map x -> F x: change of variables on the grid
        f = float(np.asarray(model.F).reshape(-1)[0])
        vals = grid(grid.nodes / f) / abs(f)
        return GridDensity(grid.lo, grid.hi, vals, t)
    if kmat is None:
        if model.transition_logdensity is None:
            raise ValueError("the grid filter needs a transition density")
        kmat = transition_matrix(model, grid, t)
    vals = kmat @ (grid.weights * grid.values)
    return GridDensity(grid.lo, grid.hi, vals, t)


def grid_filter_step(model, grid: GridDensity, t: int, y_t, kmat=None) -> tuple[GridDensity, float]:
    """Prediction integral plus Bayes update; returns (posterior, normaliser).

    The normaliser is the trapezoid value of int g_t(y_t | x) p_pred(x) dx.
    """
    if getattr(model, "dim_x", 1) != 1:
        raise ValueError("the grid filter is one-dimensional")
    pred = grid_predict(model, grid, t, kmat)
    g = np.exp(model.observation_logdensity(t, np.atleast_1d(np.asarray(y_t, float)), pred.nodes[:, None]))
    unnorm = g * pred.values
    normalizer = float(pred.weights @ unnorm)
    if not normalizer >= 1e-300:
        raise NumericalError(f"t={t}: observation incompatible with the grid support (normaliser {normalizer:.3g})")
    post = unnorm / normalizer
    post /= pred.weights @ post
    return GridDensity(grid.lo, grid.hi, post, t), normalizer


@dataclass
class GridRun:
    predicted: list
    posteriors: list  # t = 0..T, index 0 is the initial density
    normalizers: np.ndarray  # t = 1..T


def grid_filter_run(model, observations, lo: float, hi: float, m: int = 2048) -> GridRun:
    grid = initial_grid(model, lo, hi, m)
    posts, preds, norms = [grid], [], []
    obs = np.asarray(observations, dtype=np.float64).reshape(len(observations), -1)
    cached = None
    if getattr(model, "time_homogeneous", False) and not getattr(model, "transition_is_deterministic", False):
        cached = transition_matrix(model, grid, 1)
    for t, y in enumerate(obs, start=1):
        pred = grid_predict(model, grid, t, cached)
        preds.append(pred)
        grid, z = grid_filter_step(model, grid, t, y, cached)
        posts.append(grid)
        norms.append(z)
    return GridRun(preds, posts, np.array(norms))


def kalman_envelope(model: LinearGaussianModel, observations, width: float = 10.0) -> tuple[float, float]:
    """[min, max] of mu -/+ width * sd over filtered and predicted beliefs (1-D)."""
    beliefs = kalman_run(model, observations)
    lo, hi = np.inf, -np.inf
    for b in beliefs + [kalman_predict(model, b) for b in beliefs[:-1]]:
        sd = np.sqrt(b.sigma[0, 0])
        lo = min(lo, b.mu[0] - width * sd)
        hi = max(hi, b.mu[0] + width * sd)
    return float(lo), float(hi)
