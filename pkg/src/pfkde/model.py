"""State-space models of the form

    X_t ~ K_{t-1}(. | X_{t-1}),   Y_t = h_t(X_t) + V_t,   X_0 ~ p_0

and the linear-Gaussian instance

    X_t = F X_{t-1} + W_t,  W_t ~ N(0, Q)
    Y_t = H X_t + V_t,      V_t ~ N(0, R),   X_0 ~ N(mu0, Sigma0).

Conventions shared by every model object:

* samplers take an explicit :class:`numpy.random.Generator` and act on a whole
  particle array of shape ``(n, d)``;
* log densities broadcast over leading axes;
* the user is responsible for the Feller property of the transition kernels
  and for strict positivity of the observation density; neither is checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from pfkde.errors import NumericalError
from pfkde.rng import Seed, make_rng

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Generic signal/observation model assembled from callables.

    Signatures (``x`` arrays are ``(n, dim_x)``):

    ``initial_sampler(n, rng)``, ``initial_logdensity(x)``,
    ``transition_sampler(t, x_prev, rng)``,
    ``transition_logdensity(t, x, x_prev)`` (optional, needed by the grid filter),
    ``observation_logdensity(t, y, x)``,
    ``observation_sampler(t, x, rng)`` (optional, needed for simulation).
    """

    dim_x: int
    dim_y: int
    initial_sampler: Callable
    initial_logdensity: Callable
    transition_sampler: Callable
    observation_logdensity: Callable
    transition_logdensity: Optional[Callable] = None
    observation_sampler: Optional[Callable] = None
    noise_density_sup: Optional[float] = None


def _as_matrix(a, name) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if m.ndim != 2 or not np.all(np.isfinite(m)):
        raise ValueError(f"{name} must be a finite 2-D array")
    return m


def _psd_factor(S: np.ndarray, name: str):
    """Return (sampling factor L with L L^T = S, cholesky or None if singular)."""
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square, got {S.shape}")
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError(f"{name} must be symmetric")
    try:
        chol = np.linalg.cholesky(S)
        return chol, chol
    except np.linalg.LinAlgError:
        pass
    lam, V = np.linalg.eigh(S)
    if lam.min() < -1e-10 * max(1.0, abs(lam).max()):
        raise ValueError(f"{name} is not positive semi-definite (min eigenvalue {lam.min():.3g})")
    return V * np.sqrt(np.clip(lam, 0.0, None)), None


def _gauss_logpdf(resid: np.ndarray, chol: Optional[np.ndarray], name: str) -> np.ndarray:
    if chol is None:
        raise NumericalError(f"{name} is singular; the Gaussian density does not exist")
    d = chol.shape[0]
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    if d == 1:
        z2 = (resid[..., 0] / chol[0, 0]) ** 2
        return -0.5 * (z2 + logdet + LOG_2PI)
    flat = resid.reshape(-1, d)
    z = solve_triangular(chol, flat.T, lower=True).T
    out = -0.5 * (np.einsum("ij,ij->i", z, z) + logdet + d * LOG_2PI)
    return out.reshape(resid.shape[:-1])


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """Linear-Gaussian model; covariances may be singular (noise-free) for sampling.

    Densities that need an inverse raise :class:`NumericalError` when the
    covariance is singular.
    """

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray
    _factors: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        F = _as_matrix(self.F, "F")
        H = _as_matrix(self.H, "H")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        S0 = _as_matrix(self.Sigma0, "Sigma0")
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=np.float64)).ravel()
        d = F.shape[0]
        if F.shape != (d, d) or Q.shape != (d, d) or S0.shape != (d, d) or mu0.shape != (d,):
            raise ValueError(f"F, Q, Sigma0 must be {d}x{d} and mu0 length {d}")
        if H.shape[1] != d or R.shape != (H.shape[0], H.shape[0]):
            raise ValueError("H must be dy x d and R dy x dy")
        for name, arr in (("F", F), ("H", H), ("Q", Q), ("R", R), ("mu0", mu0), ("Sigma0", S0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name, S in (("Q", Q), ("R", R), ("Sigma0", S0)):
            self._factors[name] = _psd_factor(S, name)

    @property
    def dim_x(self) -> int:
        return self.F.shape[0]

    @property
    def dim_y(self) -> int:
        return self.H.shape[0]

    @property
    def noise_density_sup(self) -> float:
        """sup_u of the observation-noise density, (2 pi)^{-dy/2} |R|^{-1/2}."""
        chol = self._factors["R"][1]
        if chol is None:
            return np.inf
        return float(np.exp(-0.5 * self.dim_y * LOG_2PI - np.log(np.diag(chol)).sum()))

    # transition and observation laws do not depend on t
    time_homogeneous = True

    @property
    def transition_is_deterministic(self) -> bool:
        return not np.any(self.Q)

    def initial_sampler(self, n: int, rng: np.random.Generator) -> np.ndarray:
        L = self._factors["Sigma0"][0]
        return self.mu0 + rng.standard_normal((n, self.dim_x)) @ L.T

    def initial_logdensity(self, x) -> np.ndarray:
        return _gauss_logpdf(np.asarray(x, float) - self.mu0, self._factors["Sigma0"][1], "Sigma0")

    def transition_sampler(self, t: int, x_prev: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        L = self._factors["Q"][0]
        return x_prev @ self.F.T + rng.standard_normal(x_prev.shape) @ L.T

    def transition_logdensity(self, t: int, x, x_prev) -> np.ndarray:
        resid = np.asarray(x, float) - np.asarray(x_prev, float) @ self.F.T
        return _gauss_logpdf(resid, self._factors["Q"][1], "Q")

    def observation_logdensity(self, t: int, y, x) -> np.ndarray:
        resid = np.asarray(y, float) - np.asarray(x, float) @ self.H.T
        return _gauss_logpdf(resid, self._factors["R"][1], "R")

    def observation_sampler(self, t: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        L = self._factors["R"][0]
        return x @ self.H.T + rng.standard_normal((x.shape[0], self.dim_y)) @ L.T

    def to_dict(self) -> dict:
        return {
            "dim": self.dim_x,
            "F": self.F.tolist(),
            "H": self.H.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "mu0": self.mu0.tolist(),
            "Sigma0": self.Sigma0.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearGaussianModel":
        missing = {"F", "H", "Q", "R", "mu0", "Sigma0"} - set(doc)
        if missing:
            raise ValueError(f"model document lacks keys {sorted(missing)}")
        model = cls(doc["F"], doc["H"], doc["Q"], doc["R"], doc["mu0"], doc["Sigma0"])
        if "dim" in doc and int(doc["dim"]) != model.dim_x:
            raise ValueError(f"dim={doc['dim']} disagrees with matrices of size {model.dim_x}")
        return model


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (T+1, d), x_0..x_T
    observations: np.ndarray  # (T, dy), y_1..y_T
    seed: object = None

    def __post_init__(self):
        if len(self.observations) != len(self.states) - 1:
            raise ValueError("need exactly one observation per non-initial state")

    @property
    def horizon(self) -> int:
        return len(self.observations)


def simulate_trajectory(model, horizon: int, seed: Seed) -> Trajectory:
    """Ancestral sampling x_0 ~ p_0, x_t ~ K_{t-1}(.|x_{t-1}), y_t ~ g_t(.|x_t)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if model.observation_sampler is None:
        raise ValueError("model has no observation sampler; cannot simulate")
    rng = make_rng(seed)
    x = model.initial_sampler(1, rng)
    states, obs = [x[0]], []
    for t in range(1, horizon + 1):
        x = model.transition_sampler(t, x, rng)
        y = model.observation_sampler(t, x, rng)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NumericalError(f"non-finite sample at t={t}; check the model parameters")
        states.append(x[0])
        obs.append(y[0])
    return Trajectory(np.array(states), np.array(obs), seed)


def gaussian_transition_charfn(model: LinearGaussianModel, omega, x_prev) -> complex | np.ndarray:
    """Conditional characteristic function exp(i<w, F x_prev>) exp(-w'Qw/2).

    ``omega`` may be a single d-vector or a stack ``(k, d)``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    shift = model.F @ np.atleast_1d(np.asarray(x_prev, dtype=np.float64))
    quad = np.einsum("...i,ij,...j->...", omega, model.Q, omega)
    out = np.exp(1j * (omega @ shift) - 0.5 * quad)
    return complex(out) if out.ndim == 0 else out


def benchmark_bivariate_model() -> LinearGaussianModel:
    """F = I2, Q = 2 I2, H = 2 I2, R = I2, standard-normal initial density."""
    I = np.eye(2)
    return LinearGaussianModel(I, 2 * I, 2 * I, I, np.zeros(2), I)
