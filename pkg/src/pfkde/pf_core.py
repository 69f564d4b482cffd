"""Bootstrap particle filter with multinomial resampling.

One cycle at time t:

1. predict   -- move every particle through the transition sampler,
2. weight    -- w_i proportional to g_t(y_t | x_i), computed in the log domain,
3. resample  -- n draws with replacement, probabilities w_i.

The mean unnormalised weight of step 2 is kept because it estimates the
normalising integral of the Bayes update, which the bound constants need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from pfkde.errors import FilterError, NumericalError, WeightDegeneracyError
from pfkde.rng import Seed, make_rng


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    """``n`` particles in R^d at time ``time``; ``weights=None`` means uniform."""

    particles: np.ndarray
    time: int = 0
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.particles, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("particles must be an (n, d) array with n >= 1")
        if not np.all(np.isfinite(x)):
            raise ValueError("particle coordinates must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "particles", x)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if w.shape != (x.shape[0],):
                raise ValueError("one weight per particle required")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be non-negative and sum to 1")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def is_uniform(self) -> bool:
        return self.weights is None

    def normalized_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights

    def mean(self) -> np.ndarray:
        return self.normalized_weights() @ self.particles

    def covariance(self) -> np.ndarray:
        """Weighted population covariance (divisor 1, not 1 - sum w^2)."""
        w = self.normalized_weights()
        c = self.particles - self.mean()
        return (c * w[:, None]).T @ c


@dataclass(frozen=True, eq=False)
class FilterStep:
    """Clouds of one cycle; they are ``None`` when the run dropped them."""

    t: int
    mean_unnormalized_weight: float
    log_mean_unnormalized_weight: float
    predicted: Optional[ParticleCloud] = None
    weighted: Optional[ParticleCloud] = None
    resampled: Optional[ParticleCloud] = None


@dataclass(frozen=True, eq=False)
class FilterRun:
    initial: ParticleCloud
    steps: list = field(default_factory=list)
    final: Optional[ParticleCloud] = None

    @property
    def horizon(self) -> int:
        return len(self.normalizers())

    def normalizers(self) -> np.ndarray:
        return np.array([s.mean_unnormalized_weight for s in self.steps])

    def __len__(self):
        return len(self.steps)


def init_particles(model, n: int, rng: np.random.Generator) -> ParticleCloud:
    if n < 1:
        raise ValueError("n must be >= 1")
    return ParticleCloud(model.initial_sampler(n, rng), time=0)


def predict_step(model, cloud: ParticleCloud, t: int, rng: np.random.Generator) -> ParticleCloud:
    if not cloud.is_uniform:
        raise ValueError("prediction expects a uniformly weighted (resampled) cloud")
    if cloud.time != t - 1:
        raise ValueError(f"cloud is at time {cloud.time}, cannot predict to t={t}")
    x = np.asarray(model.transition_sampler(t, cloud.particles, rng), dtype=np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
    if bad.size:
        raise NumericalError(f"non-finite propagated particle at index {bad[0]}")
    return ParticleCloud(x, time=t)


def weight_step(model, cloud: ParticleCloud, y_t) -> tuple[ParticleCloud, float]:
    """Attach normalised likelihood weights; also return (1/n) sum_i g_t(y_t | x_i).

    The second value can underflow to 0.0 for wild observations even though
    the normalised weights are fine; ``log_weight_step`` exposes its log.
    """
    weighted, log_mean = log_weight_step(model, cloud, y_t)
    return weighted, float(np.exp(log_mean))


def log_weight_step(model, cloud: ParticleCloud, y_t) -> tuple[ParticleCloud, float]:
    if not cloud.is_uniform:
        raise ValueError("weighting expects a uniformly weighted cloud")
    logw = np.asarray(model.observation_logdensity(cloud.time, np.asarray(y_t, float), cloud.particles))
    logw = np.where(np.isnan(logw), -np.inf, logw)
    top = logw.max()
    if not np.isfinite(top):
        raise WeightDegeneracyError(
            "all particle likelihoods are zero; observation incompatible with the cloud"
        )
    w = np.exp(logw - top)
    total = w.sum()
    log_mean = float(top + np.log(total) - np.log(cloud.n))
    w /= total
    # exact renormalisation so the cloud invariant holds to the last bit
    w /= w.sum()
    return ParticleCloud(cloud.particles, cloud.time, w), log_mean


def resample_multinomial(cloud: ParticleCloud, rng: np.random.Generator) -> ParticleCloud:
    """Multinomial resampling by inverse-CDF lookup of n sorted uniforms."""
    w = cloud.normalized_weights()
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = np.sort(rng.random(cloud.n))
    idx = np.searchsorted(cdf, u, side="right")
    np.minimum(idx, cloud.n - 1, out=idx)
    return ParticleCloud(cloud.particles[idx], time=cloud.time)


def run_filter(model, observations: Sequence, n: int, seed: Seed, keep_clouds: bool = True) -> FilterRun:
    """Run the filter over y_1..y_T.

    With ``keep_clouds=False`` the per-step records keep only the normalisers;
    the clouds of the last step are always retained.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[:, None]
    if obs.shape[0] == 0:
        raise ValueError("at least one observation is required")
    rng = make_rng(seed)
    cloud = init_particles(model, n, rng)
    initial = cloud
    steps = []
    for t in range(1, obs.shape[0] + 1):
        try:
            pred = predict_step(model, cloud, t, rng)
            weighted, log_mean = log_weight_step(model, pred, obs[t - 1])
            cloud = resample_multinomial(weighted, rng)
        except NumericalError as exc:
            raise FilterError(str(exc), t) from exc
        if keep_clouds or t == obs.shape[0]:
            steps.append(FilterStep(t, float(np.exp(log_mean)), log_mean, pred, weighted, cloud))
        else:
            steps.append(FilterStep(t, float(np.exp(log_mean)), log_mean))
    return FilterRun(initial, steps, cloud)


def empirical_integral(cloud: ParticleCloud, f: Callable[[np.ndarray], np.ndarray]):
    """sum_i w_i f(x_i); ``f`` maps the ``(n, d)`` particle array to n values."""
    vals = np.asarray(f(cloud.particles))
    if vals.shape[0] != cloud.n:
        raise ValueError("f must return one value per particle")
    out = cloud.normalized_weights() @ vals
    return out.item() if np.ndim(out) == 0 else out


def empirical_charfn(cloud: ParticleCloud, omega):
    """phi_n(w) = sum_i w_i exp(i <w, x_i>) for a d-vector or a ``(k, d)`` stack."""
    omega = np.asarray(omega, dtype=np.float64)
    single = omega.ndim <= 1
    om = omega.reshape(-1, cloud.dim)
    phase = cloud.particles @ om.T  # (n, k)
    vals = cloud.normalized_weights() @ np.exp(1j * phase)
    return complex(vals[0]) if single else vals
