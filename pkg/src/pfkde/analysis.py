"""Quantitative checks on filter-based kernel density estimates.

* integrated squared error and Monte-Carlo MISE studies with log-log slopes,
* the exact frequency-domain MISE of an i.i.d. kernel estimate,
* moment identities of the empirical characteristic function,
* Sobolev integrals (2 pi)^{-d} int ||w||^{2 beta} |phi(w)|^2 dw,
* the constants c_t, L_t, C_t of the filtering MISE bound,
* the AMISE-optimal bandwidth.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from pfkde.errors import FilterError, NumericalError, QuadratureError
from pfkde.kde import BandwidthSchedule, build_estimate, eval_derivative_estimate, eval_estimate
from pfkde.kernels import Kernel
from pfkde.model import LinearGaussianModel, simulate_trajectory
from pfkde.oracle import GridDensity, kalman_density_derivative, kalman_run
from pfkde.pf_core import ParticleCloud, run_filter
from pfkde.quadrature import GridSpec, integrate, integrate_refined
from pfkde.rng import make_rng

# ---------------------------------------------------------------------------
# integrated squared error


def ise(estimate: Callable, reference: Callable, domain: GridSpec) -> float:
    """Trapezoid value of int (estimate - reference)^2 over the box ``domain``."""
    pts = domain.points()
    diff = np.asarray(estimate(pts), dtype=np.float64).reshape(-1) - np.asarray(
        reference(pts), dtype=np.float64
    ).reshape(-1)
    return float(domain.weights() @ diff**2)


def fit_loglog_slope(ns: Sequence[float], values: Sequence[float]) -> tuple[float, float, np.ndarray]:
    """Unweighted least squares of log(value) on log(n): (slope, intercept, residuals)."""
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    if x.size < 2:
        raise ValueError("a slope needs at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept), y - (slope * x + intercept)


@dataclass
class MiseReport:
    particle_counts: list
    mise_estimates: list
    std_errors: list
    replications: int
    fitted_slope: Optional[float]
    target_slope: float
    residuals: list = field(default_factory=list)
    bandwidths: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    ise_values: dict = field(default_factory=dict)  # n -> per-replication ISE, NaN if excluded

    def __post_init__(self):
        k = len(self.particle_counts)
        if not (len(self.mise_estimates) == len(self.std_errors) == k):
            raise ValueError("per-n lists must have the same length")
        if any(m < 0 for m in self.mise_estimates):
            raise ValueError("MISE estimates are non-negative")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ise_values"] = {str(n): [None if math.isnan(v) else v for v in vals] for n, vals in self.ise_values.items()}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "MiseReport":
        doc = dict(doc)
        doc["ise_values"] = {
            int(n): [math.nan if v is None else float(v) for v in vals] for n, vals in doc.get("ise_values", {}).items()
        }
        return cls(**doc)


def _auto_domain(mu: np.ndarray, sd: np.ndarray, h: float, width: float = 10.0, per_unit: float = 5.0) -> GridSpec:
    """Box mu +/- (width sd + width h) with spacing at most min(h, sd) / per_unit."""
    half = width * sd + width * h
    spacing = min(h, float(sd.min())) / per_unit
    m = int(np.ceil(2 * half.max() / spacing)) + 1
    return GridSpec(tuple(mu - half), tuple(mu + half), m)


def mise_monte_carlo(
    model,
    kernel: Kernel,
    schedule: BandwidthSchedule,
    particle_counts: Sequence[int],
    T: int,
    replications: int,
    base_seed: int,
    multi_index: Optional[tuple] = None,
    reference: Optional[Callable] = None,
    domain: Optional[GridSpec] = None,
    workers: int = 1,
    max_excluded_fraction: float = 0.1,
) -> MiseReport:
    """MISE of the time-T filter estimate (or of its derivative) against a reference.

    One observation sequence is drawn with seed ``(base_seed, 0)`` and held
    fixed; replication ``r`` at size ``n`` runs the filter with seed
    ``(base_seed, n, r)``.  The reference defaults to the Kalman density (or
    its ``multi_index`` derivative) at time T, which needs a
    :class:`LinearGaussianModel`.  Replications whose filter degenerates are
    dropped and counted; more than ``max_excluded_fraction`` of them at any n
    is an error.
    """
    if replications < 2:
        raise ValueError("need at least two replications for a standard error")
    counts = [int(n) for n in particle_counts]
    if not counts or min(counts) < 1:
        raise ValueError("particle counts must be positive")
    mi = tuple(multi_index) if multi_index is not None else (0,) * kernel.dim
    m = sum(mi)
    if m != schedule.deriv_order:
        raise ValueError(f"schedule is for derivative order {schedule.deriv_order}, multi-index has order {m}")

    traj = simulate_trajectory(model, T, (base_seed, 0))
    obs = traj.observations
    mu = sd = None
    if reference is None:
        if not isinstance(model, LinearGaussianModel):
            raise ValueError("a reference density is required for non-linear-Gaussian models")
        belief = kalman_run(model, obs)[-1]
        mu, sd = belief.mu, np.sqrt(np.diag(belief.sigma))

        def reference(pts, _b=belief):
            return kalman_density_derivative(_b, mi, pts)

    elif domain is None:
        raise ValueError("pass a domain together with a custom reference")

    def one(n: int, r: int, grid: GridSpec, h: float) -> float:
        try:
            run = run_filter(model, obs, n, (base_seed, n, r), keep_clouds=False)
        except FilterError:
            return math.nan
        est = build_estimate(run.final, kernel, h)
        if m == 0:
            fn = est
        else:
            def fn(pts):
                return eval_derivative_estimate(est, mi, pts)
        return ise(fn, reference, grid)

    means, ses, hs, excluded, all_ise = [], [], [], [], {}
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        for n in counts:
            h = schedule(n)
            grid = domain if domain is not None else _auto_domain(mu, sd, h)
            vals = np.array(list(pool.map(lambda r: one(n, r, grid, h), range(replications))))
            bad = int(np.isnan(vals).sum())
            if bad > max_excluded_fraction * replications:
                raise NumericalError(f"n={n}: {bad} of {replications} replications degenerated")
            ok = vals[~np.isnan(vals)]
            means.append(float(ok.mean()))
            ses.append(float(ok.std(ddof=1) / np.sqrt(ok.size)))
            hs.append(h)
            excluded.append(bad)
            all_ise[n] = vals.tolist()

    slope, resid = None, []
    if len(counts) >= 2:
        slope, _, res = fit_loglog_slope(counts, means)
        resid = res.tolist()
    return MiseReport(counts, means, ses, replications, slope, schedule.rate, resid, hs, excluded, all_ise)


def iid_ise_replications(
    sampler: Callable,
    density: Callable,
    kernel: Kernel,
    h: float,
    n: int,
    replications: int,
    seed: int,
    domain: GridSpec,
    positive_part: bool = False,
):
    """ISE of i.i.d.-sample kernel estimates; replication r uses seed (seed, r).

    ``sampler(n, rng)`` returns n draws.  With ``positive_part`` a second array
    holds the ISE of max(0, p_hat) on the same samples.
    """
    pts = domain.points()
    w = domain.weights()
    ref = np.asarray(density(pts), dtype=np.float64).reshape(-1)
    raw, pos = np.empty(replications), np.empty(replications)
    for r in range(replications):
        x = np.asarray(sampler(n, make_rng((seed, r))), dtype=np.float64).reshape(n, -1)
        est = build_estimate(ParticleCloud(x), kernel, h)
        vals = eval_estimate(est, pts)
        raw[r] = w @ (vals - ref) ** 2
        if positive_part:
            pos[r] = w @ (np.maximum(vals, 0.0) - ref) ** 2
    return (raw, pos) if positive_part else raw


# ---------------------------------------------------------------------------
# frequency-domain integrals


def _shell_points(d: int, width: float, k: int = 17) -> np.ndarray:
    """Samples of the outer shell width/2 <= ||w||_inf <= width."""
    if d == 1:
        s = np.linspace(0.5 * width, width, 16 * k)
        return np.concatenate([s, -s])[:, None]
    face = np.linspace(0.5 * width, width, k)
    full = np.linspace(-width, width, k)
    out = []
    for j in range(d):
        axes = [full] * d
        for sign in (1.0, -1.0):
            axes[j] = sign * face
            mesh = np.meshgrid(*axes, indexing="ij")
            out.append(np.stack([g.ravel() for g in mesh], axis=-1))
    return np.concatenate(out)


def frequency_integral(
    f: Callable[[np.ndarray], np.ndarray],
    d: int,
    tail_tol: float = 1e-12,
    tol: float = 1e-8,
    width: Optional[float] = None,
    max_width: float = 1e4,
    max_points: int = 20_000_000,
):
    """int_{R^d} f(w) dw on the box ||w||_inf <= W.

    W doubles from 1 until |f| < ``tail_tol`` on the outer shell (unless
    ``width`` is given), then the tensor trapezoid is refined until the
    relative change is below ``tol``.  Returns (value, W).
    """
    if width is None:
        width = 1.0
        while True:
            shell = np.max(np.abs(np.asarray(f(_shell_points(d, width)))))
            if shell < tail_tol:
                break
            width *= 2.0
            if width > max_width:
                raise QuadratureError(
                    f"integrand still {shell:.3g} near |w| = {width / 2:g}; the integral may diverge",
                    [],
                )
    m0 = 65 if d == 1 else 33
    value, _ = integrate_refined(f, GridSpec((-width,) * d, (width,) * d, m0), tol=tol, relative=True,
                                 max_points=max_points)
    return value, width


def fourier_mise_exact(
    kernel: Kernel,
    phi: Callable,
    h: float,
    n: int,
    d: Optional[int] = None,
    tail_tol: float = 1e-12,
    tol: float = 1e-8,
    max_width: float = 1e4,
) -> float:
    """Exact MISE of the i.i.d. kernel estimate with bandwidth h from n draws of phi.

    (2 pi)^{-d} [ int |1 - K_F(h w)|^2 |phi|^2 + n^{-1} int |K_F(h w)|^2
                  - n^{-1} int |phi|^2 |K_F(h w)|^2 ].

    Only valid for i.i.d. samples, not for resampled particle clouds.
    """
    d = kernel.dim if d is None else d
    if h <= 0 or n < 1:
        raise ValueError("need h > 0 and n >= 1")

    def integrand(w):
        kf = np.asarray(kernel.fourier(h * w))
        p2 = np.abs(np.asarray(phi(w))) ** 2
        k2 = np.abs(kf) ** 2
        return np.abs(1.0 - kf) ** 2 * p2 + (k2 - p2 * k2) / n

    # a kernel transform that fails to decay shows up in the tail check
    value, _ =frequency_integral(integrand, d, tail_tol, tol, max_width=max_width)
    return float(value) / (2.0 * np.pi) ** d


def sobolev_integral(
    phi,
    beta: int,
    d: int = 1,
    tail_tol: float = 1e-12,
    tol: float = 1e-8,
    width: Optional[float] = None,
    max_width: float = 1e4,
) -> float:
    """(2 pi)^{-d} int ||w||^{2 beta} |phi(w)|^2 dw.

    ``phi`` is a characteristic function taking ``(k, d)`` frequencies, or a
    :class:`GridDensity`, whose discrete transform is periodic; its frequency
    box is then capped below the Nyquist limit pi / spacing.
    """
    if isinstance(phi, GridDensity):
        grid = phi
        d = 1
        max_width = min(max_width, 0.5 * np.pi / grid.spacing)

        def fn(w):
            return grid.charfn(w[:, 0])
    else:
        fn = phi

    def integrand(w):
        r2 = np.sum(w * w, axis=1)
        return r2**beta * np.abs(np.asarray(fn(w))) ** 2

    value, _ = frequency_integral(integrand, d, tail_tol, tol, width=width, max_width=max_width)
    return float(value) / (2.0 * np.pi) ** d


# ---------------------------------------------------------------------------
# characteristic-function moment identities


@dataclass
class Lemma3Entry:
    omega: list
    n: int
    mean_phi_n: complex
    mean_abs2: float
    mean_err2: float
    target_phi: complex
    target_abs2: float
    target_err2: float
    se_phi_n: float
    se_abs2: float
    se_err2: float
    passed: bool


@dataclass
class Lemma3Report:
    entries: list
    replications: int
    n_se: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)


def _within(diff: float, se: float, n_se: float, floor: float = 1e-12) -> bool:
    return abs(diff) <= max(n_se * se, floor)


def verify_lemma3(
    sampler: Callable,
    phi: Callable,
    omega_grid,
    n: int,
    replications: int,
    seed,
    n_se: float = 4.0,
    chunk: int = 256,
) -> Lemma3Report:
    """Monte-Carlo check of three moments of phi_n(w) = n^{-1} sum_j exp(i <w, X_j>):

        E phi_n = phi,  E |phi_n|^2 = (1 - 1/n) |phi|^2 + 1/n,
        E |phi_n - phi|^2 = (1 - |phi|^2) / n.

    ``sampler(size, rng)`` must return i.i.d. draws, shape (size,) or (size, d).
    Each estimate passes when within ``n_se`` standard errors of its target.
    """
    rng = make_rng(seed)
    om = np.asarray(omega_grid, dtype=np.float64)
    om = om[:, None] if om.ndim == 1 else om
    target = np.asarray(phi(om), dtype=np.complex128).reshape(-1)
    sums = np.zeros((3, om.shape[0]), dtype=np.complex128)
    sq = np.zeros((4, om.shape[0]))
    done = 0
    while done < replications:
        b = min(chunk, replications - done)
        x = np.asarray(sampler(b * n, rng), dtype=np.float64).reshape(b, n, -1)
        phin = np.exp(1j * (x @ om.T)).mean(axis=1)  # (b, k)
        a2 = np.abs(phin) ** 2
        e2 = np.abs(phin - target) ** 2
        sums[0] += phin.sum(axis=0)
        sums[1] += a2.sum(axis=0)
        sums[2] += e2.sum(axis=0)
        sq[0] += (phin.real**2).sum(axis=0)
        sq[1] += (phin.imag**2).sum(axis=0)
        sq[2] += (a2**2).sum(axis=0)
        sq[3] += (e2**2).sum(axis=0)
        done += b
    R = replications
    mean = sums / R

    def se(sum_sq, mu):
        var = np.maximum(sum_sq / R - mu**2, 0.0) * R / (R - 1)
        return np.sqrt(var / R)

    se_phi = np.sqrt(se(sq[0], mean[0].real) ** 2 + se(sq[1], mean[0].imag) ** 2)
    se_a2 = se(sq[2], mean[1].real)
    se_e2 = se(sq[3], mean[2].real)
    t2 = np.abs(target) ** 2
    tgt_a2 = (1.0 - 1.0 / n) * t2 + 1.0 / n
    tgt_e2 = (1.0 - t2) / n
    entries = []
    for k in range(om.shape[0]):
        ok = (
            _within(abs(mean[0, k] - target[k]), se_phi[k], n_se)
            and _within(mean[1, k].real - tgt_a2[k], se_a2[k], n_se)
            and _within(mean[2, k].real - tgt_e2[k], se_e2[k], n_se)
        )
        entries.append(
            Lemma3Entry(
                om[k].tolist(), n, complex(mean[0, k]), float(mean[1, k].real), float(mean[2, k].real),
                complex(target[k]), float(tgt_a2[k]), float(tgt_e2[k]),
                float(se_phi[k]), float(se_a2[k]), float(se_e2[k]), bool(ok),
            )
        )
    return Lemma3Report(entries, replications, n_se)


# ---------------------------------------------------------------------------
# bound constants


def gaussian_Kb_constants(Q, beta: int = 1, tol: float = 1e-8) -> tuple[float, float]:
    """(lambda_min(Q), L_Kb) for the envelope K_b(w) = exp(-lambda_min ||w||^2 / 2).

    L_Kb^2 = (2 pi)^{-d} int ||w||^{2 beta} K_b(w)^2 dw is evaluated by quadrature.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
        raise ValueError("Q must be a symmetric matrix")
    lam = float(np.linalg.eigvalsh(Q).min())
    if lam <= 0:
        raise ValueError(f"Q must be positive definite (min eigenvalue {lam:.3g})")
    d = Q.shape[0]
    val = sobolev_integral(lambda w: np.exp(-0.5 * lam * np.sum(w * w, axis=1)), beta, d, tol=tol)
    return lam, math.sqrt(val)


def kb_sobolev_closed_form(lam: float, d: int) -> float:
    """(2 pi)^{-d} int ||w||^2 exp(-lam ||w||^2) dw = d pi^{-d/2} / (2^{d+1} lam^{(d+2)/2})."""
    return d * np.pi ** (-d / 2) / (2 ** (d + 1) * lam ** ((d + 2) / 2))


def kb_sobolev_alternative_form(lam: float, d: int) -> float:
    """pi^{-d/2} / (4^d lam^{(d+2)/2}); equals :func:`kb_sobolev_closed_form` only for d = 1."""
    return np.pi ** (-d / 2) / (4**d * lam ** ((d + 2) / 2))


def _per_step(values, T: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    arr = np.full(T, float(arr)) if arr.ndim == 0 else arr.reshape(-1)
    if arr.size != T:
        raise ValueError(f"{name} needs one entry per step ({T}), got {arr.size}")
    return arr


def _check_normalizers(normalizers) -> np.ndarray:
    z = np.asarray(normalizers, dtype=np.float64).reshape(-1)
    if np.any(z <= 0) or not np.all(np.isfinite(z)):
        raise NumericalError("normalising integrals must be finite and positive")
    return z


def ct_recursion(g_sup, normalizers) -> np.ndarray:
    """c_0 = 1, c_t = c_{t-1} (1 + 4 ||g^v_t||_inf / pi_t g_t); returns c_0..c_T."""
    z = _check_normalizers(normalizers)
    g = _per_step(g_sup, z.size, "g_sup")
    return np.concatenate([[1.0], np.cumprod(1.0 + 4.0 * g / z)])


def Lt_recursion(g_sup, L_Kb: float, normalizers) -> np.ndarray:
    """L_t = ||g^v_t||_inf L_Kb / pi_t g_t for t = 1..T."""
    z = _check_normalizers(normalizers)
    g = _per_step(g_sup, z.size, "g_sup")
    return g * L_Kb / z


def theorem_bound(A, L_t, alpha, beta, d, m, c_t, kernel_deriv_norm, n) -> tuple[float, float]:
    """C = A L_t alpha^beta + c_t alpha^{-(d/2 + m)} ||K^(m)||, bound = C^2 n^{-2 beta/(2 beta + d + 2 m)}."""
    C = A * L_t * alpha**beta + c_t * alpha ** (-(d / 2 + m)) * kernel_deriv_norm
    return float(C), float(C**2 * float(n) ** (-2.0 * beta / (2 * beta + d + 2 * m)))


@dataclass
class BoundReport:
    c_sequence: list  # c_0..c_T; recursion-based, diagnostic
    L_sequence: list  # L_1..L_T
    C_sequence: list  # C_1..C_T
    bound_values: dict  # n -> [C_t^2 n^rate for t = 1..T]
    inputs: dict

    def __post_init__(self):
        if np.any(np.diff(self.c_sequence) < 0):
            raise ValueError("c_t must be non-decreasing")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["bound_values"] = {str(k): v for k, v in self.bound_values.items()}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "BoundReport":
        doc = dict(doc)
        doc["bound_values"] = {int(k): v for k, v in doc["bound_values"].items()}
        return cls(**doc)


def bound_report(
    A: float,
    alpha: float,
    beta: int,
    d: int,
    m: int,
    kernel_deriv_norm: float,
    g_sup,
    L_Kb: float,
    normalizers,
    particle_counts: Sequence[int],
) -> BoundReport:
    z = _check_normalizers(normalizers)
    c = ct_recursion(g_sup, z)
    L = Lt_recursion(g_sup, L_Kb, z)
    Cs = [theorem_bound(A, L[t - 1], alpha, beta, d, m, c[t], kernel_deriv_norm, 1)[0] for t in range(1, z.size + 1)]
    rate = -2.0 * beta / (2 * beta + d + 2 * m)
    bounds = {int(n): [C**2 * float(n) ** rate for C in Cs] for n in particle_counts}
    g = _per_step(g_sup, z.size, "g_sup")
    inputs = {
        "A": A, "alpha": alpha, "beta": beta, "d": d, "m": m,
        "kernel_deriv_norm": kernel_deriv_norm, "g_sup": g.tolist(), "L_Kb": L_Kb,
        "normalizers": z.tolist(),
    }
    return BoundReport(c.tolist(), L.tolist(), Cs, bounds, inputs)


def amise_bandwidth(R_K: float, mu2_K: float, curvature: float, d: int, n: int) -> float:
    """h* = [d R(K) / (mu_2(K)^2 curvature n)]^{1/(d+4)}, curvature = int (laplacian f)^2."""
    if min(R_K, mu2_K, n) <= 0 or curvature < 0:
        raise ValueError("inputs must be positive")
    if math.isinf(curvature):
        return 0.0
    return float((d * R_K / (mu2_K**2 * curvature * n)) ** (1.0 / (d + 4)))
