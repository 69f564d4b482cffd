"""Smoothing kernels, their Fourier transforms and the constants the MISE
bounds are built from.

Fourier convention: ``K_F(w) = int exp(i <w, u>) K(u) du`` so ``K_F(0) = 1``
for any kernel integrating to one.

A kernel has *order* ``ell`` when its Fourier transform is real, equals one
at the origin and has vanishing partial derivatives of orders ``1..ell``
there; equivalently the mixed moments of total degree ``1..ell`` vanish.
Under that definition the Gaussian and Epanechnikov kernels have order 1.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import hermite_e
from scipy import special

from pfkde.quadrature import GridSpec, integrate_ball, integrate_refined


@dataclass(frozen=True, eq=False)
class Kernel:
    """A symmetric kernel on R^dim.

    ``evaluate(u)`` and ``fourier(w)`` act on arrays of shape ``(..., dim)``.
    ``derivative(multi_index, u)`` returns the mixed partial derivative of
    ``evaluate``; it raises ``ValueError`` for orders the kernel does not have.
    ``support_radius`` is set for kernels vanishing outside a ball, ``scale``
    is a standard-deviation-like width used to size quadrature windows.
    """

    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    fourier: Callable[[np.ndarray], np.ndarray]
    claimed_order: int
    derivative: Optional[Callable] = None
    name: str = "custom"
    support_radius: Optional[float] = None
    scale: float = 1.0

    def __call__(self, u):
        return self.evaluate(u)

    def derivative_evaluate(self, multi_index, u) -> np.ndarray:
        multi_index = tuple(int(i) for i in multi_index)
        if len(multi_index) != self.dim or any(i < 0 for i in multi_index):
            raise ValueError(f"multi-index {multi_index} does not fit dimension {self.dim}")
        if sum(multi_index) == 0:
            return self.evaluate(u)
        if self.derivative is None:
            raise ValueError(f"kernel '{self.name}' has no derivatives")
        return self.derivative(multi_index, u)

    def integrate(self, g: Callable[[np.ndarray], np.ndarray], tol: float = 1e-10):
        """Integrate ``g(u)`` (which normally involves this kernel) over the kernel's support."""
        if self.support_radius is not None and self.dim <= 3:
            return integrate_ball(g, self.dim, self.support_radius, tol=tol)
        half = 10.0 * self.scale
        grid = GridSpec((-half,) * self.dim, (half,) * self.dim, 33 if self.dim < 3 else 17)
        value, _ = integrate_refined(g, grid, tol=tol)
        return value


def _sq_norm(u):
    return np.sum(np.asarray(u, dtype=np.float64) ** 2, axis=-1)


def _hermite_derivative_1d(k: int, u: np.ndarray) -> np.ndarray:
    """k-th derivative of the standard normal density: (-1)^k He_k(u) phi(u)."""
    coef = np.zeros(k + 1)
    coef[k] = 1.0
    return (-1) ** k * hermite_e.hermeval(u, coef) * np.exp(-0.5 * u**2) / math.sqrt(2 * math.pi)


def gaussian_kernel(d: int) -> Kernel:
    """Standard normal kernel (2 pi)^{-d/2} exp(-|u|^2 / 2), order 1."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    norm = (2.0 * np.pi) ** (-0.5 * d)

    def evaluate(u):
        return norm * np.exp(-0.5 * _sq_norm(u))

    def fourier(w):
        return np.exp(-0.5 * _sq_norm(w))

    def derivative(mi, u):
        u = np.asarray(u, dtype=np.float64)
        out = np.ones(u.shape[:-1])
        for j, k in enumerate(mi):
            out = out * _hermite_derivative_1d(k, u[..., j])
        return out

    return Kernel(d, evaluate, fourier, 1, derivative, name="gaussian")


def gaussian_fourth_order_kernel(d: int) -> Kernel:
    """Product of 1-D kernels (3 - u^2)/2 phi(u); takes negative values.

    Moments of degree 1..3 vanish, so its order is 3 in the sense used here
    (the classical naming calls it fourth order).  Handy for exercising the
    positive-part estimator.
    """

    def k1(u):
        return 0.5 * (3.0 - u**2) * np.exp(-0.5 * u**2) / math.sqrt(2 * math.pi)

    def evaluate(u):
        u = np.asarray(u, dtype=np.float64)
        return np.prod(k1(u), axis=-1)

    def fourier(w):
        w = np.asarray(w, dtype=np.float64)
        return np.prod((1.0 + 0.5 * w**2) * np.exp(-0.5 * w**2), axis=-1)

    def derivative(mi, u):
        # (3 - u^2) phi / 2 = phi - phi'' / 2
        u = np.asarray(u, dtype=np.float64)
        out = np.ones(u.shape[:-1])
        for j, k in enumerate(mi):
            uj = u[..., j]
            out = out * (_hermite_derivative_1d(k, uj) - 0.5 * _hermite_derivative_1d(k + 2, uj))
        return out

    return Kernel(d, evaluate, fourier, 3, derivative, name="gaussian4", scale=1.2)


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _radial_fourier(profile: Callable, d: int, radius: float = 1.0) -> Callable:
    """Fourier transform of a radial function with support in the ball.

    F(w) = (2 pi)^{d/2} rho^{1 - d/2} int_0^R k(r) J_{d/2-1}(rho r) r^{d/2} dr,
    rho = |w|, evaluated by Gauss-Legendre in r.
    """
    nu = d / 2.0 - 1.0

    def fourier(w):
        w = np.asarray(w, dtype=np.float64)
        rho = np.sqrt(_sq_norm(w))
        flat = rho.ravel()
        out = np.empty_like(flat)
        order = 64 + int(math.ceil(flat.max(initial=0.0) * radius))
        x, wts = np.polynomial.legendre.leggauss(order)
        r = 0.5 * radius * (x + 1.0)
        wr = 0.5 * radius * wts * profile(r) * r ** (d / 2.0)
        tiny = flat < 1e-10
        out[tiny] = 1.0
        p = flat[~tiny]
        vals = np.empty_like(p)
        step = max(1, 4_000_000 // order)
        for lo in range(0, p.size, step):
            blk = p[lo : lo + step]
            vals[lo : lo + step] = (2.0 * np.pi) ** (d / 2.0) * blk ** (-nu) * (special.jv(nu, np.outer(blk, r)) @ wr)
        out[~tiny] = vals
        return out.reshape(rho.shape)

    return fourier


def epanechnikov_kernel(d: int) -> Kernel:
    """(d + 2) / (2 vol_d) * (1 - |u|^2)_+ with vol_d the unit-ball volume."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    c = 0.5 * (d + 2) / unit_ball_volume(d)

    def evaluate(u):
        return c * np.clip(1.0 - _sq_norm(u), 0.0, None)

    def derivative(mi, u):
        if sum(mi) > 1:
            raise ValueError("the Epanechnikov kernel is only once (weakly) differentiable")
        j = mi.index(1)
        u = np.asarray(u, dtype=np.float64)
        return np.where(_sq_norm(u) < 1.0, -2.0 * c * u[..., j], 0.0)

    fourier = _radial_fourier(lambda r: c * (1.0 - r**2), d)
    return Kernel(d, evaluate, fourier, 1, derivative, name="epanechnikov", support_radius=1.0)


KERNELS = {
    "gaussian": gaussian_kernel,
    "epanechnikov": epanechnikov_kernel,
    "gaussian4": gaussian_fourth_order_kernel,
}


def get_kernel(name: str, d: int) -> Kernel:
    try:
        return KERNELS[name](d)
    except KeyError:
        raise ValueError(f"unknown kernel '{name}', choose from {sorted(KERNELS)}") from None


def multi_indices(d: int, degree: int) -> list[tuple]:
    """All multi-indices of total degree ``degree``, lexicographic."""
    return [mi for mi in itertools.product(range(degree + 1), repeat=d) if sum(mi) == degree][::-1]


@dataclass
class OrderReport:
    ell: int
    mass: float
    moments: dict
    tol: float

    @property
    def max_moment(self) -> float:
        return max((abs(v) for v in self.moments.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return abs(self.mass - 1.0) <= self.tol and self.max_moment <= self.tol


def verify_order(kernel: Kernel, ell: int, tol: float = 1e-8) -> OrderReport:
    """Mass and all mixed moments of total degree 1..ell by quadrature."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    idx = [mi for m in range(1, ell + 1) for mi in multi_indices(kernel.dim, m)]
    powers = np.array(idx, dtype=float)

    def integrand(u):
        k = kernel.evaluate(u)
        mono = np.prod(u[:, None, :] ** powers[None, :, :], axis=-1)
        return np.column_stack([k, mono * k[:, None]])

    vals = np.asarray(kernel.integrate(integrand, tol=min(tol, 1e-10)))
    return OrderReport(ell, float(vals[0]), {mi: float(v) for mi, v in zip(idx, vals[1:])}, tol)


def _fd_weights(deriv: int, half_width: int) -> np.ndarray:
    """Central finite-difference weights on the integer stencil -hw..hw."""
    offsets = np.arange(-half_width, half_width + 1, dtype=float)
    n = offsets.size
    A = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(A, rhs)


def fourier_derivatives_at_origin(kernel: Kernel, ell: int, step: float = 0.05) -> dict:
    """Mixed partial derivatives of K_F at 0 up to total order ``ell``, by finite differences."""
    hw = 4
    offsets = np.arange(-hw, hw + 1) * step
    out = {}
    for m in range(1, ell + 1):
        for mi in multi_indices(kernel.dim, m):
            grids = np.meshgrid(*([offsets] * kernel.dim), indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=-1)
            vals = kernel.fourier(pts).reshape((offsets.size,) * kernel.dim)
            for k in mi:
                # contracting axis 0 each time walks the axes in order
                vals = np.tensordot(_fd_weights(k, hw) / step**k, vals, axes=(0, 0))
            out[mi] = float(np.real(vals))
    return out


def fourier_order_holds(kernel: Kernel, ell: int, tol: float = 1e-5) -> bool:
    """Fourier-side order test: K_F(0) = 1 and vanishing derivatives up to ``ell``."""
    if abs(kernel.fourier(np.zeros(kernel.dim)) - 1.0) > tol:
        return False
    derivs = fourier_derivatives_at_origin(kernel, ell)
    return all(abs(v) <= tol for v in derivs.values())


def a_ratio(kernel: Kernel, omegas, beta: int) -> np.ndarray:
    """|1 - K_F(w)| / |w|^beta at each frequency (0 where K_F(w) = 1)."""
    omegas = np.atleast_2d(np.asarray(omegas, dtype=np.float64))
    num = np.abs(1.0 - kernel.fourier(omegas))
    den = np.sqrt(_sq_norm(omegas)) ** beta
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(num == 0.0, 0.0, num / den)


@dataclass(frozen=True)
class AGrid:
    """Log-spaced radii times a direction set."""

    r_min: float = 1e-4
    r_max: float = 10.0
    n_radii: int = 2000
    n_directions: int = 64

    def directions(self, d: int) -> np.ndarray:
        if d == 1:
            return np.array([[1.0], [-1.0]])
        if d == 2:
            a = 2 * np.pi * np.arange(self.n_directions) / self.n_directions
            return np.column_stack([np.cos(a), np.sin(a)])
        # fixed pseudo-random directions; deterministic across runs
        rng = np.random.default_rng(0)
        v = rng.standard_normal((4 * self.n_directions, d))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def points(self, d: int) -> np.ndarray:
        radii = np.geomspace(self.r_min, self.r_max, self.n_radii)
        return (radii[:, None, None] * self.directions(d)[None, :, :]).reshape(-1, d)


@dataclass
class AConstantReport:
    grid_sup: float
    argmax: np.ndarray
    tail_bound: float
    proof_bound: float

    @property
    def value(self) -> float:
        return max(self.grid_sup, self.tail_bound)


def a_constant_report(kernel: Kernel, beta: int, grid: AGrid = AGrid()) -> AConstantReport:
    """Grid supremum of the ratio, a tail bound beyond the grid, and max(M1, 1 + M2).

    ``tail_bound`` = (1 + int|K|) / r_max^beta caps the ratio outside the grid;
    ``proof_bound`` is the generic max of the sup on the unit ball and
    1 + int|K|, which is loose for smooth kernels.
    """
    if grid.r_min > 1e-2:
        raise ValueError("the A-constant grid must reach into a neighbourhood of the origin (r_min <= 1e-2)")
    pts = grid.points(kernel.dim)
    ratio = a_ratio(kernel, pts, beta)
    k = int(np.argmax(ratio))
    l1 = float(kernel.integrate(lambda u: np.abs(kernel.evaluate(u)), tol=1e-9))
    inner = np.sqrt(_sq_norm(pts)) <= 1.0
    m1 = float(ratio[inner].max())
    return AConstantReport(
        grid_sup=float(ratio[k]),
        argmax=pts[k],
        tail_bound=(1.0 + l1) / grid.r_max**beta,
        proof_bound=max(m1, 1.0 + l1),
    )


def estimate_A_constant(kernel: Kernel, beta: int, grid: AGrid = AGrid()) -> float:
    """Upper estimate of sup_w |1 - K_F(w)| / |w|^beta."""
    return a_constant_report(kernel, beta, grid).value


@dataclass
class KernelConstants:
    A: float
    l2_norm: float
    R_K: float
    mu2_K: float
    deriv_l2_norm: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "A": self.A,
            "l2_norm": self.l2_norm,
            "R_K": self.R_K,
            "mu2_K": self.mu2_K,
            "deriv_norms": {format_multi_index(mi): v for mi, v in self.deriv_l2_norm.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelConstants":
        derivs = {parse_multi_index(k): float(v) for k, v in doc.get("deriv_norms", {}).items()}
        return cls(doc["A"], doc["l2_norm"], doc["R_K"], doc["mu2_K"], derivs)


def format_multi_index(mi) -> str:
    return "(" + ",".join(str(int(i)) for i in mi) + ")"


def parse_multi_index(text: str) -> tuple:
    body = text.strip().lstrip("(").rstrip(")")
    return tuple(int(p) for p in body.split(",") if p.strip())


def kernel_l2_norms(kernel: Kernel, multi_indices_=(), beta: Optional[int] = None) -> KernelConstants:
    """||K||, ||K^(m)|| for each requested multi-index, R(K), mu_2(K) and A."""
    mis = [tuple(mi) for mi in multi_indices_]
    for mi in mis:
        # fail early on unavailable derivatives
        kernel.derivative_evaluate(mi, np.zeros((1, kernel.dim)))

    def integrand(u):
        k = kernel.evaluate(u)
        cols = [k**2, u[:, 0] ** 2 * k]
        cols += [kernel.derivative_evaluate(mi, u) ** 2 for mi in mis]
        return np.column_stack(cols)

    vals = np.asarray(kernel.integrate(integrand, tol=1e-11))
    A = estimate_A_constant(kernel, beta or kernel.claimed_order)
    return KernelConstants(
        A=A,
        l2_norm=float(np.sqrt(vals[0])),
        R_K=float(vals[0]),
        mu2_K=float(vals[1]),
        deriv_l2_norm={mi: float(np.sqrt(v)) for mi, v in zip(mis, vals[2:])},
    )
