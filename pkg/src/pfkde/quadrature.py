"""Deterministic quadrature on tensor grids and balls.

Functions passed in here are vectorised: they receive an ``(N, d)`` array of
points and return ``N`` values (or ``(N, k)`` for several integrands at once).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from pfkde.errors import QuadratureError


@dataclass(frozen=True)
class GridSpec:
    """Tensor-product trapezoid grid on the box ``[lo, hi]`` with ``m`` nodes per axis."""

    lo: tuple
    hi: tuple
    m: int

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError(f"empty box lo={lo} hi={hi}")
        if self.m < 2:
            raise ValueError("need at least two nodes per axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, self.m) for a, b in zip(self.lo, self.hi)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def weights(self) -> np.ndarray:
        w = np.ones(1)
        for a, b in zip(self.lo, self.hi):
            w = np.multiply.outer(w, trapezoid_weights(a, b, self.m)).ravel()
        return w

    def refined(self) -> "GridSpec":
        """Nested refinement: halves the spacing, keeps every existing node."""
        return GridSpec(self.lo, self.hi, 2 * (self.m - 1) + 1)


def trapezoid_weights(lo: float, hi: float, m: int) -> np.ndarray:
    w = np.full(m, (hi - lo) / (m - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def integrate(f: Callable[[np.ndarray], np.ndarray], grid: GridSpec) -> np.ndarray | float:
    vals = np.asarray(f(grid.points()))
    w = grid.weights()
    out = np.tensordot(w, vals, axes=(0, 0))
    return out if np.ndim(out) else out.item()


def integrate_refined(
    f: Callable[[np.ndarray], np.ndarray],
    grid: GridSpec,
    tol: float = 1e-9,
    relative: bool = False,
    max_points: int = 20_000_000,
):
    """Trapezoid rule with nested doubling and one Richardson step.

    Stops when two successive extrapolated estimates differ by less than
    ``tol`` (scaled by the estimate's magnitude when ``relative``), or when two
    raw trapezoid values do; the latter catches spectrally convergent
    integrands, where the extrapolation only lags one level behind.  Works for
    vector-valued integrands; the criterion is applied to the worst entry.
    """
    trace = []
    prev_t = np.asarray(integrate(f, grid))
    prev_r = prev_t
    trace.append(prev_t)
    while True:
        nxt = grid.refined()
        if nxt.m ** nxt.dim > max_points:
            raise QuadratureError(
                f"trapezoid refinement exceeded {max_points} nodes without meeting tol={tol}",
                trace,
            )
        t = np.asarray(integrate(f, nxt))
        r = t + (t - prev_t) / 3.0
        trace.append(r)
        diff = np.max(np.abs(r - prev_r))
        scale = max(np.max(np.abs(r)), 1e-300) if relative else 1.0
        if diff <= tol * scale:
            return (r if np.ndim(r) else r.item()), nxt
        if np.max(np.abs(t - prev_t)) <= tol * scale:
            return (t if np.ndim(t) else t.item()), nxt
        grid, prev_t, prev_r = nxt, t, r


def ball_rule(dim: int, radius: float = 1.0, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Product Gauss rule on the closed ball of given radius, ``dim`` in {1, 2, 3}.

    Radial Gauss-Legendre nodes, trapezoid (periodic, spectrally exact) in the
    azimuth and Gauss-Legendre in the polar cosine.  Exact for polynomials of
    degree below ``order`` restricted to the ball, which is what compactly
    supported radial kernels need: their kink sits on the sphere, where the
    rule has no interior nodes.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    if dim == 1:
        return (radius * x)[:, None], radius * w
    r = 0.5 * radius * (x + 1.0)
    wr = 0.5 * radius * w
    n_phi = 2 * order
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    wphi = np.full(n_phi, 2.0 * np.pi / n_phi)
    if dim == 2:
        R, P = np.meshgrid(r, phi, indexing="ij")
        W = np.outer(wr * r, wphi)
        pts = np.stack([R * np.cos(P), R * np.sin(P)], axis=-1).reshape(-1, 2)
        return pts, W.ravel()
    if dim == 3:
        ct, wct = x, w
        R, C, P = np.meshgrid(r, ct, phi, indexing="ij")
        S = np.sqrt(1.0 - C**2)
        W = np.einsum("i,j,k->ijk", wr * r**2, wct, wphi)
        pts = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * C], axis=-1).reshape(-1, 3)
        return pts, W.ravel()
    raise ValueError(f"ball quadrature implemented for dim <= 3, got {dim}")


def integrate_ball(f, dim: int, radius: float = 1.0, order: int = 16, tol: float = 1e-10):
    """Integrate over the ball, doubling ``order`` until two rules agree within ``tol``."""
    trace = []
    pts, w = ball_rule(dim, radius, order)
    prev = np.tensordot(w, np.asarray(f(pts)), axes=(0, 0))
    trace.append(prev)
    for _ in range(4):
        order *= 2
        pts, w = ball_rule(dim, radius, order)
        cur = np.tensordot(w, np.asarray(f(pts)), axes=(0, 0))
        trace.append(cur)
        if np.max(np.abs(cur - prev)) <= tol:
            return cur if np.ndim(cur) else cur.item()
        prev = cur
    raise QuadratureError("ball quadrature did not settle", trace)
