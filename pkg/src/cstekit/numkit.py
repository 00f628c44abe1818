"""Shared numerical primitives.

B-spline bases (Cox-de Boor), smoothing kernels, a damped Newton maximizer
with ridge fallback, the SCAD penalty family, and counter-based random
streams keyed by (master_seed, stream_id) so that resampling replicates are
reproducible independently of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "KnotVector",
    "Kernel",
    "ScadPenalty",
    "L1Penalty",
    "RngStream",
    "NewtonResult",
    "bspline_basis",
    "bspline_design",
    "kernel_weight",
    "newton_maximize",
    "scad_derivative",
]


# ---------------------------------------------------------------------------
# B-splines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot vector on [lo, hi]: boundary knots repeated degree+1 times.

    The basis it generates has ``degree + 1 + len(interior)`` functions.
    """

    boundary: tuple[float, float]
    interior: tuple[float, ...] = ()
    degree: int = 3

    def __post_init__(self):
        lo, hi = self.boundary
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"boundary must satisfy lo < hi, got ({lo}, {hi})")
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        ik = np.asarray(self.interior, dtype=float)
        if ik.size:
            if np.any(np.diff(ik) < 0):
                raise ValueError("interior knots must be non-decreasing")
            if ik[0] <= lo or ik[-1] >= hi:
                raise ValueError("interior knots must lie strictly inside (lo, hi)")

    @property
    def size(self) -> int:
        """Number of basis functions."""
        return self.degree + 1 + len(self.interior)

    def full(self) -> np.ndarray:
        """Full non-decreasing knot sequence with clamped boundaries."""
        lo, hi = self.boundary
        return np.concatenate(
            [
                np.full(self.degree + 1, lo),
                np.asarray(self.interior, dtype=float),
                np.full(self.degree + 1, hi),
            ]
        )


def _basis_all_levels(u: np.ndarray, knots: KnotVector) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate all basis functions and their first derivatives at points u.

    Dense vectorized Cox-de Boor recursion; returns (B, D) with shape
    (len(u), q). Points are assumed already clipped to [lo, hi].
    """
    t = knots.full()
    p = knots.degree
    q = knots.size
    lo, hi = knots.boundary
    n = u.shape[0]

    # Order-0: indicator of [t_j, t_{j+1}); the right boundary belongs to the
    # last non-empty span so that B(hi) sums to one.
    nslots = q + p  # number of order-0 slots
    N = np.zeros((n, nslots))
    left = t[:nslots]
    right = t[1 : nslots + 1]
    inside = (u[:, None] >= left[None, :]) & (u[:, None] < right[None, :])
    at_hi = u >= hi
    N[inside] = 1.0
    if np.any(at_hi):
        # last span with positive width is [t_{q-1}, t_q)
        N[at_hi, :] = 0.0
        N[at_hi, q - 1] = 1.0

    Nprev = N
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(1, p + 1):
            m = nslots - k
            d1 = t[k : k + m] - t[:m]
            d2 = t[k + 1 : k + 1 + m] - t[1 : 1 + m]
            a = np.where(d1 > 0, (u[:, None] - t[None, :m]) / d1, 0.0)
            b = np.where(d2 > 0, (t[None, k + 1 : k + 1 + m] - u[:, None]) / d2, 0.0)
            Ncur = a * Nprev[:, :m] + b * Nprev[:, 1 : 1 + m]
            if k == p:
                # derivative from the order p-1 values
                da = np.where(d1 > 0, p / d1, 0.0)
                db = np.where(d2 > 0, p / d2, 0.0)
                D = da * Nprev[:, :m] - db * Nprev[:, 1 : 1 + m]
                return Ncur[:, :q], D[:, :q]
            Nprev = Ncur
    # degree 0: piecewise constant, derivative 0
    return Nprev[:, :q], np.zeros((n, q))


def bspline_basis(u: float, knots: KnotVector) -> np.ndarray:
    """All B-spline basis values at a single point.

    Raises ValueError when u falls outside the boundary interval.
    """
    lo, hi = knots.boundary
    if not (lo <= u <= hi):
        raise ValueError(f"point {u} outside the spline domain [{lo}, {hi}]")
    B, _ = _basis_all_levels(np.asarray([float(u)]), knots)
    return B[0]


def bspline_design(
    u: np.ndarray, knots: KnotVector, clamp: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix of basis values and first derivatives at points u.

    With ``clamp=True`` points outside [lo, hi] are evaluated at the nearest
    boundary with zero derivative (constant extrapolation); otherwise outside
    points raise ValueError.
    """
    u = np.asarray(u, dtype=float)
    lo, hi = knots.boundary
    outside = (u < lo) | (u > hi)
    if np.any(outside):
        if not clamp:
            bad = u[outside][0]
            raise ValueError(f"point {bad} outside the spline domain [{lo}, {hi}]")
        u = np.clip(u, lo, hi)
    B, D = _basis_all_levels(u, knots)
    if clamp and np.any(outside):
        D[outside, :] = 0.0
    return B, D


def quantile_knots(values: np.ndarray, n_interior: int, degree: int = 3) -> KnotVector:
    """Clamped knot vector with interior knots at equally spaced quantiles.

    The boundary is the observed range, padded by a sliver so every
    observation is strictly interior to the clamped ends.
    """
    values = np.asarray(values, dtype=float)
    lo = float(values.min())
    hi = float(values.max())
    if not hi > lo:
        raise ValueError("cannot place knots: values are constant")
    pad = 1e-9 * (hi - lo)
    if n_interior > 0:
        qs = np.arange(1, n_interior + 1) / (n_interior + 1)
        interior = tuple(float(v) for v in np.quantile(values, qs))
    else:
        interior = ()
    return KnotVector(boundary=(lo - pad, hi + pad), interior=interior, degree=degree)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


class Kernel(Enum):
    EPANECHNIKOV = "epanechnikov"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


_SQRT_2PI = float(np.sqrt(2.0 * np.pi))


def _kernel_values(x: np.ndarray, kernel: Kernel) -> np.ndarray:
    if kernel is Kernel.EPANECHNIKOV:
        return np.where(np.abs(x) < 1.0, 0.75 * (1.0 - x * x), 0.0)
    if kernel is Kernel.GAUSSIAN:
        return np.exp(-0.5 * x * x) / _SQRT_2PI
    if kernel is Kernel.UNIFORM:
        return np.where(np.abs(x) <= 1.0, 0.5, 0.0)
    raise ValueError(f"unknown kernel {kernel!r}")


def kernel_weight(u, h: float, kernel: Kernel = Kernel.EPANECHNIKOV):
    """Scaled kernel weight K(u/h)/h; accepts scalars or arrays."""
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    x = np.asarray(u, dtype=float) / h
    w = _kernel_values(x, kernel) / h
    if np.isscalar(u) or w.ndim == 0:
        return float(w)
    return w


# ---------------------------------------------------------------------------
# Damped Newton maximization
# ---------------------------------------------------------------------------


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    grad_norm: float


def newton_maximize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    init,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> NewtonResult:
    """Maximize a smooth objective by damped Newton steps.

    ``fun(x)`` must return (value, gradient, hessian). Steps are halved (up
    to 30 times) whenever the candidate does not increase the objective; if
    halving fails, the Hessian is ridged toward steepest ascent (inflating
    tenfold up to 8 times) before giving up and reporting non-convergence.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    f, g, H = fun(x)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the initial point")
    dim = x.shape[0]
    eye = np.eye(dim)
    gnorm = float(np.linalg.norm(g))
    converged = False
    iterations = 0

    while iterations < max_iter:
        if gnorm <= tol:
            converged = True
            break
        iterations += 1
        A = -H
        ridge = 0.0
        accepted = False
        for _ in range(9):  # initial attempt plus 8 ridge inflations
            try:
                step = np.linalg.solve(A + ridge * eye, g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)) and float(g @ step) > 0:
                t = 1.0
                for _ in range(31):  # full step plus 30 halvings
                    xc = x + t * step
                    fc, gc, Hc = fun(xc)
                    if np.isfinite(fc) and fc > f:
                        x, f = xc, float(fc)
                        g = np.atleast_1d(np.asarray(gc, dtype=float))
                        H = np.atleast_2d(np.asarray(Hc, dtype=float))
                        accepted = True
                        break
                    t *= 0.5
            if accepted:
                break
            base = 1e-6 * (1.0 + float(np.max(np.abs(np.diag(A)))))
            ridge = base if ridge == 0.0 else ridge * 10.0
        gnorm = float(np.linalg.norm(g))
        if not accepted:
            break  # no improving step found; report as-is
        if gnorm <= tol:
            converged = True
            break

    return NewtonResult(x=x, value=float(f), converged=converged, iterations=iterations, grad_norm=gnorm)


# ---------------------------------------------------------------------------
# Penalties
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScadPenalty:
    """SCAD penalty; derivative is flat at lam near zero and decays to 0 by a*lam."""

    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.a <= 2:
            raise ValueError(f"a must exceed 2, got {self.a}")

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        lam, a = self.lam, self.a
        out = np.where(
            theta <= lam,
            lam,
            np.maximum(a * lam - theta, 0.0) / (a - 1.0),
        )
        if lam == 0.0:
            out = np.zeros_like(theta)
        return out if out.ndim else float(out)

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        lam, a = self.lam, self.a
        if lam == 0.0:
            out = np.zeros_like(theta)
            return out if out.ndim else float(out)
        mid = (2.0 * a * lam * theta - theta**2 - lam**2) / (2.0 * (a - 1.0))
        out = np.where(
            theta <= lam,
            lam * theta,
            np.where(theta <= a * lam, mid, 0.5 * (a + 1.0) * lam**2),
        )
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class L1Penalty:
    """Plain lasso penalty, exposed for comparison with SCAD."""

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full_like(theta, self.lam)
        return out if out.ndim else float(out)

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = self.lam * theta
        return out if out.ndim else float(out)


def scad_derivative(theta: float, penalty: ScadPenalty) -> float:
    """SCAD derivative at a non-negative magnitude."""
    if theta < 0:
        raise ValueError(f"theta must be non-negative, got {theta}")
    return float(penalty.derivative(theta))


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (master_seed, stream_id).

    ``generator()`` always starts from the stream origin, so draws depend
    only on the key, never on what other streams have consumed.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.master_seed % (1 << 64), self.stream_id % (1 << 64)],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id)
