"""Varying-coefficient proportional hazards estimation.

Arm-specific log hazard ratio curves are estimated on a biomarker grid by
maximizing a kernel-localized Cox partial likelihood: at each target point
the coefficient curves and the shared nuisance trend are replaced by their
first-order Taylor expansions, turning the problem into a finite-dimensional
concave maximization. Ties use the Breslow convention (tied event times
share one risk set). Simultaneous bands for a contrast of arms come from
normal-multiplier perturbations of the per-subject score residuals with one
linearization step per replicate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .curve import CsteCurve
from .data import SurvivalDataset
from .numkit import Kernel, RngStream, _kernel_values, kernel_weight, newton_maximize

__all__ = [
    "InsufficientDataError",
    "SurvivalFitError",
    "LocalFit",
    "SurvivalCsteFit",
    "fit_local",
    "fit_curve",
    "scb_survival",
    "default_bandwidth",
]


class SurvivalFitError(RuntimeError):
    """Numerical failure while fitting the hazards model."""


class InsufficientDataError(SurvivalFitError):
    """Too little usable data near a target biomarker value."""

    def __init__(self, message: str, x0: float):
        super().__init__(message)
        self.x0 = x0


def default_bandwidth(values: np.ndarray, n_events: int | None = None, n_arms: int = 1) -> float:
    """Normal-reference rule with an events-per-parameter floor.

    The local partial likelihood estimates 2K+1 parameters; the window must
    expect roughly ten events per parameter or the fit is driven by noise,
    so at small samples the density rule is overridden by an events floor.
    """
    values = np.asarray(values, dtype=float)
    h = 1.06 * values.std(ddof=1) * values.shape[0] ** (-0.2)
    if n_events is not None and n_events > 0:
        dim = 2 * n_arms + 1
        h_floor = 5.0 * dim * float(np.ptp(values)) / n_events
        h = max(h, h_floor)
    return float(min(h, np.ptp(values)))


@dataclass
class LocalFit:
    x0: float
    delta_hat: np.ndarray
    gamma_hat: np.ndarray
    d_hat: float
    information: np.ndarray
    effective_n: float
    converged: bool
    identified: np.ndarray
    bandwidth: float


@dataclass
class SurvivalCsteFit:
    grid: np.ndarray
    local_fits: list[LocalFit]
    bandwidth: float
    kernel: Kernel
    contrast: np.ndarray
    curve: np.ndarray
    dropped: list[tuple[float, str]] = field(default_factory=list)

    @property
    def n_arms(self) -> int:
        return self.contrast.shape[0]


def _interior_mass(x0: float, h: float, kernel: Kernel, lo: float, hi: float) -> float:
    """Fraction of the kernel mass at x0 that falls inside [lo, hi]."""
    grid = np.linspace(x0 - h, x0 + h, 201) if kernel is not Kernel.GAUSSIAN else np.linspace(
        x0 - 6 * h, x0 + 6 * h, 601
    )
    vals = kernel_weight(grid - x0, h, kernel)
    total = np.trapezoid(vals, grid)
    inside = (grid >= lo) & (grid <= hi)
    if not np.any(inside):
        return 1e-3
    part = np.trapezoid(vals[inside], grid[inside])
    return max(float(part / total), 1e-3)


class _RiskSets:
    """Breslow risk-set aggregator over descending unique times."""

    def __init__(self, time: np.ndarray):
        order = np.argsort(-time, kind="stable")
        self.order = order
        self.time_sorted = time[order]
        # group boundary: last sorted position sharing each row's time
        n = time.shape[0]
        self.group_end = np.empty(n, dtype=int)
        j = 0
        while j < n:
            k = j
            while k + 1 < n and self.time_sorted[k + 1] == self.time_sorted[j]:
                k += 1
            self.group_end[j : k + 1] = k
            j = k + 1

    def prefix(self, values: np.ndarray) -> np.ndarray:
        """Per sorted position: sum of `values` over the risk set of its time."""
        c = np.cumsum(values[self.order], axis=0)
        return c[self.group_end]


def _partial_loglik_parts(theta, psi, w, delta, risk: _RiskSets):
    """Value, gradient, Hessian of the kernel-weighted log partial likelihood."""
    eta = np.minimum(psi @ theta, 300.0)  # damped Newton probes wild steps
    we = w * np.exp(eta)
    s0 = risk.prefix(we)
    s1 = risk.prefix(we[:, None] * psi)
    # back to original subject order
    inv = np.empty_like(risk.order)
    inv[risk.order] = np.arange(risk.order.shape[0])
    s0_i = s0[inv]
    s1_i = s1[inv]
    events = delta == 1
    wm = w[events]
    if np.any(s0_i[events] <= 0):
        return -np.inf, np.zeros(theta.shape), np.zeros((theta.shape[0],) * 2)
    ll = float(np.sum(wm * (eta[events] - np.log(s0_i[events]))))
    mean = s1_i[events] / s0_i[events][:, None]
    grad = (wm[:, None] * (psi[events] - mean)).sum(axis=0)
    dim = psi.shape[1]
    s2 = risk.prefix(we[:, None, None] * (psi[:, :, None] * psi[:, None, :]))
    s2_i = s2[inv]
    hess = np.zeros((dim, dim))
    cov = s2_i[events] / s0_i[events][:, None, None] - mean[:, :, None] * mean[:, None, :]
    hess = -(wm[:, None, None] * cov).sum(axis=0)
    return ll, grad, hess


def fit_local(
    data: SurvivalDataset,
    x0: float,
    h: float,
    kernel: Kernel = Kernel.EPANECHNIKOV,
    ridge_events: float = 2.0,
) -> LocalFit:
    """Maximize the local partial likelihood at one biomarker value.

    Estimates the per-arm log hazard ratios, their slopes, and the slope of
    the shared nuisance trend from subjects kernel-weighted around ``x0``.
    Arms without any weighted event are flagged non-identified and their
    components reported as NaN. A light ridge toward zero (worth
    ``ridge_events`` kernel-scale events) keeps windows with one-sided event
    patterns from drifting to infinite log hazard ratios.
    """
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    x = np.asarray(data.x, dtype=float)
    w_all = kernel_weight(x - x0, h, kernel)
    active = w_all > 0
    n_events = int(np.sum((data.delta == 1) & active))
    if n_events < 2:
        raise InsufficientDataError(
            f"fewer than 2 events carry kernel weight at x0={x0}", x0=float(x0)
        )
    K = data.n_arms
    identified = np.array(
        [np.any((data.z[:, k] == 1) & active & (data.delta == 1)) for k in range(K)]
    )
    arms = np.nonzero(identified)[0]
    ka = arms.shape[0]

    idx = np.nonzero(active)[0]
    w = w_all[idx]
    delta = data.delta[idx]
    dx = x[idx] - x0
    zarm = data.z[idx][:, arms].astype(float)
    psi = np.hstack([zarm, zarm * dx[:, None], dx[:, None]])
    risk = _RiskSets(data.time[idx])
    k0 = float(_kernel_values(np.zeros(1), kernel)[0])
    rvec = ridge_events * (k0 / h) * 0.25 * np.concatenate(
        [np.ones(ka), np.full(ka, h * h), [h * h]]
    )

    def objective(theta):
        ll, grad, hess = _partial_loglik_parts(theta, psi, w, delta, risk)
        ll -= 0.5 * float(theta @ (rvec * theta))
        grad = grad - rvec * theta
        hess = hess - np.diag(rvec)
        return ll, grad, hess

    tol = 1e-9 * max(1.0, float(np.sum(w * delta)))
    res = newton_maximize(objective, np.zeros(2 * ka + 1), tol=tol, max_iter=100)
    _, _, hess = objective(res.x)

    delta_hat = np.full(K, np.nan)
    gamma_hat = np.full(K, np.nan)
    delta_hat[arms] = res.x[:ka]
    gamma_hat[arms] = res.x[ka : 2 * ka]
    d_hat = float(res.x[-1])
    info = np.zeros((2 * K + 1, 2 * K + 1))
    sel = np.concatenate([arms, K + arms, [2 * K]])
    info[np.ix_(sel, sel)] = -hess

    k0 = float(_kernel_values(np.zeros(1), kernel)[0])
    effective_n = float(np.sum(_kernel_values((x - x0) / h, kernel) / k0))
    return LocalFit(
        x0=float(x0),
        delta_hat=delta_hat,
        gamma_hat=gamma_hat,
        d_hat=d_hat,
        information=info,
        effective_n=effective_n,
        converged=bool(res.converged),
        identified=identified,
        bandwidth=float(h),
    )


def _score_residuals(data, fit: LocalFit, kernel: Kernel) -> np.ndarray:
    """Per-subject score residuals of the local partial likelihood.

    Rows sum to the (vanishing) score at the optimum; they are the units the
    multiplier bootstrap perturbs. Columns cover identified components only.
    """
    x = np.asarray(data.x, dtype=float)
    w_all = kernel_weight(x - fit.x0, fit.bandwidth, kernel)
    window = w_all > 0  # zero-weight subjects carry exactly zero residual
    idx = np.nonzero(window)[0]
    w = w_all[idx]
    arms = np.nonzero(fit.identified)[0]
    dx = x[idx] - fit.x0
    zarm = data.z[idx][:, arms].astype(float)
    psi = np.hstack([zarm, zarm * dx[:, None], dx[:, None]])
    theta = np.concatenate([fit.delta_hat[arms], fit.gamma_hat[arms], [fit.d_hat]])
    eta = np.minimum(psi @ theta, 300.0)
    we = w * np.exp(eta)

    time_w = data.time[idx]
    risk = _RiskSets(time_w)
    s0 = risk.prefix(we)
    s1 = risk.prefix(we[:, None] * psi)
    inv = np.empty_like(risk.order)
    inv[risk.order] = np.arange(risk.order.shape[0])
    s0_i = np.maximum(s0[inv], 1e-300)
    mean_i = s1[inv] / s0_i[:, None]

    delta = (data.delta[idx] == 1).astype(float)
    # prefix over events with time <= t (ascending cumulative, ties inclusive)
    ev_w = delta * w / s0_i
    asc = _RiskSets(-time_w)  # descending on -time == ascending on time
    inv_asc = np.empty_like(asc.order)
    inv_asc[asc.order] = np.arange(asc.order.shape[0])
    c1 = asc.prefix(ev_w)[inv_asc]
    c2 = asc.prefix(ev_w[:, None] * mean_i)[inv_asc]

    resid_w = delta[:, None] * w[:, None] * (psi - mean_i) - we[:, None] * (
        psi * c1[:, None] - c2
    )
    resid = np.zeros((data.n, psi.shape[1]))
    resid[idx] = resid_w
    return resid


def fit_curve(
    data: SurvivalDataset,
    grid_size: int = 50,
    h: float | None = None,
    kernel: Kernel = Kernel.EPANECHNIKOV,
    contrast: Sequence[float] | None = None,
) -> SurvivalCsteFit:
    """Estimate a contrast of arm-specific log hazard ratio curves on a grid."""
    K = data.n_arms
    if contrast is None:
        if K == 1:
            contrast = (1.0,)
        else:
            raise ValueError("a contrast vector is required with more than one arm")
    ell = np.asarray(contrast, dtype=float)
    if ell.shape != (K,):
        raise ValueError(f"contrast must have length {K}, got {ell.shape}")
    if np.all(ell == 0):
        raise ValueError("contrast must not be all zeros")
    if grid_size < 2:
        raise ValueError(f"grid_size must be at least 2, got {grid_size}")
    if h is None:
        h = default_bandwidth(data.x, n_events=int(data.delta.sum()), n_arms=K)

    lo, hi = np.quantile(data.x, [0.05, 0.95])
    grid = np.linspace(lo, hi, grid_size)
    kept_x, fits, values = [], [], []
    dropped: list[tuple[float, str]] = []
    needed = np.nonzero(ell != 0)[0]
    for x0 in grid:
        try:
            lf = fit_local(data, float(x0), h, kernel)
        except InsufficientDataError as exc:
            dropped.append((float(x0), str(exc)))
            continue
        if not lf.converged:
            dropped.append((float(x0), "local solver did not converge"))
            continue
        if not np.all(lf.identified[needed]):
            dropped.append((float(x0), "contrast arm without weighted events"))
            continue
        kept_x.append(float(x0))
        fits.append(lf)
        values.append(float(ell[needed] @ lf.delta_hat[needed]))
    if len(dropped) >= 0.2 * grid_size:
        lines = "; ".join(f"x0={x0:.4g}: {msg}" for x0, msg in dropped[:5])
        raise SurvivalFitError(
            f"{len(dropped)} of {grid_size} grid points failed ({lines} ...)"
        )
    return SurvivalCsteFit(
        grid=np.array(kept_x),
        local_fits=fits,
        bandwidth=float(h),
        kernel=kernel,
        contrast=ell,
        curve=np.array(values),
        dropped=dropped,
    )


def scb_survival(
    fit: SurvivalCsteFit,
    data: SurvivalDataset,
    alpha: float = 0.05,
    n_resample: int = 1000,
    seed: int = 0,
) -> CsteCurve:
    """Simultaneous band for the contrast curve by multiplier resampling.

    Standard normal subject weights perturb the per-subject score residuals;
    each replicate's deviation is the contrast read off one linearization
    step, and the critical value is the (1-alpha) quantile of the studentized
    supremum across the grid.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n_resample < 1:
        raise ValueError(f"n_resample must be positive, got {n_resample}")
    if fit.grid.shape[0] < 2:
        raise SurvivalFitError("need at least 2 valid grid points for a band")

    K = fit.n_arms
    x_lo, x_hi = float(np.min(data.x)), float(np.max(data.x))
    kept, est, ses, phis = [], [], [], []
    n_excluded = 0
    for x0, lf, value in zip(fit.grid, fit.local_fits, fit.curve):
        arms = np.nonzero(lf.identified)[0]
        ka = arms.shape[0]
        sel = np.concatenate([arms, K + arms, [2 * K]])
        info = lf.information[np.ix_(sel, sel)]
        e_ell = np.zeros(2 * ka + 1)
        e_ell[:ka] = fit.contrast[arms]
        try:
            t_vec = np.linalg.solve(info, e_ell)
        except np.linalg.LinAlgError:
            n_excluded += 1
            continue
        var = float(e_ell @ t_vec)
        if not np.isfinite(var) or var <= 0:
            n_excluded += 1
            continue
        resid = _score_residuals(data, lf, fit.kernel)
        # windows truncated by the support boundary lose effective
        # information that the plug-in inverse ignores; inflate by the
        # reciprocal of the kernel mass remaining inside the data range
        mass = _interior_mass(float(x0), fit.bandwidth, fit.kernel, x_lo, x_hi)
        kept.append(float(x0))
        est.append(float(value))
        ses.append(float(np.sqrt(var)) / mass)
        phis.append(resid @ t_vec)
    if len(kept) < 2:
        raise SurvivalFitError("too few grid points with invertible information")

    phi_mat = np.column_stack(phis)
    se_vec = np.array(ses)
    n = phi_mat.shape[0]
    master = RngStream(seed)
    sups = np.empty(n_resample)
    block = 256
    for start in range(0, n_resample, block):
        stop = min(start + block, n_resample)
        xi = np.stack(
            [master.substream(b + 1).generator().standard_normal(n) for b in range(start, stop)]
        )
        dev = xi @ phi_mat
        sups[start:stop] = np.max(np.abs(dev) / se_vec, axis=1)
    crit = float(np.quantile(sups, 1.0 - alpha))

    est_vec = np.array(est)
    return CsteCurve(
        grid=np.array(kept),
        estimate=est_vec,
        lower=est_vec - crit * se_vec,
        upper=est_vec + crit * se_vec,
        alpha=alpha,
        bandwidth=fit.bandwidth,
        critical_value=crit,
        se=se_vec,
        n_trimmed=n_excluded,
    )
