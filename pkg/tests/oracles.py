"""Independent reference implementations used as test oracles.

Everything here is written from textbook definitions and deliberately
avoids the package's own numerical code paths.
"""

from __future__ import annotations

import numpy as np


def naive_bspline(x: float, k: int, i: int, t: np.ndarray) -> float:
    """Plain recursive Cox-de Boor B_{i,k} over knot sequence t."""
    if k == 0:
        # half-open spans; the right boundary belongs to the last span
        if t[i] <= x < t[i + 1]:
            return 1.0
        if x == t[-1] and t[i] < t[i + 1] and t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    c1 = 0.0
    if t[i + k] != t[i]:
        c1 = (x - t[i]) / (t[i + k] - t[i]) * naive_bspline(x, k - 1, i, t)
    c2 = 0.0
    if t[i + k + 1] != t[i + 1]:
        c2 = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * naive_bspline(x, k - 1, i + 1, t)
    return c1 + c2


def naive_basis_vector(x: float, degree: int, full_knots: np.ndarray) -> np.ndarray:
    q = len(full_knots) - degree - 1
    return np.array([naive_bspline(x, degree, i, full_knots) for i in range(q)])


def irls_logistic(design: np.ndarray, y: np.ndarray, offset=None, max_iter=200, tol=1e-12):
    """Textbook IRLS for logistic regression; returns the coefficient vector."""
    n, q = design.shape
    beta = np.zeros(q)
    off = np.zeros(n) if offset is None else offset
    for _ in range(max_iter):
        eta = design @ beta + off
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(p * (1.0 - p), 1e-12)
        grad = design.T @ (y - p)
        hess = design.T @ (design * w[:, None])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def cox_newton(time: np.ndarray, delta: np.ndarray, covs: np.ndarray, max_iter=100, tol=1e-12):
    """Textbook Newton-Raphson for the Cox partial likelihood, Breslow ties.

    ``covs`` is n x d. Risk sets are {j : time_j >= time_i}; tied event
    times share the same risk set.
    """
    n, d = covs.shape
    beta = np.zeros(d)
    for _ in range(max_iter):
        eta = covs @ beta
        grad = np.zeros(d)
        hess = np.zeros((d, d))
        for i in range(n):
            if delta[i] != 1:
                continue
            risk = time >= time[i]
            w = np.exp(eta[risk])
            s0 = w.sum()
            s1 = covs[risk].T @ w
            s2 = (covs[risk] * w[:, None]).T @ covs[risk]
            mu = s1 / s0
            grad += covs[i] - mu
            hess += s2 / s0 - np.outer(mu, mu)
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def cox_loglik(beta: np.ndarray, time: np.ndarray, delta: np.ndarray, covs: np.ndarray) -> float:
    eta = covs @ beta
    ll = 0.0
    for i in range(len(time)):
        if delta[i] != 1:
            continue
        risk = time >= time[i]
        ll += eta[i] - np.log(np.sum(np.exp(eta[risk])))
    return float(ll)
