"""Loopy sum-product data association between legacy features and
measurements, in the ratio form with the "no association" entries
normalised to one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class AssociationBelief:
    feature_to_meas: np.ndarray  # (K, M+1); column 0 is "missed"
    meas_to_feature: np.ndarray  # (M, K+1); column 0 is "clutter or new"
    nu: np.ndarray  # (M, K) measurement-to-feature messages
    phi: np.ndarray  # (K, M) feature-to-measurement messages
    iterations: int = 0
    converged: bool = True


def psi(a, b) -> int:
    """Exclusion factor: 1 iff the two association vectors agree.

    ``a[k]`` is the 1-based measurement index of feature k (0 = none) and
    ``b[m]`` the 1-based feature index of measurement m (0 = none).
    """
    for k, m in enumerate(a):
        if m and b[m - 1] != k + 1:
            return 0
    for m, k in enumerate(b):
        if k and a[k - 1] != m + 1:
            return 0
    return 1


def run_messages(beta: np.ndarray, xi: np.ndarray, max_iters: int = 20, tol: float = 1e-6,
                 damping: float = 0.5) -> AssociationBelief:
    """Iterate the two message families.

    ``beta[k, m]`` is the likelihood ratio of feature k producing
    measurement m against it being missed; ``xi[m]`` is the weight of
    measurement m being clutter or a new feature relative to a legacy one.
    """
    beta = np.asarray(beta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    K, M = beta.shape
    if xi.shape != (M,):
        raise ValueError("xi must have one entry per measurement")
    if np.any(beta < 0) or np.any(xi <= 0):
        raise ValueError("beta must be >= 0 and xi > 0")
    nu = np.ones((M, K))
    phi = np.zeros((K, M))
    it = 0
    converged = K == 0 or M == 0
    for it in range(1, max_iters + 1):
        if converged:
            break
        prod = beta * nu.T
        phi = beta / (1.0 + prod.sum(axis=1, keepdims=True) - prod)
        tot = xi[:, None] + phi.sum(axis=0)[:, None]
        new = 1.0 / (tot - phi.T)
        new = (1.0 - damping) * new + damping * nu
        delta = np.max(np.abs(new - nu) / np.maximum(new, 1e-300))
        nu = new
        if delta < tol:
            converged = True
            break
    prod = beta * nu.T
    if K and M:
        phi = beta / (1.0 + prod.sum(axis=1, keepdims=True) - prod)
    a = np.concatenate([np.ones((K, 1)), prod], axis=1)
    a /= a.sum(axis=1, keepdims=True)
    b = np.concatenate([xi[:, None], phi.T], axis=1)
    b /= b.sum(axis=1, keepdims=True)
    return AssociationBelief(a, b, nu, phi, it, converged)


def decode(belief: AssociationBelief) -> tuple[np.ndarray, np.ndarray]:
    """Jointly consistent hard association from the feature-side beliefs.

    Solves the assignment problem on log beliefs, with one private
    "missed" slot per feature, so the result always satisfies ``psi``.
    """
    p = belief.feature_to_meas
    K, M1 = p.shape
    M = M1 - 1
    with np.errstate(divide="ignore"):
        lp = np.log(p)
    big = 1e6
    cost = np.full((K, M + K), big)
    cost[:, :M] = -np.where(np.isfinite(lp[:, 1:]), lp[:, 1:], -big)
    miss = -np.where(np.isfinite(lp[:, 0]), lp[:, 0], -big)
    cost[np.arange(K), M + np.arange(K)] = miss
    rows, cols = linear_sum_assignment(cost)
    a = np.zeros(K, dtype=int)
    b = np.zeros(M, dtype=int)
    for k, c in zip(rows, cols):
        if c < M:
            a[k] = c + 1
            b[c] = k + 1
    return a, b
