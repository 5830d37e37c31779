"""Independent reference implementations used to check the library.

Nothing here imports crank: scalars are evaluated with mpmath at 50 digits,
zone assignment by exhaustive enumeration, gradients by central differences.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from mpmath import mp, mpf

mp.dps = 50


def lam(a, b):
    return mpf(a) / (mpf(a) + mpf(b))


def weight(l, base=None):
    if base is None:
        return 1 / mp.log(1 + l)
    return 1 / mp.log(1 + l, mpf(base))


def affinity(lmbda, r, base=None):
    return mpf(lmbda) * mp.fsum(mpf(x) * weight(l, base) for l, x in enumerate(r, 1))


def g(s_hat, eta):
    return mpf(s_hat) * mp.exp(-eta)


def discovery(gs, base=None):
    return mp.fsum(mpf(x) * weight(l, base) for l, x in enumerate(gs, 1))


def convex(alpha, gamma, w):
    return mpf(w) * mpf(alpha) + (1 - mpf(w)) * mpf(gamma)


def rel_err(got, want) -> float:
    want = mpf(want)
    if want == 0:
        return float(abs(mpf(got)))
    return float(abs(mpf(got) - want) / abs(want))


def best_assignment(phi: dict[str, float], Z: int) -> float:
    """Max over all injective maps zones -> carousels of the summed phi."""
    ids = list(phi)
    return max(math.fsum(phi[c] for c in perm) for perm in itertools.permutations(ids, Z))


def optimal_assignments(phi: dict[str, float], Z: int) -> list[tuple[str, ...]]:
    best = best_assignment(phi, Z)
    return [
        perm
        for perm in itertools.permutations(list(phi), Z)
        if math.fsum(phi[c] for c in perm) == best
    ]


def dense_objective(C: np.ndarray, X: np.ndarray, Y: np.ndarray, reg: float, conf_alpha: float) -> float:
    """Objective summed over every cell of the dense count matrix ``C``."""
    P = (C > 0).astype(float)
    conf = 1.0 + conf_alpha * C
    R = X @ Y.T
    return float(np.sum(conf * (P - R) ** 2) + reg * (np.sum(X * X) + np.sum(Y * Y)))


def fd_grad_row(C, X, Y, reg, conf_alpha, u, h=1e-5) -> np.ndarray:
    grad = np.empty(X.shape[1])
    for k in range(X.shape[1]):
        Xp, Xm = X.copy(), X.copy()
        Xp[u, k] += h
        Xm[u, k] -= h
        grad[k] = (dense_objective(C, Xp, Y, reg, conf_alpha) - dense_objective(C, Xm, Y, reg, conf_alpha)) / (2 * h)
    return grad


def pairwise_auc(pos, neg) -> float:
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def rank1_fixed_point(eta: float, reg: float, conf_alpha: float) -> float:
    """x*y at the fixed point of alternating scalar least squares on one cell.

    The normal equations x = c*y/(c*y^2 + reg) and y = c*x/(c*x^2 + reg)
    force x = y (the other branch needs xy = 1 + reg/c and x = -y, which
    contradict each other), hence c*x^2 + reg = c and xy = 1 - reg/c.
    """
    c = 1.0 + conf_alpha * eta
    return 1.0 - reg / c
