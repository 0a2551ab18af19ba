"""Hodrick-Prescott trend/cycle split.

The trend minimises ``sum (x - tau)^2 + alpha * sum (second difference of tau)^2``.
Setting the gradient to zero gives the symmetric positive-definite system

    (I + 2 * alpha * D'D) tau = x

with ``D`` the (W-2) x W second-difference operator.  The matrix is
pentadiagonal, so it is factored once per ``(W, alpha)`` as ``L diag(e) L'``
(``L`` unit lower triangular with two sub-diagonals) and every column of every
window is solved against the same factor in O(W).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from transde.errors import ConfigError

DEFAULT_ALPHA = 6400.0


@dataclass(frozen=True)
class DecomposedWindow:
    trend: np.ndarray
    cyclical: np.ndarray
    alpha: float

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.trend.shape != self.cyclical.shape:
            raise ValueError("trend and cyclical shapes differ")


def second_difference_matrix(W: int) -> np.ndarray:
    D = np.zeros((W - 2, W))
    rows = np.arange(W - 2)
    D[rows, rows] = 1.0
    D[rows, rows + 1] = -2.0
    D[rows, rows + 2] = 1.0
    return D


def hp_system_bands(W: int, alpha: float):
    """Diagonal, first and second sub-diagonal of ``I + 2 alpha D'D``."""
    _check(W, alpha)
    c = 2.0 * alpha
    diag = np.ones(W)
    off1 = np.zeros(W - 1)
    off2 = np.zeros(W - 2)
    # each row k of D touches columns k, k+1, k+2 with weights (1, -2, 1)
    w = (1.0, -2.0, 1.0)
    for k in range(W - 2):
        for a in range(3):
            diag[k + a] += c * w[a] * w[a]
            if a < 2:
                off1[k + a] += c * w[a] * w[a + 1]
        off2[k] += c * w[0] * w[2]
    return diag, off1, off2


@lru_cache(maxsize=64)
def _factor(W: int, alpha: float):
    a0, a1, a2 = hp_system_bands(W, alpha)
    e = np.empty(W)
    l1 = np.zeros(W)  # l1[i] = L[i, i-1]
    l2 = np.zeros(W)  # l2[i] = L[i, i-2]
    for i in range(W):
        if i >= 2:
            l2[i] = a2[i - 2] / e[i - 2]
        if i >= 1:
            s = a1[i - 1]
            if i >= 2:
                s -= l2[i] * l1[i - 1] * e[i - 2]
            l1[i] = s / e[i - 1]
        e[i] = a0[i] - l1[i] ** 2 * (e[i - 1] if i >= 1 else 0.0) \
            - l2[i] ** 2 * (e[i - 2] if i >= 2 else 0.0)
        if e[i] <= 0:
            raise np.linalg.LinAlgError("HP system is not positive definite")
    for arr in (e, l1, l2):
        arr.flags.writeable = False
    return e, l1, l2


def solve_banded_hp(x: np.ndarray, alpha: float) -> np.ndarray:
    """Solve ``(I + 2 alpha D'D) tau = x`` along axis 0 of ``x`` (any trailing shape)."""
    x = np.asarray(x, dtype=np.float64)
    W = x.shape[0]
    e, l1, l2 = _factor(W, float(alpha))
    z = np.empty_like(x)
    for i in range(W):
        zi = x[i].copy()
        if i >= 1:
            zi -= l1[i] * z[i - 1]
        if i >= 2:
            zi -= l2[i] * z[i - 2]
        z[i] = zi
    z /= e.reshape((W,) + (1,) * (x.ndim - 1))
    tau = np.empty_like(x)
    for i in range(W - 1, -1, -1):
        ti = z[i].copy()
        if i + 1 < W:
            ti -= l1[i + 1] * tau[i + 1]
        if i + 2 < W:
            ti -= l2[i + 2] * tau[i + 2]
        tau[i] = ti
    return tau


def hp_filter(x, alpha: float = DEFAULT_ALPHA):
    """Return ``(trend, cyclical)`` of a 1-D series."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("hp_filter expects a 1-D series")
    _check(x.shape[0], alpha)
    trend = solve_banded_hp(x, alpha)
    return trend, x - trend


def decompose_window(window, alpha: float = DEFAULT_ALPHA) -> DecomposedWindow:
    """Filter every variable column of a ``(W, d)`` window independently."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError("window must be (W, d)")
    _check(window.shape[0], alpha)
    trend = solve_banded_hp(window, alpha)
    return DecomposedWindow(trend, window - trend, float(alpha))


def decompose_batch(windows, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``(B, W, d)`` windows -> ``(B, 2, W, d)`` stacked (trend, cyclical)."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3:
        raise ValueError("windows must be (B, W, d)")
    _check(windows.shape[1], alpha)
    trend = np.moveaxis(solve_banded_hp(np.moveaxis(windows, 1, 0), alpha), 0, 1)
    return np.stack([trend, windows - trend], axis=1)


def _check(W: int, alpha: float) -> None:
    if W < 3:
        raise ConfigError(f"need at least 3 points for second differences, got {W}")
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
