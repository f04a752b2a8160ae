"""Liquidity-driven market: linear supply curve, signed volume and the bubble recursion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import TimeGrid
from .models import arctan_unit


def execution_cost(S, M, x):
    """Total cost of buying ``x`` shares against a linear book with slope ``M``.

    The book has density ``1/(2M)`` above ``S``; walking it up to
    ``S + 2 M x`` costs ``S x + M x^2`` (average price ``S + M x``).
    """
    x = np.asarray(x, dtype=float)
    M = np.asarray(M, dtype=float)
    if np.any((M <= 0) & (x > 0)):
        raise ValueError("illiquidity M must be positive for a non-zero order")
    if np.any(x < 0):
        raise ValueError("order size must be non-negative")
    return S * x + M * x * x


def average_price(S, M, x):
    return S + M * np.asarray(x, dtype=float)


def signed_volume(Theta, p1, p3):
    """Aggregate buy-minus-sell volume ``Theta (p1 - p3)``."""
    return Theta * (np.asarray(p1) - np.asarray(p3))


def bubble_step(beta_prev, kappa, dt, Lam, M, dX):
    return beta_prev - kappa * beta_prev * dt + 2.0 * Lam * M * dX


def birth_burst(beta, times, sign_change: bool = True):
    """Birth time (first strictly positive bubble) and burst time (first return to zero).

    Both are capped at the horizon.  With ``sign_change`` a crossing
    ``beta[j-1] > 0 >= beta[j]`` also counts as the burst.
    """
    beta = np.asarray(beta, dtype=float)
    times = np.asarray(times, dtype=float)
    T = times[-1]
    pos = np.nonzero(beta > 0)[0]
    if pos.size == 0:
        return T, T
    j0 = pos[0]
    for j in range(j0, beta.size):
        if beta[j] == 0.0:
            return times[j0], times[j]
        if sign_change and j > 0 and beta[j - 1] > 0 >= beta[j]:
            return times[j0], times[j]
    return times[j0], T


@dataclass
class MarketParams:
    """``kappa`` is a constant or a per-period array of length N.

    Driver bindings name scenario entries; ``F`` defaults to the constant ``F0``.
    ``Theta`` is read as ``(2/pi) arctan`` of its driver when ``squash_theta``.
    """

    kappa: Union[float, np.ndarray] = 0.01
    F0: float = 1.0
    F: Optional[str] = None
    Lambda: str = "Lambda"
    M: str = "M"
    Theta: str = "Z_Theta"
    squash_theta: bool = True
    x0_zero: bool = False

    def __post_init__(self):
        if np.any(np.asarray(self.kappa) < 0):
            raise ValueError("kappa must be non-negative")


@dataclass
class MarketPath:
    times: np.ndarray
    F: np.ndarray
    S: np.ndarray
    beta: np.ndarray
    X: np.ndarray
    p_diff: np.ndarray
    tau_plus: Optional[float] = None
    tau_zero: Optional[float] = None

    def wealth(self):
        """Wealth of holding one share up to the burst and selling at ``F`` then (no dividends)."""
        W = np.where(self.times < self.tau_zero, self.S, np.nan)
        k = int(np.searchsorted(self.times, self.tau_zero))
        if k < W.size:
            W[k] = self.F[k]
        return W, self.F.copy()

    def to_csv(self) -> str:
        rows = ["period,t,F,S,beta,X,p1_minus_p3"]
        for n in range(self.times.size):
            vals = (self.times[n], self.F[n], self.S[n], self.beta[n], self.X[n], self.p_diff[n])
            rows.append(f"{n}," + ",".join(f"{v:.15g}" for v in vals))
        return "\n".join(rows) + "\n"


def bubble_paths(p_diff, Lam, M, Theta, kappa, dt, x0_zero: bool = False):
    """Vectorised bubble recursion over the trailing period axis.

    All inputs are arrays ``(..., N+1)`` except ``kappa`` (scalar or ``(N,)``)
    and ``dt`` (scalar or ``(N,)``).  Returns ``(beta, X)``.
    """
    p_diff = np.asarray(p_diff, dtype=float)
    X = Theta * p_diff
    if x0_zero:
        X = X.copy()
        X[..., 0] = 0.0
    dX = np.diff(X, axis=-1)
    drive = 2.0 * Lam[..., 1:] * M[..., 1:] * dX
    nper = dX.shape[-1]
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (nper,))
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (nper,))
    beta = np.zeros(p_diff.shape)
    for n in range(1, nper + 1):
        b = beta[..., n - 1]
        beta[..., n] = b - kappa[n - 1] * b * dt[n - 1] + drive[..., n - 1]
    return beta, X


def simulate_market_path(p_diff, scenario, params: MarketParams, grid: TimeGrid) -> MarketPath:
    """Single-trajectory market path from a fraction-difference path and its scenario."""
    p_diff = np.asarray(p_diff, dtype=float)
    if p_diff.shape != (grid.N + 1,) or scenario.N != grid.N:
        raise ValueError("inputs are not aligned on the grid")
    v = scenario.values
    Theta = arctan_unit(v[params.Theta]) if params.squash_theta else v[params.Theta]
    F = v[params.F] if params.F else np.full(grid.N + 1, float(params.F0))
    beta, X = bubble_paths(p_diff, v[params.Lambda], v[params.M], Theta, params.kappa,
                           grid.deltas, params.x0_zero)
    S = F + beta
    # report the bubble as S - F so that the defining identity holds bit for bit
    beta = S - F
    tp, t0 = birth_burst(beta, grid.times)
    return MarketPath(grid.times.copy(), F, S, beta, X, p_diff, tp, t0)
