"""Martingale-measure construction for the immediate break-up model.

Setting: all agents are unmatched at the start of every period (they separate
right after matching), each period carries a two-state scenario component, and
the measure change only reweights that component with probability ``q(k)`` of
state 1.  The signed-volume difference ``p1 - p3`` is a martingale under the
new measure when ``q a1 + (1 - q) a2 = p1 - p3``, where ``a_i`` is the expected
next difference in state ``i``.

Distributions passed to this module are ``3 x 4`` arrays with all mass in the
unmatched column (the immediate break-up regime).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .distribution import gamma_step
from .drivers import BinomialDriverSpec, lattice_params
from .core import TimeGrid
from .models import ArbitrageModel, ArbitrageModelParams, sentiment_f

STATE_KEY = "omega"


class DegenerateMeasure(ValueError):
    """Raised when both states produce the same drift, so ``q`` is not unique."""


class ConstructionError(RuntimeError):
    pass


def _pick(params: ArbitrageModelParams, state: int, k: int):
    """Scalar parameter values of ``state`` at period ``k``."""
    def val(pair):
        return float(ArbitrageModelParams._pick(pair, np.asarray(state), k))

    eta = {key: val(params.eta[key]) if key in params.eta else 0.0 for key in ("13", "31", "21", "23")}
    vs = {key: val(params.varsigma[key]) if key in params.varsigma else 0.0 for key in ("13", "31")}
    return val(params.theta), eta, vs


def _unmatched(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[:, -1] if p.ndim == 2 else p


def eval_F13(params: ArbitrageModelParams, state: int, k: int, p) -> Tuple[float, float]:
    """Post-mutation unmatched masses of the optimistic and pessimistic types, written out term by term."""
    _, e, _ = _pick(params, state, k)
    p1, p2, p3 = _unmatched(p)
    x = p1 - p3
    f = {kind: float(sentiment_f(x, kind)) for kind in ((2, 1), (3, 1), (1, 2), (1, 3), (2, 3), (3, 2))}
    F1 = (p2 * (e["21"] + f[(2, 1)]) + p3 * (e["31"] + f[(3, 1)])
          + p1 * (1 - f[(1, 2)] - e["13"] - f[(1, 3)]))
    F3 = (p2 * (e["23"] + f[(2, 3)]) + p1 * (e["13"] + f[(1, 3)])
          + p3 * (1 - f[(3, 2)] - e["31"] - f[(3, 1)]))
    return F1, F3


def eval_F(params: ArbitrageModelParams, state: int, k: int, p) -> np.ndarray:
    """All three post-mutation unmatched masses from the general mutation table."""
    model = ArbitrageModel(params, STATE_KEY)
    pd = np.zeros((3, 4))
    pd[:, -1] = _unmatched(p)
    eta = model.mutation({STATE_KEY: state}, k, pd)
    return pd[:, -1] @ eta


def eval_a(params: ArbitrageModelParams, state: int, k: int, p) -> float:
    """Expected next optimistic-minus-pessimistic fraction in ``state``.

    With ``s_il`` the probability that a type-``i`` agent adopts the view of
    its type-``l`` partner, the unmatched mass after one period is
    ``(1-theta) F_i + theta F_i^2 + theta sum_{l != i} F_i F_l (1 + s_li - s_il)``.
    """
    theta, _, vs = _pick(params, state, k)
    F = eval_F(params, state, k, p)
    F1, F2, F3 = F
    x = F1 - F3

    def s(i, l):
        base = vs.get(f"{i}{l}", 0.0)
        return base + float(sentiment_f(x, (i, l)))

    return float((1 - theta) * (F1 - F3) + theta * (F1 * F1 - F3 * F3)
                 + theta * (F1 * F2 * (1 + s(2, 1) - s(1, 2))
                            - F3 * F2 * (1 + s(2, 3) - s(3, 2))
                            + 2 * F1 * F3 * (s(3, 1) - s(1, 3))))


def eval_a_without_factor2(params: ArbitrageModelParams, state: int, k: int, p) -> float:
    """The drift with the F1 F3 cross term lacking its factor 2.

    Kept only to quantify the gap to :func:`eval_a`.
    """
    theta, _, vs = _pick(params, state, k)
    F1, F3 = eval_F13(params, state, k, p)
    F2 = 1.0 - F1 - F3
    x = F1 - F3
    g = lambda i, l: float(sentiment_f(x, (i, l)))
    return float((1 - theta) * (F1 - F3) + theta * (F1 * F1 - F3 * F3)
                 + theta * ((g(2, 1) + 1 - g(1, 2)) * F1 * F2
                            - (g(2, 3) + 1 - g(3, 2)) * F3 * F2
                            + (vs["31"] + g(3, 1) - vs["13"] - g(1, 3)) * F1 * F3))


def gamma_difference(params: ArbitrageModelParams, state: int, k: int, p) -> float:
    """``Gamma_1J - Gamma_3J`` read off the general one-period map (the oracle for :func:`eval_a`)."""
    pd = np.zeros((3, 4))
    pd[:, -1] = _unmatched(p)
    _, _, new = gamma_step(pd, ArbitrageModel(params, STATE_KEY), {STATE_KEY: state}, k)
    return float(new[0, -1] - new[2, -1])


@dataclass
class QSolution:
    q: float
    feasible: bool
    degenerate: bool = False
    a1: float = float("nan")
    a2: float = float("nan")
    target: float = float("nan")

    @property
    def residual(self) -> float:
        return self.q * self.a1 + (1 - self.q) * self.a2 - self.target


def solve_q(a1: float, a2: float, target: float, tol: float = 1e-14) -> QSolution:
    """Probability of state 1 that makes the expected next difference equal ``target``."""
    if abs(a1 - a2) <= tol:
        raise DegenerateMeasure(f"a1 = a2 = {a1!r}: no unique measure")
    q = (target - a2) / (a1 - a2)
    # the rounded q must also stay strictly inside (0, 1)
    feasible = ((a1 < target < a2) or (a2 < target < a1)) and 0.0 < q < 1.0
    return QSolution(q, feasible, False, a1, a2, target)


def solve_q_at(params: ArbitrageModelParams, k: int, p) -> QSolution:
    pJ = _unmatched(p)
    d = float(pJ[0] - pJ[2])
    a1 = eval_a(params, 1, k, p)
    a2 = eval_a(params, 2, k, p)
    if abs(a1 - a2) <= 1e-14 and abs(a1 - d) <= 1e-14:
        return QSolution(0.5, True, True, a1, a2, d)
    return solve_q(a1, a2, d)


THETA_MAX = 0.5
BISECTION_STEPS = 60


def _theta_search(a_of_theta: Callable[[float], float], ok: Callable[[float], bool]) -> float:
    """Matching level in (0, THETA_MAX] satisfying ``ok``; half the critical level if the cap fails."""
    if not ok(a_of_theta(0.0)):
        raise ConstructionError("condition fails even without matching: bracket [0, 0]")
    if ok(a_of_theta(THETA_MAX)):
        return THETA_MAX
    lo, hi = 0.0, THETA_MAX
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if ok(a_of_theta(mid)):
            lo = mid
        else:
            hi = mid
    theta = 0.5 * lo
    if not (theta > 0 and ok(a_of_theta(theta))):
        raise ConstructionError(f"no admissible matching level found; final bracket [{lo!r}, {hi!r}]")
    return theta


def _linear_in_theta(a_of_theta: Callable[[float], float]) -> Callable[[float], float]:
    # the drift is affine in the matching level, so two evaluations pin it down
    a0 = a_of_theta(0.0)
    slope = (a_of_theta(THETA_MAX) - a0) / THETA_MAX
    return lambda t: a0 + slope * t


def _swap_params(prm: ArbitrageModelParams) -> ArbitrageModelParams:
    swap = {"13": "31", "31": "13", "21": "23", "23": "21"}
    return ArbitrageModelParams(
        theta=prm.theta,
        eta={swap[k]: v for k, v in prm.eta.items()},
        varsigma={swap[k]: v for k, v in prm.varsigma.items()},
    )


def construct_feasible_params(k: int, p) -> Tuple[ArbitrageModelParams, QSolution]:
    """Two-state parameters for period ``k`` whose drifts bracket ``p1 - p3``, with the matching ``q``.

    State 1 pushes agents towards the pessimistic view (drift below the current
    difference); state 2 pushes them the other way with a mutation ratio below
    ``p3/p1`` and a stronger post-match pull towards the optimistic view.  Both
    matching levels are found by bisection.  The case ``p1 < p3`` is handled by
    relabelling, and ``p1 == p3`` returns the zero-drift pair with ``q = 1/2``.
    """
    pJ = _unmatched(p).astype(float)
    d = pJ[0] - pJ[2]
    if d == 0.0:
        prm = ArbitrageModelParams(theta=(0.0, 0.0))
        return prm, QSolution(0.5, True, True, 0.0, 0.0, 0.0)
    if d < 0:
        prm, _ = construct_feasible_params(k, pJ[::-1])
        prm = _swap_params(prm)
        sol = solve_q_at(prm, k, pJ)
        if not sol.feasible:
            raise ConstructionError("mirrored construction lost feasibility")
        return prm, sol
    p1, p3 = pJ[0], pJ[2]
    down = {"13": 0.5, "23": 0.5, "31": 0.0, "21": 0.0}
    up = {"31": 0.25, "13": float(0.25 * (p3 / p1) * 0.5), "21": 0.0, "23": 0.0}
    vs_down = {"31": 0.0, "13": 0.0}
    vs_up = {"31": 0.25, "13": 0.0}

    def single(eta, vs, theta):
        return ArbitrageModelParams(
            theta=(theta, theta),
            eta={key: (v, v) for key, v in eta.items()},
            varsigma={key: (v, v) for key, v in vs.items()},
        )

    theta1 = _theta_search(_linear_in_theta(lambda t: eval_a(single(down, vs_down, t), 1, k, pJ)), lambda a: a < d)
    theta2 = _theta_search(_linear_in_theta(lambda t: eval_a(single(up, vs_up, t), 1, k, pJ)), lambda a: a > d)
    prm = ArbitrageModelParams(
        theta=(theta1, theta2),
        eta={key: (down[key], up[key]) for key in down},
        varsigma={key: (vs_down[key], vs_up[key]) for key in vs_down},
    )
    sol = solve_q_at(prm, k, pJ)
    if not sol.feasible:
        raise ConstructionError(f"constructed drifts do not bracket the target: a1={sol.a1}, a2={sol.a2}, d={d}")
    return prm, sol


# ----------------------------------------------------------------------------
# Martingale verification
# ----------------------------------------------------------------------------

Policy = Callable[[int, np.ndarray], Tuple[ArbitrageModelParams, float]]


def constructed_policy(k: int, p) -> Tuple[ArbitrageModelParams, float]:
    prm, sol = construct_feasible_params(k, p)
    return prm, sol.q


def physical_policy(prob_state1: float = 0.5) -> Policy:
    """Parameters from the construction, but with the original state probability."""
    def policy(k, p):
        prm, _ = construct_feasible_params(k, p)
        return prm, prob_state1
    return policy


@dataclass
class MeasureSpec:
    """Per-period state-1 probabilities, produced by ``policy`` along the realised distribution path.

    Every other driver keeps its lattice law, so the new measure shares its
    null sets with the original one as long as ``0 < q < 1``.
    """

    policy: Policy = constructed_policy

    def q(self, k: int, p) -> float:
        return self.policy(k, p)[1]


@dataclass
class MartingaleReport:
    rows: List[Tuple[int, float, float, float, float]] = field(default_factory=list)
    mc_mean: float = float("nan")
    mc_stderr: float = float("nan")
    mc_samples: int = 0

    @property
    def max_residual(self) -> float:
        return max((abs(r[4]) for r in self.rows), default=0.0)

    @property
    def mc_z(self) -> float:
        return self.mc_mean / self.mc_stderr if self.mc_stderr > 0 else 0.0

    def analytic_ok(self, tol: float = 1e-12) -> bool:
        return self.max_residual <= tol

    def mc_ok(self, nse: float = 4.0) -> bool:
        return abs(self.mc_mean) <= nse * self.mc_stderr

    def to_csv(self) -> str:
        out = ["k,a1,a2,q,residual"]
        for k, a1, a2, q, r in self.rows:
            out.append(f"{k},{a1:.15g},{a2:.15g},{q:.15g},{r:.15g}")
        return "\n".join(out) + "\n"


def _step(prm: ArbitrageModelParams, state: int, k: int, pJ: np.ndarray) -> np.ndarray:
    pd = np.zeros((3, 4))
    pd[:, -1] = pJ
    _, _, new = gamma_step(pd, ArbitrageModel(prm, STATE_KEY), {STATE_KEY: state}, k)
    return new[:, -1]


@dataclass
class PriceDrivers:
    """Raw lattice drivers of the price: signed-volume scale, resiliency factor, illiquidity."""

    Theta: BinomialDriverSpec = BinomialDriverSpec(5.0, 0.2)
    Lambda: BinomialDriverSpec = BinomialDriverSpec(1.0, 0.3)
    M: BinomialDriverSpec = BinomialDriverSpec(1.0, 0.3)

    def lattices(self, grid: TimeGrid):
        return [lattice_params(s, grid) for s in (self.Theta, self.Lambda, self.M)]


def verify_martingale(spec: MeasureSpec, p0, grid: TimeGrid, n_paths: int = 100,
                      resamples: int = 10, seed: int = 0,
                      drivers: Optional[PriceDrivers] = None) -> MartingaleReport:
    """Analytic and Monte Carlo checks that ``S`` has zero conditional drift (no decay term).

    (a) Along one distribution path (states drawn with ``q``) the residual
    ``q a1 + (1-q) a2 - (p1 - p3)`` is recorded per period.
    (b) ``n_paths`` paths are simulated under the measure; at every reached
    (period, node) the next price increment is redrawn ``resamples`` times and
    the pooled mean is compared with its standard error.
    """
    drivers = drivers or PriceDrivers()
    rng = np.random.default_rng(seed)
    pJ0 = _unmatched(p0).astype(float)
    rep = MartingaleReport()
    pJ = pJ0.copy()
    for k in range(1, grid.N + 1):
        prm, q = spec.policy(k, pJ)
        a1 = eval_a(prm, 1, k, pJ)
        a2 = eval_a(prm, 2, k, pJ)
        rep.rows.append((k, a1, a2, q, q * a1 + (1 - q) * a2 - (pJ[0] - pJ[2])))
        state = 1 if rng.random() < q else 2
        pJ = _step(prm, state, k, pJ)

    lat = drivers.lattices(grid)
    x0 = np.array([drivers.Theta.x0, drivers.Lambda.x0, drivers.M.x0])
    logu = np.array([math.log(u) for u, _, _ in lat])
    pup = np.array([pu for _, _, pu in lat])
    total = 0.0
    total_sq = 0.0
    count = 0
    for _ in range(n_paths):
        pJ = pJ0.copy()
        expo = np.zeros(3)
        for k in range(1, grid.N + 1):
            prm, q = spec.policy(k, pJ)
            nxt = {1: _step(prm, 1, k, pJ), 2: _step(prm, 2, k, pJ)}
            vals = x0 * np.exp(logu * expo)
            X_prev = vals[0] * (pJ[0] - pJ[2])
            st = np.where(rng.random(resamples) < q, 1, 2)
            moves = np.where(rng.random((resamples, 3)) < pup, 1, -1)
            new_vals = x0 * np.exp(logu * (expo + moves))
            d_next = np.where(st == 1, nxt[1][0] - nxt[1][2], nxt[2][0] - nxt[2][2])
            dS = 2 * new_vals[:, 1] * new_vals[:, 2] * (new_vals[:, 0] * d_next - X_prev)
            total += dS.sum()
            total_sq += (dS * dS).sum()
            count += resamples
            # continue the path along one draw
            state = 1 if rng.random() < q else 2
            expo = expo + np.where(rng.random(3) < pup, 1, -1)
            pJ = nxt[state]
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / max(count - 1, 1)
    rep.mc_mean = mean
    rep.mc_stderr = math.sqrt(var / count)
    rep.mc_samples = count
    return rep


def exact_conditional_drifts(spec: MeasureSpec, p0, grid: TimeGrid,
                             drivers: Optional[PriceDrivers] = None) -> np.ndarray:
    """Exact ``E[S^k - S^{k-1} | node]`` at every node of the full tree (small instances only).

    The tree branches on the two-state component and on every price driver
    with positive volatility; at most three stochastic components and
    ``N <= 4`` periods are accepted.
    """
    if grid.N > 4:
        raise ValueError("exact enumeration is limited to N <= 4")
    drivers = drivers or PriceDrivers()
    specs = (drivers.Theta, drivers.Lambda, drivers.M)
    active = [j for j, sp in enumerate(specs) if sp.sigma > 0]
    if 1 + len(active) > 3:
        raise ValueError("exact enumeration is limited to three stochastic components")
    lat = drivers.lattices(grid)
    x0 = np.array([sp.x0 for sp in specs])
    logu = np.array([math.log(u) for u, _, _ in lat])
    pup = np.array([pu for _, _, pu in lat])
    out = []
    cache: Dict[tuple, tuple] = {}

    def node(k, pJ):
        key = (k, tuple(pJ))
        if key not in cache:
            prm, q = spec.policy(k, pJ)
            cache[key] = (q, {1: _step(prm, 1, k, pJ), 2: _step(prm, 2, k, pJ)})
        return cache[key]

    def visit(k, pJ, expo):
        if k > grid.N:
            return
        q, nxt = node(k, pJ)
        vals = x0 * np.exp(logu * expo)
        X_prev = vals[0] * (pJ[0] - pJ[2])
        drift = 0.0
        children = []
        for state, w_state in ((1, q), (2, 1 - q)):
            for moves in itertools.product((1, -1), repeat=len(active)):
                mv = np.zeros(3)
                mv[active] = moves
                w = w_state * np.prod([pup[j] if m > 0 else 1 - pup[j] for j, m in zip(active, moves)])
                nv = x0 * np.exp(logu * (expo + mv))
                dnext = nxt[state][0] - nxt[state][2]
                drift += w * 2 * nv[1] * nv[2] * (nv[0] * dnext - X_prev)
                children.append((nxt[state], expo + mv))
        out.append(drift)
        for child_p, child_e in children:
            visit(k + 1, child_p, child_e)

    visit(1, _unmatched(p0).astype(float), np.zeros(3))
    return np.array(out)
