"""Transition models mapping (scenario state, period, distribution) to probability tables.

Every model exposes three evaluators that mirror the sub-steps of a period:

* ``mutation(scn, n, p)`` -> ``eta``, evaluated at the start-of-period distribution,
* ``matching(scn, n, p)`` -> ``theta``, evaluated at the post-mutation distribution,
* ``breakup(scn, n, p)`` -> ``(xi, sigma, varsigma)``, evaluated post-matching.

``scn`` is the dict returned by :meth:`ScenarioPath.at`; distributions and
scenario values may carry matching leading batch dimensions.  Types are
0-based internally: optimistic = 0, neutral = 1, pessimistic = 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ProbabilityTable, TOLERANCES, keep_pair_sigma, keep_type_varsigma

# (i, j) 1-based -> (direction, squared)
_SENTIMENT = {
    (2, 1): (+1, False),
    (3, 2): (+1, False),
    (1, 2): (-1, False),
    (2, 3): (-1, False),
    (3, 1): (+1, True),
    (1, 3): (-1, True),
}


def arctan_unit(z):
    """``(2/pi) arctan(z)``: maps positive lattice values into (0, 1)."""
    return (2.0 / np.pi) * np.arctan(z)


def quarter_arctan(z):
    """Squashing used for the mutation and break-up drivers, bounded by 1/4."""
    return 0.25 * arctan_unit(z)


def power_sentiment(y, scale: float = 1.0 / 3.0, power: float = 0.4):
    """Increasing map R+ -> [0, scale] with value 0 at 0."""
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    return scale * y ** power


def sentiment_f(x, kind: Tuple[int, int], scale: float = 1.0 / 3.0, power: float = 0.4):
    """Type-change increment ``f_ij(x)`` driven by the difference ``x = p1 - p3``.

    Upgrades (2->1, 3->2) use the positive part of ``x``, downgrades (1->2,
    2->3) the negative part; the direct jumps 3->1 and 1->3 use the square.
    """
    try:
        direction, squared = _SENTIMENT[tuple(kind)]
    except KeyError:
        raise ValueError(f"unknown index pair {kind!r}") from None
    x = np.asarray(x, dtype=float)
    v = power_sentiment(direction * x, scale, power)
    return v * v if squared else v


def sentiment_matrix(x, scale: float = 1.0 / 3.0, power: float = 0.4) -> np.ndarray:
    """All six increments as a ``(..., 3, 3)`` array with zero diagonal."""
    x = np.asarray(x, dtype=float)
    up = power_sentiment(x, scale, power)
    down = power_sentiment(-x, scale, power)
    out = np.zeros(x.shape + (3, 3))
    out[..., 1, 0] = up
    out[..., 2, 1] = up
    out[..., 0, 1] = down
    out[..., 1, 2] = down
    out[..., 2, 0] = up * up
    out[..., 0, 2] = down * down
    return out


def _with_residual_diagonal(offdiag: np.ndarray, what: str) -> np.ndarray:
    """Fill the diagonal so rows sum to one; reject negative residuals."""
    K = offdiag.shape[-1]
    out = offdiag.copy()
    idx = np.arange(K)
    out[..., idx, idx] = 0.0
    resid = 1.0 - out.sum(axis=-1)
    if np.any(resid < -TOLERANCES["table"]):
        k = int(np.argwhere(resid < -TOLERANCES["table"])[0][-1])
        raise ValueError(f"{what}: negative diagonal residual in row {k + 1}")
    out[..., idx, idx] = np.maximum(resid, 0.0)
    return out


def _ones_like_batch(p: np.ndarray) -> Tuple[int, ...]:
    return p.shape[:-2]


class TransitionModel:
    """Base class; concrete models override the three evaluators."""

    K = 3

    def mutation(self, scn, n, p) -> np.ndarray:
        raise NotImplementedError

    def matching(self, scn, n, p) -> np.ndarray:
        raise NotImplementedError

    def breakup(self, scn, n, p):
        raise NotImplementedError

    def fraction_difference(self, p) -> np.ndarray:
        """Optimistic minus pessimistic fraction of a (batched) distribution."""
        fr = np.asarray(p, dtype=float).sum(axis=-1)
        return fr[..., 0] - fr[..., 2]

    def tables(self, scn, n, p) -> ProbabilityTable:
        """All five tables evaluated at one distribution ``p``."""
        p = np.asarray(p, dtype=float)
        xi, sigma, varsigma = self.breakup(scn, n, p)
        return ProbabilityTable(self.mutation(scn, n, p), self.matching(scn, n, p), xi, sigma, varsigma)


class StaticModel(TransitionModel):
    """Fixed tables, independent of scenario, period and distribution."""

    def __init__(self, table: ProbabilityTable):
        self.table = table
        self.K = table.K

    def mutation(self, scn, n, p):
        return np.broadcast_to(self.table.eta, np.shape(p)[:-2] + self.table.eta.shape).copy()

    def matching(self, scn, n, p):
        return np.broadcast_to(self.table.theta, np.shape(p)[:-2] + self.table.theta.shape).copy()

    def breakup(self, scn, n, p):
        lead = np.shape(p)[:-2]
        t = self.table
        return (np.broadcast_to(t.xi, lead + t.xi.shape).copy(),
                np.broadcast_to(t.sigma, lead + t.sigma.shape).copy(),
                np.broadcast_to(t.varsigma, lead + t.varsigma.shape).copy())


class ProportionalMatchingModel(TransitionModel):
    """Generic K-type model: fixed mutation, ``theta_kl = level * p_lJ``, fixed break-up.

    Matching proportional to the partner's unmatched mass satisfies detailed
    balance at every distribution, which makes this a convenient random test model.
    """

    def __init__(self, eta, level, xi, sigma, varsigma):
        self.eta = np.asarray(eta, dtype=float)
        self.level = float(level)
        self.xi = np.asarray(xi, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.varsigma = np.asarray(varsigma, dtype=float)
        self.K = self.eta.shape[0]

    def mutation(self, scn, n, p):
        return np.broadcast_to(self.eta, np.shape(p)[:-2] + self.eta.shape).copy()

    def matching(self, scn, n, p):
        pJ = np.asarray(p)[..., -1]
        return self.level * np.broadcast_to(pJ[..., None, :], pJ.shape[:-1] + (self.K, self.K))

    def breakup(self, scn, n, p):
        lead = np.shape(p)[:-2]
        return (np.broadcast_to(self.xi, lead + self.xi.shape).copy(),
                np.broadcast_to(self.sigma, lead + self.sigma.shape).copy(),
                np.broadcast_to(self.varsigma, lead + self.varsigma.shape).copy())

    @classmethod
    def random(cls, rng: np.random.Generator, K: int = 3) -> "ProportionalMatchingModel":
        eta = rng.dirichlet(np.ones(K), size=K)
        xi = rng.uniform(0, 1, (K, K))
        xi = 0.5 * (xi + xi.T)
        sigma = np.empty((K, K, K, K))
        for k in range(K):
            for l in range(k, K):
                s = rng.dirichlet(np.ones(K * K)).reshape(K, K)
                if k == l:
                    s = 0.5 * (s + s.T)
                sigma[k, l] = s
                sigma[l, k] = s.T
        varsigma = rng.dirichlet(np.ones(K), size=(K, K))
        return cls(eta, rng.uniform(0, 1), xi, sigma, varsigma)


def _driver_value(scn: Mapping, key: Union[str, float, None], default: float = 0.0):
    if key is None:
        return default
    if isinstance(key, str):
        return scn[key]
    return float(key)


# ----------------------------------------------------------------------------
# Sentiment-driven pair model and its mutation matrix
# ----------------------------------------------------------------------------

def example1_sigma(f_plus, f_minus, F: Mapping[str, object]) -> np.ndarray:
    """Post-match joint type change table for three types.

    ``F`` maps the keys ``'121', '122', '232', '233', '131', '132', '133'`` to
    values (scalars or arrays) in [0, 1/2].  Residual cells are checked, never clamped.
    """
    fp = np.asarray(f_plus, dtype=float)
    fm = np.asarray(f_minus, dtype=float)
    Fv = {k: np.asarray(F.get(k, 0.0), dtype=float) for k in ("121", "122", "232", "233", "131", "132", "133")}
    lead = np.broadcast_shapes(fp.shape, fm.shape, *(v.shape for v in Fv.values()))
    s = np.zeros(lead + (3, 3, 3, 3))
    for k in range(3):
        s[..., k, k, k, k] = 1.0
    # optimistic-neutral pair
    s[..., 0, 1, 0, 0] = Fv["121"] + fp
    s[..., 0, 1, 1, 1] = Fv["122"] + fm
    s[..., 0, 1, 0, 1] = 1.0 - s[..., 0, 1, 0, 0] - s[..., 0, 1, 1, 1]
    # neutral-pessimistic pair
    s[..., 1, 2, 1, 1] = Fv["232"] + fp
    s[..., 1, 2, 2, 2] = Fv["233"] + fm
    s[..., 1, 2, 1, 2] = 1.0 - s[..., 1, 2, 1, 1] - s[..., 1, 2, 2, 2]
    # optimistic-pessimistic pair (F_132 also feeds the (2,3) cell)
    s[..., 0, 2, 0, 0] = Fv["131"] + fp ** 2
    s[..., 0, 2, 0, 1] = Fv["132"] + fp * (1 - fp)
    s[..., 0, 2, 2, 2] = Fv["133"] + fm ** 2
    s[..., 0, 2, 1, 2] = Fv["132"] + fm * (1 - fm)
    s[..., 0, 2, 0, 2] = (1.0 - s[..., 0, 2, 0, 0] - s[..., 0, 2, 0, 1]
                          - s[..., 0, 2, 2, 2] - s[..., 0, 2, 1, 2])
    for (k, l), (r, t) in (((0, 1), (0, 1)), ((1, 2), (1, 2)), ((0, 2), (0, 2))):
        cell = s[..., k, l, r, t]
        if np.any(cell < -TOLERANCES["table"]):
            raise ValueError(f"sigma_{k + 1}{l + 1}({r + 1},{t + 1}) is negative")
        s[..., k, l, r, t] = np.maximum(cell, 0.0)
    # mirror: sigma_lk[s, r] = sigma_kl[r, s]
    for k, l in ((0, 1), (1, 2), (0, 2)):
        s[..., l, k, :, :] = np.swapaxes(s[..., k, l, :, :], -1, -2)
    return s


def example1_B(g_plus, g_minus) -> np.ndarray:
    gp = np.asarray(g_plus, dtype=float)
    gm = np.asarray(g_minus, dtype=float)
    lead = np.broadcast_shapes(gp.shape, gm.shape)
    B = np.zeros(lead + (3, 3))
    B[..., 0, 0] = 1 - gm
    B[..., 0, 1] = gm * (1 - gm)
    B[..., 0, 2] = gm ** 2
    B[..., 1, 0] = gp
    B[..., 1, 1] = 1 - gp - gm
    B[..., 1, 2] = gm
    B[..., 2, 0] = gp ** 2
    B[..., 2, 1] = gp * (1 - gp)
    B[..., 2, 2] = 1 - gp
    return B


def example1_eta(g_plus, g_minus, C=None) -> np.ndarray:
    """Mutation matrix ``B + C`` with the row sums of ``C`` taken off the diagonal."""
    B = example1_B(g_plus, g_minus)
    if C is None:
        return B
    C = np.asarray(C, dtype=float)
    C = C.copy()
    idx = np.arange(3)
    C[..., idx, idx] -= C.sum(axis=-1)
    eta = B + C
    if np.any(eta < -TOLERANCES["table"]):
        bad = np.argwhere(eta < -TOLERANCES["table"])[0][-2:]
        raise ValueError(f"eta cell ({bad[0] + 1},{bad[1] + 1}) negative after adding C")
    if np.any(np.abs(eta.sum(axis=-1) - 1) > 1e-12):
        raise ValueError("eta row sum differs from 1 after adding C")
    return np.maximum(eta, 0.0)


class Example1Model(TransitionModel):
    """Sentiment-driven post-match type changes with a drifting mutation matrix.

    ``F`` and ``C`` entries are driver names (resolved in the scenario) or
    constants.  Matching is ``theta_kl = theta_level * p_lJ``; break-up has a
    constant probability ``xi`` and separating agents keep their types.
    """

    def __init__(self, F: Optional[Mapping[str, object]] = None, C: Optional[Mapping[str, object]] = None,
                 theta_level: Union[str, float] = 0.5, xi: float = 0.3,
                 f: Callable = power_sentiment, g: Callable = power_sentiment):
        self.F = dict(F or {})
        self.C = dict(C or {})
        self.theta_level = theta_level
        self.xi = float(xi)
        self.f = f
        self.g = g

    @staticmethod
    def _diff(p):
        fr = np.asarray(p, dtype=float).sum(axis=-1)
        return fr[..., 0] - fr[..., 2]

    def mutation(self, scn, n, p):
        x = self._diff(p)
        gp, gm = self.g(np.maximum(x, 0)), self.g(np.maximum(-x, 0))
        if self.C:
            lead = np.shape(p)[:-2]
            C = np.zeros(lead + (3, 3))
            for key, src in self.C.items():
                i, j = int(key[0]) - 1, int(key[1]) - 1
                C[..., i, j] = _driver_value(scn, src)
            return example1_eta(gp, gm, C)
        return example1_eta(gp, gm) * np.ones(np.shape(p)[:-2] + (1, 1))

    def matching(self, scn, n, p):
        pJ = np.asarray(p, dtype=float)[..., -1]
        lvl = np.asarray(_driver_value(scn, self.theta_level), dtype=float)
        return lvl[..., None, None] * pJ[..., None, :] * np.ones(3)[:, None]

    def breakup(self, scn, n, p):
        x = self._diff(p)
        fp, fm = self.f(np.maximum(x, 0)), self.f(np.maximum(-x, 0))
        F = {k: _driver_value(scn, v) for k, v in self.F.items()}
        sigma = example1_sigma(fp, fm, F)
        lead = np.shape(p)[:-2]
        sigma = np.broadcast_to(sigma, lead + (3, 3, 3, 3)).copy()
        xi = np.full(lead + (3, 3), self.xi)
        vs = np.broadcast_to(keep_type_varsigma(3), lead + (3, 3, 3)).copy()
        return xi, sigma, vs


# ----------------------------------------------------------------------------
# Immediate break-up family (arbitrage example and simulation study)
# ----------------------------------------------------------------------------

class ImmediateBreakupModel(TransitionModel):
    """Mutation ``eta_ij = eta~_ij + f_ij(p_1J - p_3J)``, matching ``theta_il = theta * p_lJ``,
    certain break-up with ``varsigma_il[l] = varsigma~_il + g_ill(.)`` and residual on ``i``.

    Subclasses supply the scenario-driven pieces through ``eta_tilde``,
    ``theta_level`` and ``varsigma_tilde`` (all ``(..., 3, 3)`` or ``(...)``).
    The break-up sentiment argument is the optimistic-minus-pessimistic
    fraction of the evaluation distribution; with immediate break-up this equals
    the post-mutation unmatched difference.
    """

    def __init__(self, f_scale: float = 1.0 / 3.0, f_power: float = 0.4):
        self.f_scale = f_scale
        self.f_power = f_power

    def eta_tilde(self, scn, n, lead) -> np.ndarray:
        raise NotImplementedError

    def theta_level(self, scn, n, lead) -> np.ndarray:
        raise NotImplementedError

    def varsigma_tilde(self, scn, n, lead) -> np.ndarray:
        raise NotImplementedError

    def f_matrix(self, x):
        return sentiment_matrix(x, self.f_scale, self.f_power)

    def mutation(self, scn, n, p):
        p = np.asarray(p, dtype=float)
        x = p[..., 0, -1] - p[..., 2, -1]
        off = self.eta_tilde(scn, n, p.shape[:-2]) + self.f_matrix(x)
        return _with_residual_diagonal(off, "eta")

    def matching(self, scn, n, p):
        p = np.asarray(p, dtype=float)
        pJ = p[..., -1]
        lvl = np.asarray(self.theta_level(scn, n, p.shape[:-2]), dtype=float)
        return lvl[..., None, None] * pJ[..., None, :] * np.ones(3)[:, None]

    def breakup_increments(self, scn, n, p) -> np.ndarray:
        """``s_il = varsigma~_il + g_ill(x)`` for ``i != l`` (zero diagonal)."""
        p = np.asarray(p, dtype=float)
        fr = p.sum(axis=-1)
        x = fr[..., 0] - fr[..., 2]
        s = self.varsigma_tilde(scn, n, p.shape[:-2]) + self.f_matrix(x)
        idx = np.arange(3)
        s[..., idx, idx] = 0.0
        if np.any(s > 1 + TOLERANCES["table"]) or np.any(s < -TOLERANCES["table"]):
            raise ValueError("varsigma increment outside [0, 1]")
        return s

    def breakup(self, scn, n, p):
        p = np.asarray(p, dtype=float)
        lead = p.shape[:-2]
        s = self.breakup_increments(scn, n, p)
        vs = np.zeros(lead + (3, 3, 3))
        for i in range(3):
            for l in range(3):
                if i == l:
                    vs[..., i, l, i] = 1.0
                else:
                    vs[..., i, l, l] = s[..., i, l]
                    vs[..., i, l, i] = 1.0 - s[..., i, l]
        xi = np.ones(lead + (3, 3))
        sigma = np.broadcast_to(keep_pair_sigma(3), lead + (3, 3, 3, 3)).copy()
        return xi, sigma, vs


def _eta_key(i, j):
    return f"Z_eta_{i}{j}"


def _vs_key(i, j):
    return f"Z_vs_{i}{j}"


class SimulationStudyModel(ImmediateBreakupModel):
    """Scenario-driven immediate break-up model used for the averaged-bubble experiments.

    Drivers (raw lattice values in the scenario): ``Z_theta`` (matching level
    ``(2/pi) arctan``), ``Z_eta_ij`` and ``Z_vs_ij`` (squashed by ``eta_scale *
    (2/pi) arctan``, default scale 1/4).
    """

    def __init__(self, eta_scale: float = 0.25, theta_driver: str = "Z_theta", **kw):
        super().__init__(**kw)
        self.eta_scale = eta_scale
        self.theta_driver = theta_driver

    @staticmethod
    def driver_names():
        names = ["Z_theta"]
        names += [_eta_key(i, j) for i in (1, 2, 3) for j in (1, 2, 3)]
        names += [_vs_key(i, j) for i in (1, 2, 3) for j in (1, 2, 3)]
        return names

    def _squash_grid(self, scn, key, lead):
        out = np.zeros(lead + (3, 3))
        for i in range(3):
            for j in range(3):
                if i != j:
                    out[..., i, j] = self.eta_scale * arctan_unit(scn[key(i + 1, j + 1)])
        return out

    def eta_tilde(self, scn, n, lead):
        return self._squash_grid(scn, _eta_key, lead)

    def varsigma_tilde(self, scn, n, lead):
        return self._squash_grid(scn, _vs_key, lead)

    def theta_level(self, scn, n, lead):
        return np.broadcast_to(arctan_unit(scn[self.theta_driver]), lead)


@dataclass
class ArbitrageModelParams:
    """Two-state parameters; each entry is a scalar or a length-N array over periods.

    Keys of ``eta`` are ``'13', '31', '21', '23'`` and of ``varsigma`` ``'13', '31'``;
    each value is a pair ``(state 1, state 2)``.
    """

    theta: Tuple[object, object] = (0.0, 0.0)
    eta: Dict[str, Tuple[object, object]] = field(default_factory=dict)
    varsigma: Dict[str, Tuple[object, object]] = field(default_factory=dict)

    def __post_init__(self):
        for name, pair in [("theta", self.theta)] + [(f"eta{k}", v) for k, v in self.eta.items()] \
                + [(f"varsigma{k}", v) for k, v in self.varsigma.items()]:
            for v in pair:
                a = np.asarray(v, dtype=float)
                if np.any(a < 0) or np.any(a > 0.5):
                    raise ValueError(f"parameter {name} outside [0, 1/2]")
        for k in self.eta:
            if k not in ("13", "31", "21", "23"):
                raise KeyError(f"eta index {k} not part of the two-state example")
        for k in self.varsigma:
            if k not in ("13", "31"):
                raise KeyError(f"varsigma index {k} not part of the two-state example")

    @staticmethod
    def _pick(pair, state, n):
        a1 = np.asarray(pair[0], dtype=float)
        a2 = np.asarray(pair[1], dtype=float)
        v1 = a1[n - 1] if a1.ndim else a1
        v2 = a2[n - 1] if a2.ndim else a2
        return np.where(np.asarray(state) == 1, v1, v2)


class ArbitrageModel(ImmediateBreakupModel):
    """Two-state-per-period immediate break-up model.

    The scenario entry ``state_key`` (values 1 or 2) selects between the two
    parameter sets at every period.
    """

    def __init__(self, params: ArbitrageModelParams, state_key: str = "omega", **kw):
        super().__init__(**kw)
        self.params = params
        self.state_key = state_key

    def _state(self, scn, lead):
        return np.broadcast_to(np.asarray(scn[self.state_key]), lead)

    def eta_tilde(self, scn, n, lead):
        st = self._state(scn, lead)
        out = np.zeros(lead + (3, 3))
        for key, pair in self.params.eta.items():
            out[..., int(key[0]) - 1, int(key[1]) - 1] = ArbitrageModelParams._pick(pair, st, n)
        return out

    def varsigma_tilde(self, scn, n, lead):
        st = self._state(scn, lead)
        out = np.zeros(lead + (3, 3))
        for key, pair in self.params.varsigma.items():
            out[..., int(key[0]) - 1, int(key[1]) - 1] = ArbitrageModelParams._pick(pair, st, n)
        return out

    def theta_level(self, scn, n, lead):
        return ArbitrageModelParams._pick(self.params.theta, self._state(scn, lead), n)


def arbitrage_model_tables(params: ArbitrageModelParams, state: int, k: int, d,
                           state_key: str = "omega") -> ProbabilityTable:
    """All tables of the two-state model at period ``k`` evaluated at ``d``."""
    return ArbitrageModel(params, state_key).tables({state_key: state}, k, d)


# ----------------------------------------------------------------------------
# Memory-augmented type space
# ----------------------------------------------------------------------------

def memory_type_encode(n_o: int, n_n: int, n_p: int, view: int, N: int) -> int:
    """Encode met-counts and current view as ``n_o + n_n B + n_p B^2 + (v-1) B^3``, ``B = N+1``."""
    for c in (n_o, n_n, n_p):
        if not 0 <= c <= N:
            raise ValueError(f"count {c} outside 0..{N}")
    if view not in (1, 2, 3):
        raise ValueError("view must be 1, 2 or 3")
    B = N + 1
    return n_o + n_n * B + n_p * B ** 2 + (view - 1) * B ** 3


def memory_type_decode(k: int, N: int) -> Tuple[int, int, int, int]:
    B = N + 1
    if not 0 <= k < 3 * B ** 3:
        raise ValueError(f"type {k} outside 0..{3 * B ** 3 - 1}")
    view, rest = divmod(k, B ** 3)
    n_p, rest = divmod(rest, B ** 2)
    n_n, n_o = divmod(rest, B)
    return n_o, n_n, n_p, view + 1


class MemoryModel(TransitionModel):
    """Types carry the number of optimistic/neutral/pessimistic agents met so far.

    View dynamics follow :class:`Example1Model`; after a match each agent's
    count for its partner's view increases by one (capped at ``N``).  The
    exogenous part of a view change towards the partner's view is weighted by
    the share of previously met agents holding that view (weight 1 before the
    first meeting); the lost mass stays on the keep-both-views cell.  The table
    sizes grow as ``(3 (N+1)^3)^4``, so only very short horizons are practical.
    """

    def __init__(self, N: int, base: Optional[Example1Model] = None):
        self.N = int(N)
        self.B = self.N + 1
        self.K = 3 * self.B ** 3
        self.base = base or Example1Model()
        self.decoded = [memory_type_decode(k, self.N) for k in range(self.K)]
        self.view = np.array([d[3] - 1 for d in self.decoded])

    def fraction_difference(self, p):
        vf = self.view_fractions(p)
        return vf[..., 0] - vf[..., 2]

    def initial_distribution(self, view_fractions) -> np.ndarray:
        """All agents unmatched with no meetings yet, split by view."""
        p = np.zeros((self.K, self.K + 1))
        for v in range(3):
            p[memory_type_encode(0, 0, 0, v + 1, self.N), -1] = view_fractions[v]
        return p

    def view_fractions(self, p):
        fr = np.asarray(p, dtype=float).sum(axis=-1)
        out = np.zeros(fr.shape[:-1] + (3,))
        for v in range(3):
            out[..., v] = fr[..., self.view == v].sum(axis=-1)
        return out

    def _view_distribution(self, p):
        vf = self.view_fractions(p)
        d = np.zeros(vf.shape[:-1] + (3, 4))
        d[..., :, -1] = vf
        return d

    def mutation(self, scn, n, p):
        p = np.asarray(p, dtype=float)
        ev = self.base.mutation(scn, n, self._view_distribution(p))
        V = self.view
        eta = np.zeros(p.shape[:-2] + (self.K, self.K))
        for k, (no, nn, npp, v) in enumerate(self.decoded):
            for w in range(3):
                j = memory_type_encode(no, nn, npp, w + 1, self.N)
                eta[..., k, j] = ev[..., v - 1, w]
        return eta

    def matching(self, scn, n, p):
        p = np.asarray(p, dtype=float)
        pJ = p[..., -1]
        lvl = np.asarray(_driver_value(scn, self.base.theta_level), dtype=float)
        return lvl[..., None, None] * pJ[..., None, :] * np.ones(self.K)[:, None]

    def _bump(self, k, partner_view):
        no, nn, npp, v = self.decoded[k]
        c = [no, nn, npp]
        c[partner_view] = min(c[partner_view] + 1, self.N)
        return c

    def _breakup_maps(self):
        """Static index maps: for every (k1, k2) and view outcome (r, s) the target types."""
        if getattr(self, "_maps", None) is None:
            K = self.K
            rows = []
            for k1 in range(K):
                v1 = int(self.view[k1])
                for k2 in range(K):
                    v2 = int(self.view[k2])
                    c1 = self._bump(k1, v2)
                    c2 = self._bump(k2, v1)
                    for r in range(3):
                        for s in range(3):
                            keep = r == v1 and s == v2
                            w = self._weight(k1, v2) if r != v1 else self._weight(k2, v1)
                            t1 = memory_type_encode(*c1, r + 1, self.N)
                            t2 = memory_type_encode(*c2, s + 1, self.N)
                            rows.append((k1, k2, t1, t2, v1, v2, r, s, w, keep))
            a = np.array(rows, dtype=float)
            self._maps = {
                "flat": ((a[:, 0] * K + a[:, 1]) * K + a[:, 2]) * K + a[:, 3],
                "pair": a[:, 0] * K + a[:, 1],
                "src": tuple(a[:, j].astype(int) for j in (4, 5, 6, 7)),
                "w": a[:, 8],
                "keep": a[:, 9].astype(bool),
            }
            self._maps["flat"] = self._maps["flat"].astype(np.int64)
            self._maps["pair"] = self._maps["pair"].astype(np.int64)
        return self._maps

    def breakup(self, scn, n, p):
        p = np.asarray(p, dtype=float)
        lead = p.shape[:-2]
        vd = self._view_distribution(p)
        xi_v, sig_v, _ = self.base.breakup(scn, n, vd)
        fr = vd.sum(axis=-1)
        x = fr[..., 0] - fr[..., 2]
        fp, fm = self.base.f(np.maximum(x, 0)), self.base.f(np.maximum(-x, 0))
        exo = example1_sigma(fp, fm, {}) * np.ones(lead + (1, 1, 1, 1))
        mp = self._breakup_maps()
        K = self.K
        v1, v2, r, s = mp["src"]
        base = sig_v[..., v1, v2, r, s]
        sent = exo[..., v1, v2, r, s]
        # the exogenous part of a view change is scaled by the memory weight
        val = sent + mp["w"] * (base - sent)
        val = np.where(mp["keep"], 0.0, val)
        moved = np.zeros(lead + (K * K,))
        np.add.at(moved.reshape(-1, K * K), (slice(None), mp["pair"]), val.reshape(-1, val.shape[-1]))
        val = np.where(mp["keep"], 1.0 - moved[..., mp["pair"]], val)
        sigma = np.zeros(lead + (K ** 4,))
        sigma[..., mp["flat"]] = val
        sigma = sigma.reshape(lead + (K, K, K, K))
        xi = np.broadcast_to(xi_v[..., :1, :1], lead + (K, K)).copy()
        vs = np.broadcast_to(keep_type_varsigma(K), lead + (K, K, K)).copy()
        return xi, sigma, vs

    def _weight(self, k, partner_view):
        no, nn, npp, _ = self.decoded[k]
        total = no + nn + npp
        if total == 0:
            return 1.0
        return (no, nn, npp)[partner_view] / total
