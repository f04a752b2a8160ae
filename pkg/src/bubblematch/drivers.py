"""Exogenous scenario drivers: recombining binomial lattices and two-state components.

Seed derivation
---------------
Trajectory ``i`` of a run with base seed ``s`` draws from
``Generator(PCG64(SeedSequence(s, spawn_key=(i,))))``.  Per period ``n = 1..N``
it consumes one row of ``D`` uniforms, one per driver in declaration order.  A
driver moves up in period ``n`` iff its uniform is below that period's up
probability, so the stream is a pure function of ``(s, i)`` and a tilted
measure reuses exactly the same uniforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import TimeGrid

LINEAR_DT = "linear-dt"
SQUARE_ROOT = "square-root"


@dataclass(frozen=True)
class BinomialDriverSpec:
    """Driftless recombining lattice ``x^n = x^{n-1} * u^{+-1}``."""

    x0: float
    sigma: float
    convention: str = LINEAR_DT

    def __post_init__(self):
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")
        if self.sigma < 0:
            raise ValueError("volatility must be non-negative")
        if self.convention not in (LINEAR_DT, SQUARE_ROOT):
            raise ValueError(f"unknown up-factor convention {self.convention!r}")


@dataclass(frozen=True)
class TwoStateSpec:
    """Per-period state in {1, 2}; state 1 has probability ``prob_state1``."""

    prob_state1: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.prob_state1 < 1.0:
            raise ValueError("state probability must lie in (0, 1)")


def lattice_params(spec: BinomialDriverSpec, grid: TimeGrid) -> Tuple[float, float, float]:
    """Up factor, down factor and up probability of the lattice.

    ``d = 1/u`` and ``p = (1 - d)/(u - d)``.  A zero volatility gives the
    constant lattice with ``p = 1/2`` by convention.
    """
    if spec.sigma < 0:
        raise ValueError("volatility must be non-negative")
    dt = grid.T / grid.N
    if spec.sigma == 0:
        return 1.0, 1.0, 0.5
    if spec.convention == LINEAR_DT:
        u = math.exp(spec.sigma * dt)
    else:
        u = math.exp(spec.sigma * math.sqrt(dt))
    d = 1.0 / u
    return u, d, (1.0 - d) / (u - d)


@dataclass(frozen=True)
class SeedScheme:
    base_seed: int = 0

    def generator(self, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.base_seed), spawn_key=(int(index),))
        return np.random.Generator(np.random.PCG64(ss))

    def agent_generator(self, index: int) -> np.random.Generator:
        """Separate stream for the agent-level randomness of trajectory ``index``."""
        ss = np.random.SeedSequence(int(self.base_seed), spawn_key=(int(index), 1))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass
class ScenarioPath:
    """One realisation of all exogenous drivers on the grid.

    ``values[name]`` has length ``N+1`` (raw lattice values, ``t_0..t_N``);
    ``states[name]`` holds two-state components (entry 0 is unused and set to 0).
    Arrays may carry a leading batch dimension, in which case ``index`` is the
    sequence of trajectory indices.
    """

    values: Dict[str, np.ndarray]
    states: Dict[str, np.ndarray] = field(default_factory=dict)
    seed: Optional[int] = None
    index: object = None
    horizon: Optional[int] = None  # only consulted when the path carries no drivers

    @property
    def N(self) -> int:
        arrs = list(self.values.values()) + list(self.states.values())
        if not arrs:
            if self.horizon is None:
                raise ValueError("scenario without drivers needs an explicit horizon")
            return self.horizon
        return arrs[0].shape[-1] - 1

    def at(self, n: int) -> Dict[str, np.ndarray]:
        out = {k: v[..., n] for k, v in self.values.items()}
        out.update({k: v[..., n] for k, v in self.states.items()})
        return out

    def trajectory(self, j: int) -> "ScenarioPath":
        idx = self.index[j] if self.index is not None else None
        return ScenarioPath(
            {k: v[j] for k, v in self.values.items()},
            {k: v[j] for k, v in self.states.items()},
            self.seed,
            idx,
        )

    def to_csv(self) -> str:
        names = list(self.values) + list(self.states)
        lines = ["period," + ",".join(names)]
        cols = [self.values[k] for k in self.values] + [self.states[k] for k in self.states]
        for n in range(self.N + 1):
            lines.append(f"{n}," + ",".join(f"{float(c[n]):.15g}" for c in cols))
        return "\n".join(lines) + "\n"


class ScenarioSampler:
    """Samples scenario paths for named drivers, optionally under a tilted measure.

    ``overrides`` maps ``(driver name, period)`` to an up probability (binomial
    drivers) or a state-1 probability (two-state components).
    """

    def __init__(self, specs: Mapping[str, object], grid: TimeGrid, seeds: SeedScheme,
                 overrides: Optional[Mapping[Tuple[str, int], float]] = None):
        self.specs = dict(specs)
        self.grid = grid
        self.seeds = seeds
        self.names = list(self.specs)
        self.binomial = [n for n in self.names if isinstance(self.specs[n], BinomialDriverSpec)]
        self.two_state = [n for n in self.names if isinstance(self.specs[n], TwoStateSpec)]
        N, D = grid.N, len(self.names)
        self.thresholds = np.empty((N, D))
        self.log_u = np.zeros(D)
        self.x0 = np.ones(D)
        for j, name in enumerate(self.names):
            spec = self.specs[name]
            if isinstance(spec, BinomialDriverSpec):
                u, _, p = lattice_params(spec, grid)
                self.thresholds[:, j] = p
                self.log_u[j] = math.log(u)
                self.x0[j] = spec.x0
            elif isinstance(spec, TwoStateSpec):
                self.thresholds[:, j] = spec.prob_state1
            else:
                raise TypeError(f"driver {name!r}: unsupported spec {spec!r}")
        for (name, period), prob in (overrides or {}).items():
            if name not in self.specs:
                raise KeyError(f"override references unknown driver {name!r}")
            if not 1 <= period <= N:
                raise ValueError(f"override period {period} outside 1..{N}")
            if not 0.0 < prob < 1.0:
                raise ValueError(f"override probability {prob} must lie in (0, 1)")
            self.thresholds[period - 1, self.names.index(name)] = prob
        self.overrides = dict(overrides or {})

    def tilted(self, overrides: Mapping[Tuple[str, int], float]) -> "ScenarioSampler":
        merged = dict(self.overrides)
        merged.update(overrides)
        return ScenarioSampler(self.specs, self.grid, self.seeds, merged)

    def uniforms(self, index: int, periods: Optional[int] = None) -> np.ndarray:
        periods = self.grid.N if periods is None else periods
        return self.seeds.generator(index).random((periods, len(self.names)))

    def sample_batch(self, indices: Sequence[int], periods: Optional[int] = None) -> ScenarioPath:
        """Paths for several trajectory indices; only the first ``periods`` steps are drawn."""
        periods = self.grid.N if periods is None else int(periods)
        idx = np.asarray(list(indices), dtype=np.int64)
        P, D = idx.size, len(self.names)
        up = np.empty((P, periods, D), dtype=bool)
        thr = self.thresholds[:periods]
        for j, i in enumerate(idx):
            up[j] = self.uniforms(int(i), periods) < thr
        return self._assemble(up, idx)

    def _assemble(self, up: np.ndarray, idx: np.ndarray) -> ScenarioPath:
        P, periods, D = up.shape
        values, states = {}, {}
        steps = np.where(up, 1, -1).astype(np.int32)
        expo = np.zeros((P, periods + 1, D), dtype=np.int32)
        np.cumsum(steps, axis=1, out=expo[:, 1:, :])
        for j, name in enumerate(self.names):
            if name in self.two_state:
                st = np.zeros((P, periods + 1), dtype=np.int8)
                st[:, 1:] = np.where(up[:, :, j], 1, 2)
                states[name] = st
            else:
                values[name] = self.x0[j] * np.exp(self.log_u[j] * expo[:, :, j])
        return ScenarioPath(values, states, self.seeds.base_seed, idx)

    def sample(self, index: int) -> ScenarioPath:
        return self.sample_batch([index]).trajectory(0)


def sample_scenario(specs: Mapping[str, object], seeds: SeedScheme, index: int,
                    grid: TimeGrid) -> ScenarioPath:
    return ScenarioSampler(specs, grid, seeds).sample(index)


def tilt_scenario_measure(specs: Mapping[str, object], overrides: Mapping[Tuple[str, int], float],
                          grid: TimeGrid, seeds: SeedScheme) -> ScenarioSampler:
    return ScenarioSampler(specs, grid, seeds, overrides)


def constant_scenario(values: Mapping[str, float], N: int,
                      states: Optional[Mapping[str, int]] = None) -> ScenarioPath:
    """A deterministic path holding every driver at a fixed value."""
    v = {k: np.full(N + 1, float(x)) for k, x in values.items()}
    s = {}
    for k, x in (states or {}).items():
        a = np.full(N + 1, int(x), dtype=np.int8)
        a[0] = 0
        s[k] = a
    return ScenarioPath(v, s, horizon=N)
