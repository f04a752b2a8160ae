"""Experiment configuration, chunked Monte Carlo orchestration and CSV output.

Trajectories are processed in fixed chunks of ``chunk_size`` consecutive
indices.  Each chunk returns streaming statistics (count, mean, sum of squared
deviations) that are merged in chunk order, so results do not depend on how
many worker processes ran the chunks.
"""

from __future__ import annotations

import copy
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .core import TimeGrid
from .distribution import evolve
from .drivers import (LINEAR_DT, BinomialDriverSpec, ScenarioSampler, SeedScheme, TwoStateSpec)
from .market import bubble_paths
from .models import (ArbitrageModel, ArbitrageModelParams, Example1Model, MemoryModel,
                     SimulationStudyModel, arctan_unit)
from .population import AgentPopulation, simulate_population

ENGINES = ("distribution", "population")
MODELS = ("simulation-study", "example1", "arbitrage", "memory")


def study_drivers(Theta0: float = 5.0, eta0: float = 0.2, theta0: float = 0.5) -> Dict[str, dict]:
    """Driver table of the averaged-bubble study: 22 lattices, initial values are lattice values."""
    d = {
        "Lambda": {"x0": 1.0, "sigma": 0.3},
        "M": {"x0": 1.0, "sigma": 0.3},
        "Z_Theta": {"x0": Theta0, "sigma": 0.2},
        "Z_theta": {"x0": theta0, "sigma": 0.2},
    }
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            d[f"Z_eta_{i}{j}"] = {"x0": eta0, "sigma": 0.4}
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            d[f"Z_vs_{i}{j}"] = {"x0": eta0, "sigma": 0.4}
    return d


@dataclass
class ExperimentConfig:
    N: int = 100
    T: float = 1.0
    engine: str = "distribution"
    population_size: int = 100_000
    p0: List[float] = field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])
    model: Dict[str, object] = field(default_factory=lambda: {"name": "simulation-study"})
    drivers: Dict[str, dict] = field(default_factory=study_drivers)
    convention: str = LINEAR_DT
    kappa: float = 0.01
    F0: float = 1.0
    Theta: str = "Z_Theta"
    squash_theta: bool = True
    x0_zero: bool = False
    paths: int = 1
    seed: int = 0
    chunk_size: int = 2000
    workers: int = 1
    store_trajectories: int = 10
    periods: Optional[int] = None
    out: Optional[str] = None
    tilt: Dict[str, float] = field(default_factory=dict)

    # -- validation ---------------------------------------------------------
    def validate(self) -> List[str]:
        errs = []
        if self.N < 1 or self.T <= 0:
            errs.append("grid needs N >= 1 and T > 0")
        if self.engine not in ENGINES:
            errs.append(f"engine must be one of {ENGINES}")
        if self.paths < 1:
            errs.append("paths must be >= 1")
        if self.chunk_size < 1 or self.workers < 1:
            errs.append("chunk_size and workers must be >= 1")
        p0 = np.asarray(self.p0, dtype=float)
        if p0.ndim != 1 or np.any(p0 < 0) or abs(p0.sum() - 1) > 1e-12:
            errs.append("initial fractions must be non-negative and sum to 1")
        name = self.model.get("name")
        if name not in MODELS:
            errs.append(f"model name must be one of {MODELS}")
        for key in self.referenced_drivers():
            if key not in self.drivers:
                errs.append(f"driver {key!r} is referenced but not defined")
        for key, spec in self.drivers.items():
            try:
                _driver_spec(spec, self.convention)
            except (ValueError, TypeError) as e:
                errs.append(f"driver {key!r}: {e}")
        for key in self.tilt:
            drv, _, per = key.rpartition("@")
            if drv not in self.drivers or not per.isdigit():
                errs.append(f"tilt entry {key!r} must read 'driver@period' with a defined driver")
        if self.kappa < 0:
            errs.append("kappa must be non-negative")
        if self.periods is not None and not 1 <= self.periods <= self.N:
            errs.append("periods must lie in 1..N")
        return errs

    def check(self) -> "ExperimentConfig":
        errs = self.validate()
        if errs:
            raise ValueError("invalid configuration: " + "; ".join(errs))
        return self

    def referenced_drivers(self) -> List[str]:
        refs = ["Lambda", "M", self.Theta]
        name = self.model.get("name")
        if name == "simulation-study":
            refs += SimulationStudyModel.driver_names()
        elif name == "arbitrage":
            refs.append(self.model.get("state_driver", "omega"))
        elif name in ("example1", "memory"):
            for src in list(self.model.get("F", {}).values()) + list(self.model.get("C", {}).values()):
                if isinstance(src, str):
                    refs.append(src)
            if isinstance(self.model.get("theta_level"), str):
                refs.append(self.model["theta_level"])
        return refs

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(dict(d)))

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def replace(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(d)

    # -- derived objects ----------------------------------------------------
    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.N, self.T)

    def tilt_overrides(self) -> Dict[Tuple[str, int], float]:
        out = {}
        for key, prob in self.tilt.items():
            drv, _, per = key.rpartition("@")
            out[(drv, int(per))] = float(prob)
        return out

    def sampler(self) -> ScenarioSampler:
        specs = {k: _driver_spec(v, self.convention) for k, v in self.drivers.items()}
        return ScenarioSampler(specs, self.grid, SeedScheme(self.seed), self.tilt_overrides())

    def build_model(self):
        return build_model(self.model)

    def initial_distribution(self, model=None) -> np.ndarray:
        p0 = np.asarray(self.p0, dtype=float)
        if isinstance(model, MemoryModel):
            return model.initial_distribution(p0)
        d = np.zeros((p0.size, p0.size + 1))
        d[:, -1] = p0
        return d


def _driver_spec(spec: Mapping, convention: str):
    if "prob_state1" in spec:
        return TwoStateSpec(float(spec["prob_state1"]))
    extra = set(spec) - {"x0", "sigma", "convention"}
    if extra:
        raise ValueError(f"unknown driver fields {sorted(extra)}")
    return BinomialDriverSpec(float(spec["x0"]), float(spec["sigma"]), spec.get("convention", convention))


def build_model(m: Mapping):
    m = dict(m)
    name = m.pop("name", None)
    if name == "simulation-study":
        return SimulationStudyModel(**m)
    if name == "example1":
        return Example1Model(**m)
    if name == "arbitrage":
        state_driver = m.pop("state_driver", "omega")
        prm = ArbitrageModelParams(
            theta=tuple(m.get("theta", (0.0, 0.0))),
            eta={k: tuple(v) for k, v in m.get("eta", {}).items()},
            varsigma={k: tuple(v) for k, v in m.get("varsigma", {}).items()},
        )
        return ArbitrageModel(prm, state_driver)
    if name == "memory":
        horizon = int(m.pop("horizon", 1))
        return MemoryModel(horizon, Example1Model(**m))
    raise ValueError(f"unknown model {name!r}")


PRESETS = {
    "figure1": dict(paths=6, seed=1, store_trajectories=6),
    "figure2": dict(paths=100_000, seed=2, store_trajectories=10),
    "figure3": dict(paths=1_000_000, seed=3, p0=[4 / 9, 2 / 9, 1 / 3], x0_zero=True,
                    chunk_size=10_000, store_trajectories=10),
}

FIGURE3_TILT = {"Z_eta_13@1": 0.95, "Z_vs_13@1": 0.95, "Z_eta_31@1": 0.1, "Z_vs_31@1": 0.1}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    return ExperimentConfig(**copy.deepcopy(PRESETS[name]))


# ----------------------------------------------------------------------------
# Streaming statistics
# ----------------------------------------------------------------------------

@dataclass
class RunningStats:
    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, x: np.ndarray) -> "RunningStats":
        mean = x.mean(axis=0)
        return cls(x.shape[0], mean, ((x - mean) ** 2).sum(axis=0))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        return RunningStats(n, mean, m2)

    @property
    def stderr(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


@dataclass
class AggregateReport:
    periods: np.ndarray
    mean_beta: np.ndarray
    stderr_beta: np.ndarray
    mean_pdiff: np.ndarray
    stderr_pdiff: np.ndarray
    paths: int
    wall_seconds: float = 0.0

    @property
    def throughput(self) -> float:
        return self.paths / self.wall_seconds if self.wall_seconds > 0 else float("inf")

    def averages_csv(self) -> str:
        rows = ["period,mean_beta,stderr"]
        for n, m, s in zip(self.periods, self.mean_beta, self.stderr_beta):
            rows.append(f"{int(n)},{m:.15g},{s:.15g}")
        return "\n".join(rows) + "\n"


@dataclass
class ExperimentResult:
    report: AggregateReport
    trajectory_ids: np.ndarray
    beta: np.ndarray       # (stored, periods+1)
    pdiff: np.ndarray

    def trajectories_csv(self) -> str:
        rows = ["period,trajectory,beta,p1_minus_p3"]
        for j, tid in enumerate(self.trajectory_ids):
            for n in range(self.beta.shape[1]):
                rows.append(f"{n},{int(tid)},{self.beta[j, n]:.15g},{self.pdiff[j, n]:.15g}")
        return "\n".join(rows) + "\n"


# ----------------------------------------------------------------------------
# Orchestration
# ----------------------------------------------------------------------------

def _simulate_chunk(cfg: ExperimentConfig, start: int, stop: int):
    periods = cfg.periods or cfg.N
    sampler = cfg.sampler()
    model = cfg.build_model()
    idx = np.arange(start, stop)
    scn = sampler.sample_batch(idx, periods)
    p0 = cfg.initial_distribution(model)
    if cfg.engine == "distribution":
        ev = evolve(p0, model, scn, periods=periods)
        pdiff = model.fraction_difference(ev.p)
    else:
        rows = []
        for j, i in enumerate(idx):
            rng = sampler.seeds.agent_generator(int(i))
            pop = AgentPopulation.from_distribution(cfg.population_size, p0, rng)
            _, ps = simulate_population(pop, model, scn.trajectory(j), rng, periods)
            rows.append(model.fraction_difference(ps))
        pdiff = np.stack(rows)
    v = scn.values
    Theta = arctan_unit(v[cfg.Theta]) if cfg.squash_theta else v[cfg.Theta]
    dt = cfg.grid.deltas[:periods]
    beta, _ = bubble_paths(pdiff, v["Lambda"], v["M"], Theta, cfg.kappa, dt, cfg.x0_zero)
    keep = idx < cfg.store_trajectories
    return (RunningStats.of(beta), RunningStats.of(pdiff), idx[keep], beta[keep], pdiff[keep])


def _chunk_task(args):
    cfg_dict, start, stop = args
    return _simulate_chunk(ExperimentConfig.from_dict(cfg_dict), start, stop)


def chunk_bounds(paths: int, chunk_size: int) -> List[Tuple[int, int]]:
    return [(s, min(s + chunk_size, paths)) for s in range(0, paths, chunk_size)]


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None, write: bool = True) -> ExperimentResult:
    """Simulate ``cfg.paths`` trajectories; write CSV files when ``cfg.out`` is set and ``write``."""
    cfg.check()
    workers = cfg.workers if workers is None else workers
    t0 = time.perf_counter()
    tasks = [(cfg.to_dict(), s, e) for s, e in chunk_bounds(cfg.paths, cfg.chunk_size)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_task, tasks))
    else:
        parts = [_chunk_task(t) for t in tasks]
    sb = sp = None
    ids, betas, pdiffs = [], [], []
    for b, p, i, bt, pd in parts:
        sb = b if sb is None else sb.merge(b)
        sp = p if sp is None else sp.merge(p)
        ids.append(i)
        betas.append(bt)
        pdiffs.append(pd)
    wall = time.perf_counter() - t0
    rep = AggregateReport(np.arange(sb.mean.size), sb.mean, sb.stderr, sp.mean, sp.stderr, sb.n, wall)
    res = ExperimentResult(rep, np.concatenate(ids), np.concatenate(betas), np.concatenate(pdiffs))
    if write and cfg.out:
        emit_figure_data(res, cfg.out)
    return res


def run_tilt_experiment(cfg: ExperimentConfig, overrides: Mapping[str, float],
                        workers: Optional[int] = None) -> Tuple[ExperimentResult, ExperimentResult]:
    """Same seeds under the original and the tilted driver law."""
    base = cfg.replace(tilt={}, out=None)
    tilted = cfg.replace(out=None)
    tilted.tilt = {**cfg.tilt, **dict(overrides)}
    return run_experiment(base, workers, write=False), run_experiment(tilted, workers, write=False)


def emit_figure_data(result: ExperimentResult, out_dir: str) -> Tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    tpath = os.path.join(out_dir, "trajectories.csv")
    apath = os.path.join(out_dir, "averages.csv")
    with open(tpath, "w", newline="") as fh:
        fh.write(result.trajectories_csv())
    with open(apath, "w", newline="") as fh:
        fh.write(result.report.averages_csv())
    return tpath, apath
