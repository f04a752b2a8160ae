import numpy as np
import pytest

from bubblematch.core import keep_pair_sigma, keep_type_varsigma
from bubblematch.models import (ArbitrageModel, ArbitrageModelParams, Example1Model, MemoryModel,
                                ProportionalMatchingModel, SimulationStudyModel)


def random_distribution(rng, K=3, matched_share=None):
    """Symmetric extended distribution with a random matched share."""
    share = rng.uniform(0, 0.9) if matched_share is None else matched_share
    A = rng.exponential(size=(K, K))
    A = A + A.T
    A *= share / A.sum()
    u = rng.dirichlet(np.ones(K)) * (1 - share)
    d = np.concatenate([A, u[:, None]], axis=1)
    return d / d.sum()


def unmatched(fr):
    fr = np.asarray(fr, dtype=float)
    d = np.zeros((fr.size, fr.size + 1))
    d[:, -1] = fr
    return d


def random_study_scenario(rng):
    scn = {name: rng.lognormal(np.log(0.3), 1.0) for name in SimulationStudyModel.driver_names()}
    return scn


def random_example1(rng):
    F = {k: rng.uniform(0, 0.08) for k in ("121", "122", "232", "233", "131", "132", "133")}
    C = {"12": rng.uniform(0, 0.05), "21": rng.uniform(0, 0.05), "13": rng.uniform(0, 0.02)}
    return Example1Model(F=F, C=C, theta_level=rng.uniform(0, 1), xi=rng.uniform(0, 1))


def random_arbitrage_params(rng):
    two = lambda hi=0.5: (rng.uniform(0, hi), rng.uniform(0, hi))
    # the neutral row carries two increments, so keep it below one in total
    return ArbitrageModelParams(
        theta=two(),
        eta={"13": two(), "31": two(), "21": two(0.3), "23": two(0.3)},
        varsigma={k: (rng.uniform(0, 0.25), rng.uniform(0, 0.25)) for k in ("13", "31")},
    )


def bundled_draw(rng, name):
    """(model, scenario state, distribution) for one randomized draw of a bundled model."""
    if name == "simulation-study":
        return SimulationStudyModel(), random_study_scenario(rng), random_distribution(rng)
    if name == "example1":
        return random_example1(rng), {}, random_distribution(rng)
    if name == "arbitrage":
        state = int(rng.integers(1, 3))
        return ArbitrageModel(random_arbitrage_params(rng)), {"omega": state}, random_distribution(rng)
    if name == "memory":
        m = MEMORY
        return m, {}, random_distribution(rng, K=m.K, matched_share=rng.uniform(0, 0.5))
    if name == "proportional":
        return ProportionalMatchingModel.random(rng), {}, random_distribution(rng)
    raise KeyError(name)


MEMORY = MemoryModel(1, Example1Model(F={"121": 0.05, "233": 0.05}, theta_level=0.4, xi=0.3))
BUNDLED = ["simulation-study", "example1", "arbitrage", "memory"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
