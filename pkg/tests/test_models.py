import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubblematch.core import validate_table
from bubblematch.distribution import gamma_step
from bubblematch.models import (ArbitrageModel, ArbitrageModelParams, Example1Model, SimulationStudyModel,
                                arbitrage_model_tables, example1_B, example1_eta, example1_sigma,
                                memory_type_decode, memory_type_encode, quarter_arctan, sentiment_f,
                                sentiment_matrix)
from conftest import BUNDLED, MEMORY, bundled_draw, random_distribution, unmatched


def test_sentiment_values():
    assert sentiment_f(0.2, (2, 1)) == pytest.approx(0.17510, abs=5e-6)
    assert sentiment_f(0.2, (3, 1)) == pytest.approx(0.030660, abs=1e-6)
    assert sentiment_f(0.2, (1, 2)) == 0.0
    assert sentiment_f(-0.2, (1, 2)) == pytest.approx(0.17510, abs=5e-6)
    assert sentiment_f(0.0, (3, 2)) == 0.0
    with pytest.raises(ValueError):
        sentiment_f(0.1, (1, 1))


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_sentiment_monotone_and_bounded(a, b):
    lo, hi = min(a, b), max(a, b)
    for kind in [(2, 1), (3, 2), (3, 1)]:
        assert 0 <= sentiment_f(lo, kind) <= sentiment_f(hi, kind) <= 1 / 3
    for kind in [(1, 2), (2, 3), (1, 3)]:
        assert sentiment_f(lo, kind) >= sentiment_f(hi, kind) >= 0


def test_sentiment_matrix_matches_scalar():
    x = np.array([-0.4, 0.0, 0.3])
    m = sentiment_matrix(x)
    for i in range(3):
        for j in range(3):
            if i != j:
                np.testing.assert_allclose(m[:, i, j], sentiment_f(x, (i + 1, j + 1)))


def test_quarter_arctan_bound():
    z = np.array([1e-9, 0.2, 5.0, 1e9])
    assert np.all((quarter_arctan(z) > 0) & (quarter_arctan(z) < 0.25))


def test_example1_sigma_values():
    s = example1_sigma(0.17510, 0.0, {"121": 0.1, "122": 0.05})
    assert s[0, 1, 0, 0] == pytest.approx(0.27510)
    assert s[0, 1, 1, 1] == pytest.approx(0.05)
    assert s[0, 1, 0, 1] == pytest.approx(0.67490)
    assert s[0, 0, 0, 0] == 1.0
    zero = example1_sigma(0.0, 0.0, {})
    assert zero[0, 1, 0, 1] == 1.0 and zero[0, 1, 0, 0] == 0.0


def test_example1_sigma_negative_residual():
    with pytest.raises(ValueError, match="sigma_12"):
        example1_sigma(0.3, 0.3, {"121": 0.5, "122": 0.5})


@given(st.floats(0, 1 / 3), st.floats(0, 1 / 3), st.lists(st.floats(0, 0.1), min_size=7, max_size=7))
def test_example1_sigma_symmetry(fp, fm, Fs):
    F = dict(zip(("121", "122", "232", "233", "131", "132", "133"), Fs))
    s = example1_sigma(fp, fm, F)
    np.testing.assert_array_equal(s, np.transpose(s, (1, 0, 3, 2)))
    np.testing.assert_allclose(s.sum(axis=(2, 3)), 1.0, atol=1e-12)
    # cells outside the listed outcomes are exactly zero
    assert s[0, 1, 1, 0] == 0.0 and s[0, 2, 2, 0] == 0.0 and s[0, 2, 1, 1] == 0.0


def test_example1_eta_values():
    np.testing.assert_array_equal(example1_eta(0.0, 0.0), np.eye(3))
    e = example1_eta(0.2, 0.0)
    np.testing.assert_allclose(e[0], [1, 0, 0])
    np.testing.assert_allclose(e[1], [0.2, 0.8, 0])
    np.testing.assert_allclose(e[2], [0.04, 0.16, 0.8])


def test_example1_eta_row_compensation():
    C = np.zeros((3, 3))
    C[0, 1] = 0.1
    e = example1_eta(0.0, 0.0, C)
    np.testing.assert_allclose(e[0], [0.9, 0.1, 0.0])
    C[2, 0] = 0.9
    with pytest.raises(ValueError, match="negative"):
        example1_eta(0.2, 0.0, C)


def test_example1_model_symmetric_start_is_identity():
    m = Example1Model()
    np.testing.assert_array_equal(m.mutation({}, 1, unmatched([0.3, 0.4, 0.3])), np.eye(3))


def test_arbitrage_tables():
    prm = ArbitrageModelParams(theta=(0.5, 0.1), eta={"13": (0.1, 0.2)})
    d = unmatched([0.3, 0.4, 0.3])
    t = arbitrage_model_tables(prm, 1, 1, d)
    np.testing.assert_array_equal(t.xi, 1.0)
    assert t.theta[0, 1] == pytest.approx(0.2)
    assert t.eta[0, 2] == pytest.approx(0.1)
    assert arbitrage_model_tables(prm, 2, 1, d).eta[0, 2] == pytest.approx(0.2)
    for i in range(3):
        assert t.varsigma[i, i, i] == 1.0
    np.testing.assert_array_equal(arbitrage_model_tables(ArbitrageModelParams(), 1, 1, d).eta, np.eye(3))


def test_arbitrage_params_range():
    with pytest.raises(ValueError):
        ArbitrageModelParams(theta=(0.6, 0.1))
    with pytest.raises(KeyError):
        ArbitrageModelParams(eta={"12": (0.1, 0.1)})
    per_period = ArbitrageModelParams(theta=(np.array([0.1, 0.2]), 0.3))
    m = ArbitrageModel(per_period)
    assert m.theta_level({"omega": 1}, 2, ()) == pytest.approx(0.2)


def test_arbitrage_mandated_zeros():
    d = unmatched([0.5, 0.3, 0.2])
    t = arbitrage_model_tables(ArbitrageModelParams(), 1, 1, d)
    assert t.eta[0, 1] == t.eta[1, 2] == t.eta[0, 2] == 0.0
    assert t.varsigma[0, 2, 2] == t.varsigma[0, 1, 1] == t.varsigma[1, 2, 2] == 0.0
    t = arbitrage_model_tables(ArbitrageModelParams(), 1, 1, unmatched([0.2, 0.3, 0.5]))
    assert t.eta[2, 1] == t.eta[1, 0] == t.eta[2, 0] == 0.0
    assert t.varsigma[2, 0, 0] == t.varsigma[2, 1, 1] == t.varsigma[1, 0, 0] == 0.0


def test_simulation_study_driver_bounds(rng):
    m = SimulationStudyModel()
    scn = {k: 1e6 for k in m.driver_names()}
    eta = m.mutation(scn, 1, unmatched([0.5, 0.2, 0.3]))
    off = eta[~np.eye(3, dtype=bool)]
    assert off.max() <= 0.5 + 1e-12
    assert np.all(np.diag(eta) >= 0)


def test_memory_codec():
    assert memory_type_encode(0, 0, 0, 1, 100) == 0
    assert memory_type_encode(2, 1, 0, 3, 100) == 2_060_705
    assert memory_type_decode(2_060_705, 100) == (2, 1, 0, 3)
    with pytest.raises(ValueError):
        memory_type_encode(101, 0, 0, 1, 100)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = tuple(int(x) for x in rng.integers(0, 101, 3))
        v = int(rng.integers(1, 4))
        k = memory_type_encode(*n, v, 100)
        assert memory_type_decode(k, 100) == n + (v,)
        assert (k // 101 ** 3) + 1 == v


def test_memory_codec_bijection_small():
    N = 2
    ks = {memory_type_encode(a, b, c, v, N) for a in range(3) for b in range(3) for c in range(3) for v in (1, 2, 3)}
    assert ks == set(range(3 * 27))


def test_memory_model_conserves():
    m = MEMORY
    p = m.initial_distribution([0.5, 0.2, 0.3])
    for n in range(1, 4):
        pt, ptt, p = gamma_step(p, m, {}, n)
        assert abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(p[:, :-1], p[:, :-1].T, atol=1e-15)
    # counts never decrease: no mass on types whose counts sum exceeds the number of periods
    counts = np.array([sum(memory_type_decode(k, 1)[:3]) for k in range(m.K)])
    assert np.all(counts <= 3)


@pytest.mark.parametrize("name", BUNDLED + ["proportional"])
def test_bundled_tables_validate(name):
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    for _ in range(20):
        model, scn, p = bundled_draw(rng, name)
        pt = p
        eta = model.mutation(scn, 1, p)
        rep = validate_table(model.tables(scn, 1, p), p)
        # detailed balance is only required at the evaluation distribution of theta
        assert rep.invariants() <= {"detailed balance"}
        assert np.all(eta >= 0)
        np.testing.assert_allclose(eta.sum(axis=-1), 1.0, atol=1e-12)
