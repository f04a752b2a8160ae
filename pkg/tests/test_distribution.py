import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubblematch.core import ProbabilityTable, keep_pair_sigma, keep_type_varsigma, validate_distribution
from bubblematch.distribution import (breakup_map, cell_index, evolve, gamma_step, post_matching, post_mutation,
                                      transition_matrix, transition_matrix_closed_form)
from bubblematch.drivers import constant_scenario
from bubblematch.models import Example1Model, ProportionalMatchingModel, StaticModel
from conftest import BUNDLED, bundled_draw, random_distribution, unmatched


def test_post_mutation_examples():
    p = unmatched([0.6, 0.4])
    out = post_mutation(p, [[0.9, 0.1], [0.2, 0.8]])
    np.testing.assert_allclose(out[:, 2], [0.62, 0.38])
    q = np.zeros((2, 3))
    q[0, 1] = q[1, 0] = 0.5
    out = post_mutation(q, [[0, 1], [1, 0]])
    assert out[1, 0] == 0.5 and out[0, 1] == 0.5
    d = random_distribution(np.random.default_rng(1))
    np.testing.assert_array_equal(post_mutation(d, np.eye(3)), d)


def test_post_matching_examples():
    p = unmatched([0.5, 0.5])
    th = np.array([[0.0, 0.4], [0.4, 0.0]])
    out = post_matching(p, th)
    assert out[0, 1] == pytest.approx(0.2) and out[1, 0] == pytest.approx(0.2)
    np.testing.assert_allclose(out[:, 2], [0.3, 0.3])
    one = post_matching(unmatched([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert one[0, 0] == 1.0


def test_post_matching_flags_unbalanced_theta():
    with pytest.raises(ValueError, match="detailed balance"):
        post_matching(unmatched([0.5, 0.5]), np.array([[0.0, 0.4], [0.1, 0.0]]))


def test_dissolving_step():
    d = random_distribution(np.random.default_rng(2))
    t = ProbabilityTable.degenerate(3)
    t.xi[:] = 1.0
    _, _, out = gamma_step(d, StaticModel(t), {}, 1)
    np.testing.assert_allclose(out[:, 3], d.sum(axis=1), atol=1e-15)
    assert np.all(out[:, :3] == 0)


def test_composition_collapses_to_matching():
    t = ProbabilityTable.degenerate(2)
    t.xi[:] = 0.0
    t.theta[:] = [[0.0, 0.4], [0.4, 0.0]]
    _, ptt, out = gamma_step(unmatched([0.5, 0.5]), StaticModel(t), {}, 1)
    np.testing.assert_allclose(out, ptt)
    assert out[0, 1] == pytest.approx(0.2)


def _oracle_example1(p1J, p2J, p3J, F=0.05, level=0.5, xi=0.3):
    """Straight-line evaluation of one sentiment-model period for an all-unmatched start."""
    f = lambda y: (1.0 / 3.0) * max(y, 0.0) ** 0.4
    x = p1J - p3J
    gp, gm = f(x), f(-x)
    B = [[1 - gm, gm * (1 - gm), gm * gm],
         [gp, 1 - gp - gm, gm],
         [gp * gp, gp * (1 - gp), 1 - gp]]
    pJ = [p1J, p2J, p3J]
    # mutation of singles only: no pairs yet
    qJ = [sum(pJ[a] * B[a][b] for a in range(3)) for b in range(3)]
    # matching at the post-mutation unmatched masses
    th = [[level * qJ[l] for l in range(3)] for _ in range(3)]
    pair = [[th[k][l] * qJ[k] for l in range(3)] for k in range(3)]
    single = [(1 - sum(th[k])) * qJ[k] for k in range(3)]
    # break-up sentiment at the post-matching fractions
    fr = [single[k] + sum(pair[k]) for k in range(3)]
    y = fr[0] - fr[2]
    fp, fm = f(y), f(-y)
    s = {}
    for k in range(3):
        s[(k, k, k, k)] = 1.0
    s[(0, 1, 0, 0)] = F + fp
    s[(0, 1, 1, 1)] = F + fm
    s[(0, 1, 0, 1)] = 1 - 2 * F - fp - fm
    s[(1, 2, 1, 1)] = F + fp
    s[(1, 2, 2, 2)] = F + fm
    s[(1, 2, 1, 2)] = 1 - 2 * F - fp - fm
    s[(0, 2, 0, 0)] = F + fp * fp
    s[(0, 2, 0, 1)] = F + fp * (1 - fp)
    s[(0, 2, 2, 2)] = F + fm * fm
    s[(0, 2, 1, 2)] = F + fm * (1 - fm)
    s[(0, 2, 0, 2)] = 1 - s[(0, 2, 0, 0)] - s[(0, 2, 0, 1)] - s[(0, 2, 2, 2)] - s[(0, 2, 1, 2)]
    for (k, l, r, t), v in list(s.items()):
        s[(l, k, t, r)] = v
    out = np.zeros((3, 4))
    for k in range(3):
        for l in range(3):
            out[k][l] = sum((1 - xi) * s.get((a, b, k, l), 0.0) * pair[a][b] for a in range(3) for b in range(3))
        out[k][3] = single[k] + sum(xi * pair[k][b] for b in range(3))
    return out


def test_example1_step_matches_straight_line_oracle():
    F = {k: 0.05 for k in ("121", "122", "232", "233", "131", "132", "133")}
    model = Example1Model(F=F, theta_level=0.5, xi=0.3)
    _, _, out = gamma_step(unmatched([0.5, 0.3, 0.2]), model, {}, 1)
    np.testing.assert_allclose(out, _oracle_example1(0.5, 0.3, 0.2), rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(BUNDLED[:3] + ["proportional"]))
def test_gamma_preserves_validity(seed, name):
    rng = np.random.default_rng(seed)
    model, scn, p = bundled_draw(rng, name)
    pt, ptt, out = gamma_step(p, model, scn, 1)
    for d in (pt, ptt, out):
        assert validate_distribution(d).ok


def test_batched_matches_single():
    rng = np.random.default_rng(8)
    m = Example1Model(theta_level=0.7)
    ps = np.stack([random_distribution(rng) for _ in range(5)])
    _, _, batch = gamma_step(ps, m, {}, 1)
    for i in range(5):
        np.testing.assert_array_equal(batch[i], gamma_step(ps[i], m, {}, 1)[2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(BUNDLED[:3] + ["proportional"]))
def test_transition_matrix_consistent(seed, name):
    rng = np.random.default_rng(seed)
    model, scn, p = bundled_draw(rng, name)
    tm = transition_matrix(p, model, scn, 1)
    np.testing.assert_allclose(tm.row_sums(), 1.0, atol=1e-10)
    _, _, new = gamma_step(p, model, scn, 1)
    np.testing.assert_allclose(p.ravel() @ tm.z, new.ravel(), atol=1e-10)


def test_transition_matrix_closed_form_agrees():
    rng = np.random.default_rng(4)
    for name in ("example1", "arbitrage", "proportional"):
        model, scn, p = bundled_draw(rng, name)
        np.testing.assert_allclose(transition_matrix(p, model, scn, 1).z,
                                   transition_matrix_closed_form(p, model, scn, 1), atol=1e-13)


def test_transition_matrix_identity_kernels():
    t = ProbabilityTable.degenerate(3)
    t.xi[:] = 0.0
    z = transition_matrix(unmatched([0.2, 0.3, 0.5]), StaticModel(t), {}, 1).z
    np.testing.assert_array_equal(z, np.eye(12))
    assert cell_index(1, None, 3) == 7 and cell_index(2, 0, 3) == 8


def test_evolve_and_csv():
    scn = constant_scenario({}, 4)
    ev = evolve(unmatched([0.5, 0.2, 0.3]), Example1Model(), scn)
    assert ev.p.shape == (5, 3, 4)
    assert ev.post_mutation.shape == (4, 3, 4)
    text = ev.to_csv()
    lines = text.splitlines()
    assert lines[0].startswith("period,k1_l1") and lines[0].endswith("p1_minus_p3")
    assert len(lines) == 6
    assert evolve(unmatched([0.5, 0.2, 0.3]), Example1Model(), scn, periods=2).p.shape[0] == 3


def test_mass_drift_is_an_error():
    class Leaky(StaticModel):
        def breakup(self, scn, n, p):
            xi, s, v = super().breakup(scn, n, p)
            return xi, s * 0.9, v
    t = ProbabilityTable.degenerate(3)
    t.xi[:] = 0.0
    d = random_distribution(np.random.default_rng(0), matched_share=0.5)
    with pytest.raises(FloatingPointError):
        gamma_step(d, Leaky(t), {}, 1)
