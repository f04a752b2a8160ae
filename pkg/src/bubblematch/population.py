"""Finite-population simulation of one period: mutation, matching and break-up.

Types are stored 0-based; ``partner[i] == -1`` marks an unmatched agent.  Each
sub-step draws its randomness from the supplied ``numpy.random.Generator`` in a
fixed order, so a seeded run is reproducible.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import ExtendedTypeDistribution

NONE = -1


@dataclass
class AgentPopulation:
    type: np.ndarray
    partner: np.ndarray
    K: int = 3

    def __post_init__(self):
        self.type = np.asarray(self.type, dtype=np.int64)
        self.partner = np.asarray(self.partner, dtype=np.int64)
        if self.type.shape != self.partner.shape:
            raise ValueError("type and partner arrays differ in length")

    @property
    def n(self) -> int:
        return self.type.size

    @property
    def matched(self) -> np.ndarray:
        return self.partner != NONE

    def copy(self) -> "AgentPopulation":
        return AgentPopulation(self.type.copy(), self.partner.copy(), self.K)

    def check(self) -> None:
        """Raise if the partner map is not an irreflexive involution or types are out of range."""
        idx = np.nonzero(self.matched)[0]
        p = self.partner[idx]
        if np.any(p == idx):
            raise AssertionError("agent matched to itself")
        if np.any(p < 0) or np.any(p >= self.n) or np.any(self.partner[p] != idx):
            raise AssertionError("partner map is not an involution")
        if np.any(self.type < 0) or np.any(self.type >= self.K):
            raise AssertionError("type out of range")

    @classmethod
    def from_distribution(cls, n: int, d, rng: Optional[np.random.Generator] = None) -> "AgentPopulation":
        """Population whose cell counts round ``n * d``; agents are shuffled when ``rng`` is given.

        Matched cells are rounded to whole pairs; unmatched cells absorb the
        rounding so that the total is exactly ``n``.
        """
        d = np.asarray(d, dtype=float)
        K = d.shape[0]
        types, partners = [], []
        nxt = 0
        for k in range(K):
            for l in range(k, K):
                mass = d[k, l] + (d[l, k] if l != k else 0.0)
                pairs = int(round(n * mass / 2))
                for _ in range(pairs):
                    types += [k, l]
                    partners += [nxt + 1, nxt]
                    nxt += 2
        rest = n - nxt
        if rest < 0:
            raise ValueError("matched mass exceeds population size after rounding")
        un = d[:, K]
        tot = un.sum()
        w = un / tot if tot > 0 else np.full(K, 1.0 / K)
        raw = w * rest
        cnt = np.floor(raw).astype(int)
        short = rest - cnt.sum()
        cnt[np.argsort(-(raw - cnt), kind="stable")[:short]] += 1
        for k in range(K):
            types += [k] * cnt[k]
            partners += [NONE] * cnt[k]
        t = np.array(types, dtype=np.int64)
        p = np.array(partners, dtype=np.int64)
        if rng is not None:
            perm = rng.permutation(n)
            inv = np.empty(n, dtype=np.int64)
            inv[perm] = np.arange(n)
            t = t[perm]
            p = p[perm]
            p = np.where(p == NONE, NONE, inv[np.maximum(p, 0)])
        return cls(t, p, K)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("agent_id,type,partner_id\n")
        for i in range(self.n):
            pid = "" if self.partner[i] == NONE else str(int(self.partner[i]))
            out.write(f"{i},{int(self.type[i]) + 1},{pid}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, K: int = 3) -> "AgentPopulation":
        lines = text.strip().splitlines()
        if lines[0] != "agent_id,type,partner_id":
            raise ValueError("malformed population header")
        t, p = [], []
        for i, line in enumerate(lines[1:]):
            aid, typ, pid = line.split(",")
            if int(aid) != i:
                raise ValueError("agent ids must be consecutive from 0")
            t.append(int(typ) - 1)
            p.append(NONE if pid == "" else int(pid))
        pop = cls(np.array(t), np.array(p), K)
        pop.check()
        return pop


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` by inverse CDF."""
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    # guard the top of the CDF against round-off below 1
    out = (u[:, None] >= cum[:, :-1]).sum(axis=1)
    return out


def mutation_step(pop: AgentPopulation, eta, rng: np.random.Generator) -> AgentPopulation:
    eta = np.asarray(eta, dtype=float)
    out = pop.copy()
    out.type = _categorical(rng, eta[pop.type])
    return out


def match_step(pop: AgentPopulation, theta, rng: np.random.Generator) -> AgentPopulation:
    """Pair unmatched agents through proposals, cardinality repair and uniform pairing."""
    theta = np.asarray(theta, dtype=float)
    K = pop.K
    out = pop.copy()
    free = np.nonzero(pop.partner == NONE)[0]
    if free.size == 0:
        return out
    # inverse-CDF proposal draw; a draw past the row total proposes J (index K)
    u = rng.random(free.size)
    types = pop.type[free]
    prop = (u[:, None] >= np.cumsum(theta, axis=1)[types]).sum(axis=1)
    # a single random order makes every truncation and pairing below uniform
    perm = rng.permutation(free.size)
    agents = free[perm]
    key = types[perm] * (K + 1) + prop[perm]
    order = np.argsort(key, kind="stable")
    agents = agents[order]
    key = key[order]
    sizes = np.bincount(key, minlength=K * (K + 1))
    starts = np.cumsum(sizes) - sizes
    rank = np.arange(agents.size) - starts[key]
    k, l = key // (K + 1), key % (K + 1)
    mate = np.full(agents.size, NONE)
    # same-type proposals pair consecutive ranks; an odd last proposer is dropped
    same = (k == l) & (rank < sizes[key] - sizes[key] % 2)
    mate[same] = agents[starts[key[same]] + (rank[same] ^ 1)]
    # cross-type proposals pair equal ranks in the (k, l) and (l, k) buckets
    cross = (l < K) & (k != l)
    mirror = l[cross] * (K + 1) + k[cross]
    idx = np.nonzero(cross)[0]
    ok = rank[idx] < sizes[mirror]
    mate[idx[ok]] = agents[starts[mirror[ok]] + rank[idx[ok]]]
    out.partner[agents] = mate
    return out


def breakup_step(pop: AgentPopulation, xi, sigma, varsigma, rng: np.random.Generator) -> AgentPopulation:
    """Each matched pair separates with probability ``xi`` (both redraw from ``varsigma``)
    or stays and redraws its joint type from ``sigma``."""
    xi = np.asarray(xi, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    varsigma = np.asarray(varsigma, dtype=float)
    K = pop.K
    out = pop.copy()
    idx = np.arange(pop.n)
    a = np.nonzero((pop.partner != NONE) & (pop.partner > idx))[0]
    if a.size == 0:
        return out
    b = pop.partner[a]
    k, l = pop.type[a], pop.type[b]
    split = rng.random(a.size) < xi[k, l]
    joint = _categorical(rng, sigma[k, l].reshape(a.size, K * K))
    ta = _categorical(rng, varsigma[k, l])
    tb = _categorical(rng, varsigma[l, k])
    new_a = np.where(split, ta, joint // K)
    new_b = np.where(split, tb, joint % K)
    out.type[a] = new_a
    out.type[b] = new_b
    out.partner[a[split]] = NONE
    out.partner[b[split]] = NONE
    return out


def empirical_distribution_array(pop: AgentPopulation) -> np.ndarray:
    K = pop.K
    col = np.where(pop.partner == NONE, K, pop.type[np.maximum(pop.partner, 0)])
    cells = pop.type * (K + 1) + col
    return (np.bincount(cells, minlength=K * (K + 1)) / pop.n).reshape(K, K + 1)


def empirical_distribution(pop: AgentPopulation) -> ExtendedTypeDistribution:
    return ExtendedTypeDistribution(empirical_distribution_array(pop))


def run_period(pop: AgentPopulation, model, scn, n: int, rng: np.random.Generator
               ) -> Tuple[AgentPopulation, np.ndarray, np.ndarray, np.ndarray]:
    """One full period; tables are conditioned on the population's own empirical distributions.

    Returns ``(population, post-mutation, post-matching, end-of-period)`` distributions.
    """
    p = empirical_distribution_array(pop)
    pop = mutation_step(pop, model.mutation(scn, n, p), rng)
    p1 = empirical_distribution_array(pop)
    pop = match_step(pop, model.matching(scn, n, p1), rng)
    p2 = empirical_distribution_array(pop)
    xi, sigma, vs = model.breakup(scn, n, p2)
    pop = breakup_step(pop, xi, sigma, vs, rng)
    return pop, p1, p2, empirical_distribution_array(pop)


def simulate_population(pop: AgentPopulation, model, scenario, rng: np.random.Generator,
                        periods: Optional[int] = None) -> Tuple[AgentPopulation, np.ndarray]:
    """Run ``periods`` periods along an unbatched scenario; returns end-of-period distributions."""
    N = scenario.N if periods is None else int(periods)
    ps = [empirical_distribution_array(pop)]
    for n in range(1, N + 1):
        pop, _, _, p = run_period(pop, model, scenario.at(n), n, rng)
        ps.append(p)
    return pop, np.stack(ps)


def _perfect_matchings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for j in range(len(rest)):
        for m in _perfect_matchings(rest[:j] + rest[j + 1:]):
            yield [(first, rest[j])] + m


def exact_match_distribution(types, theta) -> dict:
    """Exact law of the pairs formed by :func:`match_step` for a small, fully unmatched group.

    Enumerates every proposal profile, every admissible truncation or drop and
    every pairing.  Keys are sorted tuples of ``(i, j)`` with ``i < j``.
    """
    import itertools
    from math import comb, factorial

    types = [int(t) for t in types]
    theta = np.asarray(theta, dtype=float)
    K = theta.shape[0]
    probs = np.concatenate([theta, (1.0 - theta.sum(axis=1))[:, None]], axis=1)
    law: dict = {}
    for profile in itertools.product(range(K + 1), repeat=len(types)):
        w = float(np.prod([probs[t, c] for t, c in zip(types, profile)]))
        if w == 0.0:
            continue
        bucket = {}
        for i, (t, c) in enumerate(zip(types, profile)):
            if c < K:
                bucket.setdefault((t, c), []).append(i)
        groups = []
        for k in range(K):
            A = bucket.get((k, k), [])
            opts = []
            drops = [None] if len(A) % 2 == 0 else A
            for dr in drops:
                rest = [a for a in A if a != dr]
                pms = list(_perfect_matchings(rest))
                for pm in pms:
                    opts.append((1.0 / len(drops) / len(pms), pm))
            groups.append(opts)
            for l in range(k + 1, K):
                A, B = bucket.get((k, l), []), bucket.get((l, k), [])
                m = min(len(A), len(B))
                norm = comb(len(A), m) * comb(len(B), m) * factorial(m)
                opts = []
                for SA in itertools.combinations(A, m):
                    for SB in itertools.combinations(B, m):
                        for perm in itertools.permutations(SB):
                            opts.append((1.0 / norm, list(zip(SA, perm))))
                groups.append(opts)
        for combo in itertools.product(*groups):
            pw = w
            pairs = []
            for gw, gp in combo:
                pw *= gw
                pairs += gp
            key = tuple(sorted((min(a, b), max(a, b)) for a, b in pairs))
            law[key] = law.get(key, 0.0) + pw
    return law
