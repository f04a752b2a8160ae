"""Compare the matching algorithm on four agents with its exhaustively enumerated law."""

from collections import Counter

import numpy as np

from bubblematch.population import NONE, AgentPopulation, exact_match_distribution, match_step

types = [0, 0, 1, 2]
theta = np.full((3, 3), 0.25)
exact = exact_match_distribution(types, theta)
pop = AgentPopulation(types, [NONE] * 4, 3)
rng = np.random.default_rng(0)
runs = 200_000
counts = Counter()
for _ in range(runs):
    p = match_step(pop, theta, rng).partner
    counts[tuple((i, int(j)) for i, j in enumerate(p) if j > i)] += 1

print(f"{'pairs':<14}{'exact':>10}{'simulated':>12}")
for key in sorted(exact):
    label = " ".join(f"{a}-{b}" for a, b in key) or "none"
    print(f"{label:<14}{exact[key]:>10.5f}{counts[key] / runs:>12.5f}")
