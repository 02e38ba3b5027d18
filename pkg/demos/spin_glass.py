"""Critical points of the spherical 3-spin model at small n, and the GOE representation.

Run: python demos/spin_glass.py
"""
import math

import numpy as np

from rftopo import brute_force_crit_search, expected_crit_goe, make_spin_glass
from rftopo.spinglass import complexity_probe

counts = []
for seed in range(20):
    pts = brute_force_crit_search(make_spin_glass(3, 3, seed), 4000, seed=seed)
    counts.append(pts.counts(3))
    assert pts.euler() == 2
counts = np.array(counts)
goe = [expected_crit_goe(3, 3, i, math.inf, 10**5, seed=0)[0] for i in range(3)]
print("mean counts by index over 20 Hamiltonians:", counts.mean(axis=0))
print("GOE formula:                              ", np.round(goe, 3))

rows, gaps = complexity_probe(3, -1.8, (10, 20, 40), 10**4, seed=0)
for n, value, se in rows:
    print(f"n={n:3d}: (1/n) log E C_0 = {value:.4f} +- {se:.4f}")
print("successive gaps:", np.round(gaps, 4))
