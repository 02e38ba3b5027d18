"""Excursion-set topology of a Bargmann-Fock field against the closed-form predictions.

Run: python demos/excursion_sets.py
"""
import warnings

import numpy as np

from rftopo import expected_components_asymptotic, expected_euler, level_topology, lk_curvatures
from rftopo import make_model, sample_torus, torus
from rftopo.critical import find_critical_points
from rftopo.theory import AsymptoticRegimeWarning

model = make_model("bargmann_fock", 2)
sides, shape = (40.0, 40.0), (256, 256)
dom = torus(*sides)
lk = lk_curvatures(dom, model.second_moment)
levels = (0.0, 1.0, 2.0, 3.0)

# a small ensemble: Euler characteristic and component counts per level
fields = [sample_torus(model, sides, shape, seed=1, replicate=r) for r in range(20)]
print(f"{'u':>4} {'mean chi':>9} {'E chi':>8} {'mean N':>8} {'refined N':>10}")
for u in levels:
    chi = np.mean([level_topology(f, u, with_balls=False).euler_characteristic for f in fields])
    comps = np.mean([level_topology(f, u, with_balls=False).n_components for f in fields])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AsymptoticRegimeWarning)
        pred = expected_components_asymptotic(dom, model, u, refined=True) if u > 0 else float("nan")
    print(f"{u:4.1f} {chi:9.2f} {float(expected_euler(lk, u)):8.2f} {comps:8.2f} {pred:10.2f}")

# one field in detail: at a high level almost every component is a disc
f = fields[0]
pts = find_critical_points(f, min_value=2.5)
lt = level_topology(f, 2.5, points=pts)
print(f"\nu=2.5 on one field: {lt.n_components} components, {lt.n_ball_components} discs, "
      f"betti {lt.betti}, {lt.n_nodal_components} level curves")
