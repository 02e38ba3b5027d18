"""Critical points of sampled fields against the Monte-Carlo Kac-Rice densities.

Run: python demos/critical_points.py
"""
import math

import numpy as np

from rftopo import critical_density_mc, find_critical_points, make_model, nonmax_fraction, sample_torus

model = make_model("bargmann_fock", 2)
field = sample_torus(model, (40.0, 40.0), (256, 256), seed=3, replicate=0)
pts = find_critical_points(field)
counts = pts.counts()
print(f"one 40x40 field: minima {counts[0]}, saddles {counts[1]}, maxima {counts[2]}, "
      f"alternating sum {counts[0] - counts[1] + counts[2]}")

est = critical_density_mc(model, math.inf, n_samples=10**6, seed=0)
print(f"density per unit area: field {len(pts) / field.volume:.4f}, "
      f"Kac-Rice {est.total:.4f} +- {est.total_stderr:.4f}")

# deep in the lower tail almost every critical point is a local minimum
u = np.linspace(-4.5, -2.5, 5)
res = nonmax_fraction(model, u, n_samples=10**6, seed=0)
for level, frac in zip(u, res.fraction):
    print(f"u={level:5.2f}: fraction of non-minima {frac:.2e}")
print(f"log-slope against u^2: {res.slope:.3f} (envelope rate {res.rate:.3f})")
