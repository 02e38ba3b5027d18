"""Topology of Gaussian random fields: excursion sets, critical points and p-spin landscapes.

Submodules
----------
covariance   stationary covariance models and their derivative jets
theory       closed-form expectations (Euler characteristic, component asymptotics)
sampler      periodic field synthesis and exact spectral evaluation
topology     components, Euler characteristic, Betti numbers and level curves on grids
critical     Newton search for critical points of sampled fields
kacrice      Monte-Carlo Kac-Rice densities of critical points
spinglass    the spherical p-spin model and its GOE representation
harness      replicate ensembles compared against theory
"""
from .covariance import SpectralModel, make_model
from .critical import find_critical_points
from .harness import RunConfig, run
from .kacrice import critical_density_mc, nonmax_fraction
from .sampler import GridField, eval_spectral, load_field, sample_torus, save_field
from .spinglass import brute_force_crit_search, expected_crit_goe, make_spin_glass
from .theory import expected_components_asymptotic, expected_euler, lk_curvatures, torus
from .topology import level_topology

__version__ = "0.1.0"

__all__ = [
    "SpectralModel",
    "make_model",
    "GridField",
    "sample_torus",
    "eval_spectral",
    "save_field",
    "load_field",
    "torus",
    "lk_curvatures",
    "expected_euler",
    "expected_components_asymptotic",
    "level_topology",
    "find_critical_points",
    "critical_density_mc",
    "nonmax_fraction",
    "make_spin_glass",
    "expected_crit_goe",
    "brute_force_crit_search",
    "RunConfig",
    "run",
]
