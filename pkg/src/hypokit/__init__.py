"""Hypocoercivity toolkit for the kinetic Fokker-Planck equation."""

from .certificate import (
    HerauCertificate,
    HypocoercivityCertificate,
    ProblemParams,
    TriangularFormInstance,
    build_herau_certificate,
    build_hypocoercivity_certificate,
    certificate_to_json,
    check_identities,
    check_triangular_positivity,
    herau_functional,
    twisted_hk_inner,
)
from .exactsolver import GaussianState, SpectralData, fundamental_solution, propagate_gaussian, sharpness_slope
from .grid import GridFunction, PhaseGrid, read_grid_function, write_grid_function
from .meanfield import CurieWeissParams, EnsembleConfig, langevin_simulate, mean_field_M, poincare_kappa, relaxation_estimate
from .operators import NormAggregates, compute_norm_aggregates, verify_lemma32, verify_lemma33
from .pdesolver import SolverConfig, evolve, norm_timeseries
from .potentials import CurieWeiss, Quadratic, Tabulated1D, double_well_table

__version__ = "0.1.0"
