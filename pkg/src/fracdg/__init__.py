"""Discrete nonlocal p-energies, fractional De Giorgi class audits and regularity measurements."""

from .dg_verify import (
    DGParams,
    audit_dg_membership,
    caccioppoli_sides,
    check_iteration_lemma,
    check_numeric_lemma,
    estimate_embedding_constants,
    growth_lemma_audit,
    isoperimetric_audit_frac,
    isoperimetric_audit_w1p,
    standard_plan,
)
from .energy import apply_operator, energy, first_variation, weak_residual
from .kernels import KernelSpec, check_ellipticity, check_symmetry, eval_kernel
from .lattice import Ball, Box, ExteriorExtension, Grid, GridFunction
from .nonlocal_calculus import cross_interaction, gagliardo_seminorm_p, tail, tail_ns
from .potentials import Growth, PotentialSpec, check_growth
from .regularity import harnack_quotient, hoelder_fit, sup_bound_report, weak_harnack_report
from .reports import AuditReport
from .solve import ProblemSpec, SolverOptions, minimize, solve, solve_equation, verify_minimality

__version__ = "0.1.0"
