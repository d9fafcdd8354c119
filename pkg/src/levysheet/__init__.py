"""Monte Carlo toolkit for Lévy sheets, the complex fields X_eps built from
them, and kernel-driven approximations of the stochastic heat equation."""

from __future__ import annotations

__version__ = "0.1.0"

from .levy_char import (  # noqa: E402
    AssumptionViolated,
    Brownian,
    CompoundPoisson,
    Poisson,
    SymmetricStable,
    ThetaConfig,
    exponent_a,
    exponent_b,
    normalization_K,
)
from .sheet_sim import GridSpec, RngStream, SheetPath, rect_increment, sample_sheet  # noqa: E402
from .field_approx import approx_field, classic_kac_stroock, kac_stroock_kernels  # noqa: E402
from .stat_harness import MCEstimate, TestReport, mc_moments  # noqa: E402
from .spde_solver import HeatConfig, SolutionField, compare_laws, solve_kernel_driven, solve_white_noise  # noqa: E402
