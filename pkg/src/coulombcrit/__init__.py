"""Critical points of Coulomb-type N-body energies and their mean-field limits."""

from __future__ import annotations

__version__ = "0.1.0"

from .kernel import (
    InteractionSpec,
    KernelSingularityError,
    PotentialSpec,
    ProblemSpec,
    coulomb_constant,
    coulomb_g,
    coulomb_grad,
    coulomb_hess,
)
from .system import (
    Configuration,
    FieldSample,
    ProximityError,
    boundedness_statistic,
    field_eval,
    hamiltonian,
    hamiltonian_grad,
    hamiltonian_hess,
    residual_norm,
    residuals,
)
from .solver import (
    SolveReport,
    SolverOptions,
    minimize_energy,
    polygon_relative_equilibrium,
    random_configuration,
    solve_critical,
)
from .testfields import TestField
from .meanfield import (
    Dictionary,
    GriddedMeasure,
    continuum_vorticity_residual,
    convergence_study,
    default_dictionary,
    dual_norm_gap,
    equilibrium_disk,
    radial_histogram,
)
from .diagnostics import (
    FluxResult,
    StabilityReport,
    divergence_probe,
    factorization_split,
    flux_around,
    flux_expected,
    flux_integral,
    limit_stability_form,
    stability_check,
    vorticity_residual,
)

__all__ = [name for name in dir() if not name.startswith("_")]
