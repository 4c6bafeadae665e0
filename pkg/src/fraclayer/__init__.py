"""fraclayer: nonlocal Allen-Cahn energies of one-dimensional layer profiles.

Discretizes the Gagliardo interaction energy plus a double-well potential
on uniform grids with constant exterior data, minimizes it, and provides
the analysis tools (scaling fits, decay fits, density bounds, extension
corrections) used to study the flat interface layer.
"""

from .grid import (
    Grid1D,
    Profile,
    make_grid,
    make_profile,
    interpolate,
    zero_crossing,
    clamp,
    save_profile,
    load_profile,
)
from .kernel import (
    FracOrder,
    InteractionForm,
    AffineQuadratic,
    assemble_form,
    cached_form,
    tail_weight,
    frac_laplacian,
    frac_laplacian_profile,
    seminorm_density,
    seminorm_density_profile,
    kinetic_window_parts,
    kinetic_window_value,
    shell_kernel_integral,
    strip_companion_integral,
    save_form,
    load_form,
)
from .potential import (
    PotentialSpec,
    quartic_double_well,
    tabulated_potential,
    load_tabulated_csv,
    potential_eval,
    potential_increment,
    validate_double_well,
    ValidationReport,
)
from .energy import (
    EnergyBreakdown,
    energy,
    energy_gradient,
    scaled_energy_G,
    append_breakdown_csv,
)
from .solver import (
    SolveOptions,
    SolveReport,
    build_seed,
    minimize,
    el_residual,
    monotone_rearrange,
    normalize_translation,
    continuation_solve,
    save_trace_csv,
)
from .analysis import (
    ScalingFit,
    DecayFit,
    ExtensionParams,
    compute_varpi,
    make_extension_params,
    fit_scaling,
    fit_decay,
    gamma_ell,
    lem_aux_alpha,
    theta_corrections,
    extension_cross_energy,
    shell_energy,
    lambda_bound_check,
)

__version__ = "0.1.0"

__all__ = [
    "Grid1D",
    "Profile",
    "make_grid",
    "make_profile",
    "interpolate",
    "zero_crossing",
    "clamp",
    "save_profile",
    "load_profile",
    "FracOrder",
    "InteractionForm",
    "AffineQuadratic",
    "assemble_form",
    "cached_form",
    "tail_weight",
    "frac_laplacian",
    "frac_laplacian_profile",
    "seminorm_density",
    "seminorm_density_profile",
    "kinetic_window_parts",
    "kinetic_window_value",
    "shell_kernel_integral",
    "strip_companion_integral",
    "save_form",
    "load_form",
    "PotentialSpec",
    "quartic_double_well",
    "tabulated_potential",
    "load_tabulated_csv",
    "potential_eval",
    "potential_increment",
    "validate_double_well",
    "ValidationReport",
    "EnergyBreakdown",
    "energy",
    "energy_gradient",
    "scaled_energy_G",
    "append_breakdown_csv",
    "SolveOptions",
    "SolveReport",
    "build_seed",
    "minimize",
    "el_residual",
    "monotone_rearrange",
    "normalize_translation",
    "continuation_solve",
    "save_trace_csv",
    "ScalingFit",
    "DecayFit",
    "ExtensionParams",
    "compute_varpi",
    "make_extension_params",
    "fit_scaling",
    "fit_decay",
    "gamma_ell",
    "lem_aux_alpha",
    "theta_corrections",
    "extension_cross_energy",
    "shell_energy",
    "lambda_bound_check",
    "__version__",
]
