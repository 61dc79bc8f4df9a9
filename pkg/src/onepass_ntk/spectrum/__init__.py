from .bound import (BoundParams, WidthRequirement, bound_over_blocks, c1, contraction, initial_error,
                    required_width, sigma0, theorem_bound)
from .coefficients import (BetaResult, EigenBlock, HProfile, ParsevalResult, SpectralTable, beta_coefficient,
                           block_contribution, block_degree, funk_hecke_beta, ntk_h_derivative, ntk_spectrum,
                           parseval_norm, projection_remainder, top_block_degrees)
from .gegenbauer import gegenbauer, gegenbauer_at_one, gegenbauer_explicit, harmonic_dim

__all__ = [
    "BoundParams", "WidthRequirement", "bound_over_blocks", "c1", "contraction", "initial_error",
    "required_width", "sigma0", "theorem_bound", "BetaResult", "EigenBlock", "HProfile", "ParsevalResult",
    "SpectralTable", "beta_coefficient", "block_contribution", "block_degree", "funk_hecke_beta",
    "ntk_h_derivative", "ntk_spectrum", "parseval_norm", "projection_remainder", "top_block_degrees",
    "gegenbauer", "gegenbauer_at_one", "gegenbauer_explicit", "harmonic_dim",
]
