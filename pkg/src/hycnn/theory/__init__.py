"""Exact PWA algebra, explicit approximation networks and their certificates."""
from .constructions import (
    ConstructionCertificate, build_monomial_hycnn, build_multivariate_quadratic,
    build_quadratic_hycnn, build_quadratic_width2, compose_hycnn, homogenize,
    lift_first_input, monomial_digits, multiquad_bound, multiquad_pairs, pad_widths,
    quadratic_params,
)
from .embedding import embedding_checks, hycnn_to_relu, icnn_to_hycnn
from .moments import gaussian_max_moments, init_diagnostics
from .pwa import (
    PiecewiseAffine1D, chebyshev_line, icnn_piece_bound, icnn_sup_floor,
    lower_bound_search, pwa_of_network, sup_error_vs_quadratic, upper_envelope,
)
