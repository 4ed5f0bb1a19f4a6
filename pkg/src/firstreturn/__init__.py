"""Exact and asymptotic first-return distributions of lattice random walks."""

__version__ = "0.1.0"

from .asymptotics import (
    NormingPlan,
    TheoremReport,
    empirical_g0,
    gaussian_g0,
    make_norming,
    predict_pn,
    product_stable_g0,
    ratio_diagnostics,
    smoothness_check,
    stable_scale,
    verify_theorem,
)
from .lattice_model import (
    StepLaw,
    WalkClass,
    char_fn,
    classify,
    is_aperiodic,
    lazify,
    lazy_simple_walk,
    load_model,
    power_tail,
    simple_walk,
    validate_law,
)
from .occupation import GridSpec, USeq, alias_error_bound, u_aliased, u_exact, u_sum
from .oracle import exact_enumeration, lemma1_check, mc_paths, taboo_dp
from .renewal import (
    TauDist,
    alternating_series_pn,
    estimate_p,
    forward_renewal,
    invert_renewal,
    selfconv_power,
)
