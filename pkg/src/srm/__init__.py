"""Exact vector-field calculus and intrinsic-volume experiments for
sub-Riemannian structures given by polynomial frames.

The package layers exact rational computation (expressions, brackets,
flags, frames, privileged charts, Popp determinants) under Monte Carlo
metric estimation (distances, ball volumes, spherical densities,
covering dimensions, blow-up convergence curves).
"""

from .blowup import (BlowupExperiment, blowup_experiment, gh_distortion,
                     measure_discrepancy_smooth,
                     measure_discrepancy_spherical, mu_eps_integral)
from .distance import (DistanceEstimate, ball_indicator, ball_membership,
                       batched_distance, distance, geodesic_shoot,
                       pairwise_distance, random_reachable_cloud)
from .errors import (ChartDegenerate, NotBracketGenerating, NotEquisingular,
                     ParseError, SingularQuotient, SRMError, StepFailure,
                     StrataNotPartition, TruncationNotGenerating, Unreachable,
                     ValidationError)
from .expr import Expr
from .flag import FlagData, classify_grid, classify_point, flag_at
from .frames import AdaptedFrame, adapted_frames, nu
from .measures import (MCEstimate, ball_measure, covering_dimension,
                       density_consistency, federer_ratio_probe,
                       isodiametric_search, mu_hat_ball, sandwich_check,
                       spherical_density)
from .nilpotent import Chart, NilpotentApprox, nilpotentize, privileged_chart
from .parser import load_structure, parse_structure
from .popp import (GradedInnerProduct, PoppDensity, StratifiedReport,
                   equisingular_check, graded_ip, popp_density,
                   popp_on_stratum, stratified_measures,
                   weak_equivalent_check)
from .structure import SRStructure, Stratum, builtin_names, load_builtin
from .vf import VectorField, lie_bracket

__version__ = "0.1.0"

__all__ = [
    "AdaptedFrame", "BlowupExperiment", "Chart", "ChartDegenerate",
    "DistanceEstimate", "Expr", "FlagData", "GradedInnerProduct",
    "MCEstimate", "NilpotentApprox", "NotBracketGenerating",
    "NotEquisingular", "ParseError", "PoppDensity", "SRMError",
    "SRStructure", "SingularQuotient", "StepFailure", "StrataNotPartition",
    "StratifiedReport", "Stratum", "TruncationNotGenerating", "Unreachable",
    "ValidationError", "VectorField", "adapted_frames", "ball_indicator",
    "ball_measure", "ball_membership", "batched_distance",
    "blowup_experiment", "builtin_names", "classify_grid", "classify_point",
    "covering_dimension", "density_consistency", "distance",
    "equisingular_check", "federer_ratio_probe", "flag_at", "geodesic_shoot",
    "gh_distortion", "graded_ip", "isodiametric_search", "lie_bracket",
    "load_builtin", "load_structure", "measure_discrepancy_smooth",
    "measure_discrepancy_spherical", "mu_eps_integral", "mu_hat_ball",
    "nilpotentize", "nu", "pairwise_distance", "parse_structure",
    "popp_density", "popp_on_stratum", "privileged_chart",
    "random_reachable_cloud", "sandwich_check", "spherical_density",
    "stratified_measures", "weak_equivalent_check",
]
