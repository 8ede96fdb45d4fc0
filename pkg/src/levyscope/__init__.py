"""Numerical toolkit for nonlocal (Lévy-type) operators and viscosity solutions."""

from levyscope.errors import DIVERGENT, NEG_INFINITY, Outcome
from levyscope.functions import Grid, GridFunction, JumpMap, TestFunction, weight_map
from levyscope.measures import (LevyMeasure, build_quadrature, density, levy_integral,
                                shell_mass, small_ball_moment, tail_mass,
                                verify_levy_condition)
from levyscope.operators import (SplitEvaluation, eval_B, eval_inner, eval_K, eval_levy,
                                 eval_split,
                                 eval_levy_ito, eval_outer, eval_outer_limit)

__version__ = "0.1.0"
