"""Importance sampling for tail probabilities of heavy-tailed perpetuities."""

from .estimators import (RGConfig, ReplicationResult, asymptote, estimate_cmc,
                         estimate_rg, estimate_truncated, run_grid, xi_cdf, xi_density)
from .iskernel import ISKernel, verify_astar
from .recursion import (CouplingParams, GoldieRecursion, PathState, PerpetuityM1,
                        PerpetuityM2, crossing_level, find_gamma2, make_coupling)
from .stats import SummaryStats, efficiency_report, merge, summarize
from .tailmodels import (LadderVariable, PointMass, ShiftedPareto, ShiftedWeibull,
                         TailModel, UserTailModel, integrated_tail)

__version__ = "0.1.0"
