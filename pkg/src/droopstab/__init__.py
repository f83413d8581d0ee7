"""Stability certificates for droop-controlled inverter distribution grids.

Pipeline: grid model -> equilibrium -> block Jacobian -> timescale reduction
-> Lyapunov certificates -> droop-gain conditions and timescale bounds,
cross-validated by time-domain simulation.
"""

from .certificates import (CertificateInfeasibleError, CertificateSet,
                           compute_certificates, sampled_inequality_slacks,
                           solve_lyapunov)
from .conditions import (AnalysisError, AnalysisOptions, GainBound,
                         StabilityReport, analyze, hurwitz, voltage_gain_bounds)
from .equilibrium import (EquilibriumResult, find_equilibrium, flat_start,
                          load_point, save_point)
from .grid import (FEEDER_BUS, Bases, Feeder, GridSpec, GridSpecError,
                   Inverter, Line, Load, OperatingPoint, load_grid,
                   power_injections, replace_gains, save_grid, spec_hash,
                   vector_field)
from .ieee13 import build_ieee13
from .linearize import (BlockSystem, HomogeneityError, extract_blocks,
                        homogeneous_filter_constant, jacobian, to_standard_form)
from .simulator import (StepPolicy, Trajectory, decay_rate, simulate_linear,
                        simulate_nonlinear)
from .timescale import (IllConditionedError, ReducedModel, build_reduced_model,
                        nu_terms, voltage_coupling_closed_form)

__version__ = "0.1.0"
