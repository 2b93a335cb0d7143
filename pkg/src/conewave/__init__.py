"""Numerical laboratory for two progressing waves meeting at an interface where
the quadratic nonlinearity jumps: ray predictions, leapfrog simulation, Born
expansion, wavefront detection and recovery of the jump."""

from .errors import *  # noqa: F401,F403
from .geometry import (FlatMetric, DiagonalMetric, SampledMetric, Metric, PhasePoint,  # noqa: F401
                       diag_linear, diag_sine, hamiltonian_field, metric_from_config,
                       null_lift, symbol_p)
from .raytrace import (InterfaceSpec, PredictedSupport, Ray, SampledSurface,  # noqa: F401
                       cone_covectors, predict_support, reflect_at_interface, trace, trace_many)
from .fields import (CoefficientSpec, GridSpec, PotentialSpec, SourceSpec, WaveField,  # noqa: F401
                     build_coefficient, build_potential, build_pulse, energy, norm)
from .solver import (SolverConfig, WaveOperator, energy_drift, picard_solve,  # noqa: F401
                     solve_linear, solve_semilinear, step)

__version__ = "0.1.0"
