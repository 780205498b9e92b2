"""Contraction certificates for ODEs via Finsler-Lyapunov functions."""

from .certify import (
    CERTIFIED_IAS,
    CERTIFIED_IES,
    CERTIFIED_IS,
    COUNTEREXAMPLE,
    INCONCLUSIVE,
    CertificateReport,
    SamplingPlan,
    bendixson,
    certify_lmi,
    certify_measure,
    certify_region,
    certify_virtual,
    contraction_lhs,
    coordinate_invariance,
    integral_alpha_probe,
    lasalle,
    matrix_measure,
    matrix_measure_limit,
)
from .distance import DiscreteCurve, curve_length, empirical_decay, finsler_distance, pseudo_distance
from .dynamics import Region, System, make_builtin, make_virtual, TrajectorySource
from .experiments import SCENARIOS, run_scenario
from .finsler import FinslerLyapunov, HorizontalStructure, make_metric, property_suite
from .flow import Trajectory, fd_displacement_oracle, flow_map, integrate, integrate_prolonged
from .geometry import CoordinateSpace, Diffeomorphism

__version__ = "0.1.0"
