"""Optimal and congested transport in the first Heisenberg group."""

from ._backend import BACKEND
from .beckmann import CostSpec, duality_report, linear_oracle, recover_primal, solve_dual
from .errors import InfeasibleError, InputError, NumericalError
from .geodesy import GeodesicParams, Polyline, cc_distance, geodesic_point, select_geodesic
from .grid import Grid, GridField, HorizontalGridField, horizontal_divergence, horizontal_gradient
from .group import GroupPoint, MollifierSpec, dilate, group_inv, group_mul
from .kantorovich import DiscreteMeasure, TransportPlan, recover_potential, solve_mk, transport_density
from .moser import TrafficPlan, build_traffic_plan, congested_cost, estimate_intensity, verify_moser_identity

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CostSpec", "DiscreteMeasure", "GeodesicParams", "Grid", "GridField", "GroupPoint",
    "HorizontalGridField", "InfeasibleError", "InputError", "MollifierSpec", "NumericalError", "Polyline",
    "TrafficPlan", "TransportPlan", "build_traffic_plan", "cc_distance", "congested_cost", "dilate",
    "duality_report", "estimate_intensity", "geodesic_point", "group_inv", "group_mul", "horizontal_divergence",
    "horizontal_gradient", "linear_oracle", "recover_potential", "recover_primal", "select_geodesic", "solve_dual",
    "solve_mk", "transport_density", "verify_moser_identity",
]
