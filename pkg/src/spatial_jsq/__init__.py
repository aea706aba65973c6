"""Power-of-d load balancing on bipartite compatibility graphs.

Graph generators and metrics, a uniformized JSQ(d) simulator, the mean-field
ODE, a monotone coupling harness, and an experiment runner.
"""

from .coupling import (CoupledState, OrderingViolation, coupled_arrival, coupled_departure,
                       coupled_simulate, mixing_experiment)
from .dynamics import (OccupancyVector, SimConfig, SystemState, assignment_distribution,
                       jsq_d_select, local_occupancy, rate_ratio, simulate, steady_state_estimate)
from .graphs import (BipartiteGraph, build_graph, generate_complete, generate_configuration_regular,
                     generate_geometric, is_regular, metric_gamma, metric_phi, metric_rho)
from .meanfield import fixed_point, integrate, l1_distance, l2_distance, ode_rhs

__version__ = "0.1.0"
