"""Pipe-diameter optimisation for water distribution networks."""
from .cost import CostBreakdown, Evaluator, PenaltyConfig, total_cost
from .hydraulics import HydraulicState, solve_steady_state
from .ingest import load_benchmark, parse_network, read_network, replicate_network
from .network import DesignVector, DiameterTable, Flavor, Node, Pipe, PipeNetwork, round_to_commercial

__version__ = "0.1.0"
