"""ILP model of the S1 grouping problem and its solvers."""

from .model import (IlpModel, build_model, decode_assignment, k_min,
                    schedule_to_mip_start)
from .search import (FEASIBLE, PROVED, TIMEOUT, Incumbent, Solution, band_orders,
                     best_heuristic, brute_force_optimum, is_feasible, solution_to_schedule, solve)

__all__ = [
    "IlpModel", "build_model", "decode_assignment", "k_min", "schedule_to_mip_start",
    "Solution", "Incumbent", "solve", "brute_force_optimum", "best_heuristic", "is_feasible",
    "solution_to_schedule", "band_orders", "PROVED", "FEASIBLE", "TIMEOUT",
]
