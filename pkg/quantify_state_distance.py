"""
quantify_state_distance - All state distances between an achieved and a goal
cloth state, collected in one report.
"""

from dataclasses import dataclass, asdict

from calculate_bipartite_distance import calculate_bipartite_distance
from calculate_chamfer_distance import calculate_chamfer_distance
from calculate_footprint_iou import calculate_footprint_iou


@dataclass(frozen=True)
class StateDistanceReport:
    mean_matched_distance: float
    chamfer: float
    iou: float

    def as_record(self):
        return asdict(self)


def quantify_state_distance(nodes, goal_nodes, threshold=0.1, cell=0.01, verbose=False):
    """
    Matched mean distance, Chamfer distance and footprint IoU.

    Parameters
    ----------
    nodes : array_like
        (M, 3) achieved node positions.
    goal_nodes : array_like
        (M_g, 3) goal node positions.
    threshold : float
        Matching threshold for the mean matched distance, meters.
    cell : float
        Footprint raster cell, meters.
    verbose : bool
        Print one progress line per metric.

    Returns
    -------
    StateDistanceReport
    """
    return StateDistanceReport(
        mean_matched_distance=calculate_bipartite_distance(nodes, goal_nodes, threshold, verbose),
        chamfer=calculate_chamfer_distance(nodes, goal_nodes, verbose),
        iou=calculate_footprint_iou(nodes, goal_nodes, cell, verbose),
    )
