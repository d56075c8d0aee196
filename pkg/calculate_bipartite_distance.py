"""
calculate_bipartite_distance - Matched mean distance between two node sets

The nodes of the smaller set are matched one-to-one to nodes of the other set
by an exact minimum-cost assignment on Euclidean distances. Matched pairs
farther apart than the threshold are left out of the mean.

D(S, S_g) = mean over admissible matched pairs of ||x_i - x_g(i)||
"""

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


def calculate_bipartite_distance(nodes, goal_nodes, threshold=0.1, verbose=False):
    """
    Mean matched distance between two node sets.

    Parameters
    ----------
    nodes : array_like
        (M, 3) node positions, meters.
    goal_nodes : array_like
        (M_g, 3) goal node positions, meters.
    threshold : float
        Matched pairs farther apart than this are excluded from the mean.
    verbose : bool
        Print the progress line.

    Returns
    -------
    float
        Mean matched distance in meters. If no matched pair is within the
        threshold the threshold itself is returned.
    """
    if verbose:
        print('-   Calculating: Bipartite matching distance')
    a = np.asarray(nodes, dtype=float).reshape(-1, 3)
    b = np.asarray(goal_nodes, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError('bipartite distance needs two non-empty node sets')

    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    matched = cost[rows, cols]
    admissible = matched[matched <= threshold]
    if len(admissible) == 0:
        return float(threshold)
    return float(np.mean(admissible))
