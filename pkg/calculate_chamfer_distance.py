"""
calculate_chamfer_distance - Double-sided Chamfer distance between point sets

chamfer = ( mean_a min_b ||a - b|| + mean_b min_a ||b - a|| ) / 2
"""

import numpy as np
from scipy.spatial import cKDTree


def calculate_chamfer_distance(points_a, points_b, verbose=False):
    """
    Symmetric Chamfer distance in meters.

    Parameters
    ----------
    points_a, points_b : array_like
        (K, 3) and (L, 3) point sets, both non-empty.

    Returns
    -------
    float
    """
    if verbose:
        print('-   Calculating: Chamfer distance')
    a = np.asarray(points_a, dtype=float).reshape(-1, 3)
    b = np.asarray(points_b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError('Chamfer distance needs two non-empty point sets')
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(0.5 * (np.mean(d_ab) + np.mean(d_ba)))
