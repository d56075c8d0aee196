"""
calculate_footprint_iou - Intersection over union of ground-plane footprints

Both node sets are projected onto the ground plane and rasterized on a common
grid of square cells. A cell is occupied when a node falls inside it; the
occupancy is then dilated by one cell.

iou = |X ∩ Y|      using the occupied cells
      ---------
      |X ∪ Y|
"""

import numpy as np
from scipy.ndimage import binary_dilation

_NEIGHBORHOOD = np.ones((3, 3), dtype=bool)


def _occupancy(cells, origin, shape):
    grid = np.zeros(shape, dtype=bool)
    if len(cells):
        idx = cells - origin
        grid[idx[:, 0], idx[:, 1]] = True
    return binary_dilation(grid, structure=_NEIGHBORHOOD)


def calculate_footprint_iou(nodes, goal_nodes, cell=0.01, verbose=False):
    """
    Footprint IoU between two node sets.

    Parameters
    ----------
    nodes : array_like
        (M, 3) achieved node positions, meters.
    goal_nodes : array_like
        (M_g, 3) goal node positions, meters.
    cell : float
        Raster cell size, meters.

    Returns
    -------
    float
        IoU in [0, 1]; two empty footprints give 1.0.
    """
    if verbose:
        print('-   Calculating: Footprint IoU')
    if cell <= 0:
        raise ValueError(f'cell size must be positive, got {cell}')
    a = np.asarray(nodes, dtype=float).reshape(-1, 3)
    b = np.asarray(goal_nodes, dtype=float).reshape(-1, 3)
    ca = np.floor(a[:, :2] / cell).astype(np.int64)
    cb = np.floor(b[:, :2] / cell).astype(np.int64)

    both = np.concatenate([ca, cb])
    if len(both) == 0:
        return 1.0
    # one spare cell on each side for the dilation
    origin = both.min(axis=0) - 1
    shape = tuple(both.max(axis=0) - origin + 2)

    occ_a = _occupancy(ca, origin, shape)
    occ_b = _occupancy(cb, origin, shape)
    union = np.sum(occ_a | occ_b)
    if union == 0:
        return 1.0
    return float(np.sum(occ_a & occ_b) / union)
