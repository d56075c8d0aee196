"""
voxel_downsample - Voxel-grid downsampling of a point set

Points are bucketed into cubic voxels of the given edge length. Every
occupied voxel yields one node at the centroid of its members.
"""

import numpy as np


def voxel_downsample(points, voxel):
    """
    Downsample points to voxel centroids.

    Parameters
    ----------
    points : array_like
        (K, 3) point coordinates in meters.
    voxel : float
        Voxel edge length in meters.

    Returns
    -------
    centroids : ndarray
        (M, 3) centroid of each occupied voxel, voxels in lexicographic order
        of their integer coordinates.
    mapping : ndarray
        (K,) node index of every input point.
    """
    if voxel <= 0:
        raise ValueError(f'voxel size must be positive, got {voxel}')
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)

    keys = np.floor(pts / voxel).astype(np.int64)
    _, mapping = np.unique(keys, axis=0, return_inverse=True)
    mapping = mapping.reshape(-1)
    centroids = pool_members(pts, mapping, mapping.max() + 1)
    return centroids, mapping


def pool_members(points, mapping, n_nodes):
    """Centroid of the points mapped to each node."""
    counts = np.bincount(mapping, minlength=n_nodes).astype(float)
    centroids = np.zeros((n_nodes, 3))
    for axis in range(3):
        centroids[:, axis] = np.bincount(mapping, weights=points[:, axis], minlength=n_nodes)
    return centroids / counts[:, None]
