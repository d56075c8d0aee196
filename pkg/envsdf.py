"""
envsdf - Signed distance fields of the rigid environments

Rigid scenes are unions of analytic primitives: the ground half-space
(always member zero), boxes, spheres, hemispheres and capsules. Each primitive
carries a translation and a rotation about the world z-axis. Queries return
the signed distance (negative inside) and the outward unit gradient, and are
vectorized over query points.

The five experimental scenes (flat, platform, hemisphere, pole, table) are
built by make_scenario.
"""

from dataclasses import dataclass, field

import numpy as np

from fling_errors import ConfigurationError, InvalidQueryError

PRIMITIVE_KINDS = ('halfspace', 'box', 'sphere', 'hemisphere', 'capsule')
SCENARIO_KINDS = ('flat', 'platform', 'hemisphere', 'pole', 'table')

_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SdfPrimitive:
    """
    One analytic primitive.

    Shape parameters by kind: halfspace has none (plane z = translation z,
    solid below), box has (hx, hy, hz) half-extents, sphere and hemisphere
    have (radius,), capsule has (half_length, radius) with its segment along
    the local y-axis. A hemisphere is the sphere cut to z >= center z.
    """

    kind: str
    translation: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise ConfigurationError(f'unknown primitive kind: {self.kind}')
        expected = {'halfspace': 0, 'box': 3, 'sphere': 1, 'hemisphere': 1, 'capsule': 2}[self.kind]
        if len(self.params) != expected:
            raise ConfigurationError(
                f'{self.kind} takes {expected} shape parameters, got {len(self.params)}')
        if any(p <= 0 for p in self.params):
            raise ConfigurationError(f'{self.kind} shape parameters must be positive: {self.params}')


@dataclass(frozen=True)
class ScenePlacement:
    """Randomized placement of the scene object (meters, degrees)."""

    y: float = 0.0
    z: float = None
    yaw_deg: float = 0.0


@dataclass(frozen=True)
class SceneSdf:
    primitives: tuple
    kind: str = 'custom'
    placement: ScenePlacement = field(default_factory=ScenePlacement)
    # xy of the object center, used when synthesizing target poses
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.primitives or self.primitives[0].kind != 'halfspace':
            raise ConfigurationError('scene member zero must be the ground half-space')

    @property
    def objects(self):
        return self.primitives[1:]

    def surface_height(self, xy):
        return surface_height(self, xy)


def ground_plane(height=0.0):
    return SdfPrimitive('halfspace', (0.0, 0.0, float(height)))


def _to_local(prim, points):
    p = points - np.asarray(prim.translation, dtype=float)
    if prim.yaw == 0.0:
        return p
    c, s = np.cos(prim.yaw), np.sin(prim.yaw)
    x = c * p[:, 0] + s * p[:, 1]
    y = -s * p[:, 0] + c * p[:, 1]
    return np.stack([x, y, p[:, 2]], axis=1)


def _to_world_dir(prim, g):
    if prim.yaw == 0.0:
        return g
    c, s = np.cos(prim.yaw), np.sin(prim.yaw)
    x = c * g[:, 0] - s * g[:, 1]
    y = s * g[:, 0] + c * g[:, 1]
    return np.stack([x, y, g[:, 2]], axis=1)


def _safe_normalize(v, fallback):
    n = np.linalg.norm(v, axis=1)
    out = np.empty_like(v)
    ok = n > 1e-15
    out[ok] = v[ok] / n[ok, None]
    out[~ok] = fallback
    return out, n


def _sdf_halfspace(p, params):
    d = p[:, 2].copy()
    g = np.tile(_UP, (len(p), 1))
    return d, g


def _sdf_box(p, params):
    b = np.asarray(params, dtype=float)
    q = np.abs(p) - b
    sign = np.where(p >= 0.0, 1.0, -1.0)

    outside_vec = np.maximum(q, 0.0)
    outside_len = np.linalg.norm(outside_vec, axis=1)
    inside = np.max(q, axis=1)
    d = outside_len + np.minimum(inside, 0.0)

    g = np.zeros_like(p)
    out = outside_len > 0.0
    g[out] = sign[out] * outside_vec[out] / outside_len[out, None]
    # inside or on the surface: face normal of the closest face
    axis = np.argmax(q[~out], axis=1)
    rows = np.nonzero(~out)[0]
    g[rows, axis] = sign[rows, axis]
    return d, g


def _sdf_sphere(p, params):
    r = params[0]
    g, n = _safe_normalize(p, _UP)
    return n - r, g


def _sdf_hemisphere(p, params):
    r = params[0]
    n = np.linalg.norm(p, axis=1)
    rho = np.linalg.norm(p[:, :2], axis=1)
    d = np.empty(len(p))
    g = np.empty_like(p)

    radial, _ = _safe_normalize(p, _UP)
    upper = p[:, 2] >= 0.0

    # above the cut plane, outside the ball: spherical cap
    cap = upper & (n >= r)
    d[cap] = n[cap] - r
    g[cap] = radial[cap]

    # inside the solid: nearer of cap and bottom disk
    inner = upper & (n < r)
    to_cap = r - n[inner]
    to_disk = p[inner, 2]
    use_cap = to_cap <= to_disk
    d[inner] = -np.minimum(to_cap, to_disk)
    g[inner] = np.where(use_cap[:, None], radial[inner], -_UP)

    # below the cut plane: bottom disk or its rim
    lower = ~upper
    under_disk = lower & (rho <= r)
    d[under_disk] = -p[under_disk, 2]
    g[under_disk] = -_UP

    beside = lower & (rho > r)
    rim = np.zeros((np.count_nonzero(beside), 3))
    rim[:, :2] = r * p[beside, :2] / rho[beside, None]
    v = p[beside] - rim
    gv, nv = _safe_normalize(v, -_UP)
    d[beside] = nv
    g[beside] = gv
    return d, g


def _sdf_capsule(p, params):
    half_length, r = params
    c = np.zeros_like(p)
    c[:, 1] = np.clip(p[:, 1], -half_length, half_length)
    g, n = _safe_normalize(p - c, _UP)
    return n - r, g


_SDF_FUNCS = {
    'halfspace': _sdf_halfspace,
    'box': _sdf_box,
    'sphere': _sdf_sphere,
    'hemisphere': _sdf_hemisphere,
    'capsule': _sdf_capsule,
}


def primitive_sdf(prim, points):
    """Signed distance and outward unit gradient of one primitive."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    local = _to_local(prim, pts)
    d, g = _SDF_FUNCS[prim.kind](local, prim.params)
    return d, _to_world_dir(prim, g)


def sdf_query(scene, points):
    """
    Signed distance and gradient of a scene.

    The composite distance is the minimum over members; the gradient is the
    gradient of the minimizing member, lowest member index on ties.

    Parameters
    ----------
    scene : SceneSdf
        Rigid environment.
    points : array_like
        One 3-vector or an (N, 3) array, meters.

    Returns
    -------
    distance : float or ndarray
        Signed distance, negative inside a primitive.
    gradient : ndarray
        Unit outward gradient, (3,) or (N, 3).
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)

    dists = np.empty((len(scene.primitives), len(pts)))
    grads = np.empty((len(scene.primitives), len(pts), 3))
    for i, prim in enumerate(scene.primitives):
        dists[i], grads[i] = primitive_sdf(prim, pts)

    member = np.argmin(dists, axis=0)
    cols = np.arange(len(pts))
    d = dists[member, cols]
    g = grads[member, cols]
    if single:
        return float(d[0]), g[0]
    return d, g


def nearest_surface_point(scene, points):
    """
    Closest point on the environment surface, q = x - d * grad.

    Raises InvalidQueryError for query points on or inside a solid.
    """
    pts = np.asarray(points, dtype=float)
    d, g = sdf_query(scene, pts)
    if np.any(np.asarray(d) <= 0.0):
        raise InvalidQueryError('nearest_surface_point queried on or inside a solid; resolve penetration first')
    if pts.ndim == 1:
        return pts - d * g
    return pts - d[:, None] * g


def surface_height(scene, xy, z_start=2.0, max_iter=200, tol=1e-9):
    """
    Height of the topmost surface under each xy, found by marching a vertical
    ray down from z_start with steps equal to the signed distance.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    z = np.full(len(xy), float(z_start))
    for _ in range(max_iter):
        d, _ = sdf_query(scene, np.column_stack([xy, z]))
        if np.all(d < tol):
            break
        z = z - np.maximum(d, 0.0)
    return z


def make_scenario(kind, placement=None, scene_cfg=None):
    """
    Build one of the experimental scenes.

    Parameters
    ----------
    kind : str
        flat, platform, hemisphere, pole or table.
    placement : ScenePlacement, optional
        Object y offset, height and yaw. The flat scene ignores it. The height
        sets the platform top; the other objects keep their fixed heights.
    scene_cfg : CfgNode, optional
        SCENE section of the run configuration. Defaults are used if omitted.

    Returns
    -------
    SceneSdf
    """
    if kind not in SCENARIO_KINDS:
        raise ConfigurationError(f'unknown scenario kind: {kind}')
    if scene_cfg is None:
        from config_defaults import get_cfg_defaults
        scene_cfg = get_cfg_defaults().SCENE
    if placement is None:
        placement = ScenePlacement()
    _check_placement(placement, scene_cfg)

    ground = ground_plane()
    if kind == 'flat':
        return SceneSdf((ground,), kind=kind, placement=placement,
                        center=(float(scene_cfg.object_x), 0.0))

    x = float(scene_cfg.object_x)
    y = float(placement.y)
    yaw = np.deg2rad(placement.yaw_deg)

    if kind == 'platform':
        top = float(placement.z) if placement.z is not None else float(scene_cfg.platform_height)
        half = scene_cfg.platform_side / 2.0
        obj = SdfPrimitive('box', (x, y, top / 2.0), yaw, (half, half, top / 2.0))
    elif kind == 'hemisphere':
        obj = SdfPrimitive('hemisphere', (x, y, 0.0), yaw, (float(scene_cfg.hemisphere_radius),))
    elif kind == 'pole':
        h = float(scene_cfg.pole_height)
        if scene_cfg.pole_shape == 'capsule':
            r = scene_cfg.pole_depth / 2.0
            obj = SdfPrimitive('capsule', (x, y, h - r), yaw,
                               (scene_cfg.pole_width / 2.0 - r, r))
        elif scene_cfg.pole_shape == 'box':
            obj = SdfPrimitive('box', (x, y, h / 2.0), yaw,
                               (scene_cfg.pole_depth / 2.0, scene_cfg.pole_width / 2.0, h / 2.0))
        else:
            raise ConfigurationError(f'unknown pole shape: {scene_cfg.pole_shape}')
    else:
        half = scene_cfg.table_side / 2.0
        t = scene_cfg.table_thickness / 2.0
        obj = SdfPrimitive('box', (x, y, scene_cfg.table_height - t), yaw, (half, half, t))

    return SceneSdf((ground, obj), kind=kind, placement=placement, center=(x, y))


def _check_placement(placement, scene_cfg):
    eps = 1e-9
    y_lo, y_hi = scene_cfg.y_range
    yaw_lo, yaw_hi = scene_cfg.yaw_range
    if not y_lo - eps <= placement.y <= y_hi + eps:
        raise ConfigurationError(f'placement y={placement.y} outside {scene_cfg.y_range}')
    if not yaw_lo - eps <= placement.yaw_deg <= yaw_hi + eps:
        raise ConfigurationError(f'placement yaw={placement.yaw_deg} outside {scene_cfg.yaw_range}')
    if placement.z is not None:
        z_lo, z_hi = scene_cfg.z_range
        if not z_lo - eps <= placement.z <= z_hi + eps:
            raise ConfigurationError(f'placement z={placement.z} outside {scene_cfg.z_range}')
