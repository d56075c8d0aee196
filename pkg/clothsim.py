"""
clothsim - Ground-truth mass-spring cloth simulator

A rectangular particle grid with stretch (grid neighbors), shear (diagonals)
and bend (two-apart neighbors) springs, integrated with semi-implicit Euler
and collided against a SceneSdf. Two pickers hold the corners of row 0.

Particle (r, c) has index r * cols + c. The grasped corners are particle 0
(left picker) and particle cols - 1 (right picker).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from envsdf import sdf_query
from fling_errors import ConfigurationError, SimulationDivergedError

STRETCH, SHEAR, BEND = 0, 1, 2

# omega * h bound for the explicit spring update (stable below 2)
_STABILITY_MARGIN = 1.8


@dataclass(frozen=True)
class ClothConfig:
    rows: int = 13
    cols: int = 13
    spacing: float = 0.025
    mass: float = 0.275
    stretch_scale: float = 1.0
    bend_scale: float = 1.0
    shear_scale: float = 1.0
    damping: float = 1.0
    stretch_stiffness: float = 800.0
    shear_stiffness: float = 200.0
    bend_stiffness: float = 50.0
    reference_particle_mass: float = 0.005

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ConfigurationError(f'cloth needs at least 2x2 particles, got {self.rows}x{self.cols}')
        if self.spacing <= 0 or self.mass <= 0:
            raise ConfigurationError('cloth spacing and mass must be positive')
        for name in ('stretch_scale', 'bend_scale', 'shear_scale'):
            value = getattr(self, name)
            if not 0.0 < value <= 10.0:
                raise ConfigurationError(f'{name}={value} outside (0, 10]')
        if self.damping < 0:
            raise ConfigurationError('cloth damping must be non-negative')

    @property
    def n_particles(self):
        return self.rows * self.cols

    @property
    def particle_mass(self):
        return self.mass / self.n_particles

    @property
    def edge_length(self):
        """Rest length of the grasped edge."""
        return (self.cols - 1) * self.spacing

    @classmethod
    def from_cfg(cls, cloth_cfg, **values):
        return cls(
            spacing=cloth_cfg.spacing,
            damping=cloth_cfg.damping,
            stretch_stiffness=cloth_cfg.stretch_stiffness,
            shear_stiffness=cloth_cfg.shear_stiffness,
            bend_stiffness=cloth_cfg.bend_stiffness,
            reference_particle_mass=cloth_cfg.reference_particle_mass,
            **values,
        )


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    substeps: int = 4
    auto_substeps: bool = True
    gravity: tuple = (0.0, 0.0, -9.81)
    friction: float = 0.3
    # pickers and goal targets keep this clearance from surfaces
    particle_radius: float = 0.00625
    projection_passes: int = 3

    @classmethod
    def from_cfg(cls, sim_cfg):
        return cls(
            dt=sim_cfg.dt,
            substeps=sim_cfg.substeps,
            auto_substeps=sim_cfg.auto_substeps,
            gravity=tuple(sim_cfg.gravity),
            friction=sim_cfg.friction,
            particle_radius=sim_cfg.particle_radius,
            projection_passes=sim_cfg.projection_passes,
        )


@dataclass(frozen=True)
class ClothTopology:
    """Spring network shared by every state of one cloth."""

    rows: int
    cols: int
    edges: np.ndarray
    edge_type: np.ndarray
    rest_length: np.ndarray
    stiffness: np.ndarray
    incidence: sparse.csr_matrix

    @property
    def stretch_edges(self):
        return self.edges[self.edge_type == STRETCH]

    @property
    def shear_edges(self):
        return self.edges[self.edge_type == SHEAR]

    @property
    def bend_edges(self):
        return self.edges[self.edge_type == BEND]


@dataclass(frozen=True)
class ClothState:
    positions: np.ndarray
    velocities: np.ndarray
    picked: tuple
    topology: ClothTopology
    config: ClothConfig
    attached: bool = True
    time: float = 0.0
    substeps: int = field(default=0, compare=False)

    @property
    def n_particles(self):
        return len(self.positions)

    @property
    def picker_positions(self):
        return self.positions[list(self.picked)]


def grid_edges(rows, cols):
    """Stretch, shear and bend index pairs of a rows x cols particle grid."""
    idx = np.arange(rows * cols).reshape(rows, cols)
    stretch = np.concatenate([
        np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
    ])
    shear = np.concatenate([
        np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1),
        np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1),
    ])
    bend = np.concatenate([
        np.stack([idx[:, :-2].ravel(), idx[:, 2:].ravel()], axis=1),
        np.stack([idx[:-2, :].ravel(), idx[2:, :].ravel()], axis=1),
    ])
    return stretch.reshape(-1, 2), shear.reshape(-1, 2), bend.reshape(-1, 2)


def _build_topology(config):
    stretch, shear, bend = grid_edges(config.rows, config.cols)
    edges = np.concatenate([stretch, shear, bend]).astype(np.int64)
    edge_type = np.concatenate([
        np.full(len(stretch), STRETCH), np.full(len(shear), SHEAR), np.full(len(bend), BEND),
    ])
    s = config.spacing
    rest = np.concatenate([
        np.full(len(stretch), s), np.full(len(shear), s * math.sqrt(2.0)), np.full(len(bend), 2.0 * s),
    ])

    mass_factor = 1.0
    if config.reference_particle_mass > 0:
        mass_factor = config.particle_mass / config.reference_particle_mass
    k_type = np.array([
        config.stretch_stiffness * config.stretch_scale,
        config.shear_stiffness * config.shear_scale,
        config.bend_stiffness * config.bend_scale,
    ]) * mass_factor
    stiffness = k_type[edge_type]

    n = config.n_particles
    e = np.arange(len(edges))
    incidence = sparse.csr_matrix(
        (np.concatenate([np.ones(len(edges)), -np.ones(len(edges))]),
         (np.concatenate([edges[:, 0], edges[:, 1]]), np.concatenate([e, e]))),
        shape=(n, len(edges)),
    )
    return ClothTopology(config.rows, config.cols, edges, edge_type, rest, stiffness, incidence)


def link_direction(theta):
    """Unit vector from the right picker to the left picker at yaw theta."""
    return np.array([-math.sin(theta), math.cos(theta), 0.0])


def make_cloth(config, midpoint=(0.0, 0.0, 0.5), theta=0.0, separation=None, sim=None):
    """
    Cloth hanging from two pickers.

    Parameters
    ----------
    config : ClothConfig
        Cloth geometry, mass and stiffness.
    midpoint : array_like
        Midpoint of the two pickers (m_s), meters.
    theta : float
        Yaw of the picker link, radians.
    separation : float, optional
        Picker separation L. Defaults to the grasped-edge rest length and must
        match it within 5%.
    sim : SimConfig, optional
        Used to record the substep count the cloth will run with.

    Returns
    -------
    ClothState
        Rest-length hanging cloth with zero velocities.
    """
    rest_edge = config.edge_length
    if separation is None:
        separation = rest_edge
    if abs(separation - rest_edge) > 0.05 * rest_edge:
        raise ConfigurationError(
            f'picker separation {separation:.4f} m differs from grasped edge {rest_edge:.4f} m by more than 5%')

    m = np.asarray(midpoint, dtype=float)
    u = link_direction(theta)
    left = m + 0.5 * separation * u
    col_step = -u * separation / (config.cols - 1)

    r, c = np.meshgrid(np.arange(config.rows), np.arange(config.cols), indexing='ij')
    positions = (left[None, None, :]
                 + c[..., None] * col_step[None, None, :]
                 - r[..., None] * np.array([0.0, 0.0, config.spacing]))
    positions = positions.reshape(-1, 3)

    topology = _build_topology(config)
    if sim is None:
        sim = SimConfig()
    return ClothState(
        positions=positions,
        velocities=np.zeros_like(positions),
        picked=(0, config.cols - 1),
        topology=topology,
        config=config,
        substeps=effective_substeps(topology, config, sim),
    )


def flat_cloth(config, grasped_midpoint, theta, height, sim=None):
    """Flat, unattached cloth with its grasped edge centered at grasped_midpoint."""
    state = make_cloth(config, grasped_midpoint, theta, sim=sim)
    forward = np.array([math.cos(theta), math.sin(theta), 0.0])
    r = np.repeat(np.arange(config.rows), config.cols)
    positions = state.positions.copy()
    top = positions[:config.cols]
    positions = np.tile(top, (config.rows, 1)) + r[:, None] * config.spacing * forward[None, :]
    positions[:, 2] = height
    return replace(state, positions=positions, attached=False)


def effective_substeps(topology, config, sim):
    """Substeps per frame, raised when needed for spring stability."""
    if not sim.auto_substeps:
        return int(sim.substeps)
    row_sum = np.bincount(topology.edges.ravel(), weights=np.repeat(topology.stiffness, 2),
                          minlength=config.n_particles)
    omega = math.sqrt(2.0 * row_sum.max() / config.particle_mass)
    needed = math.ceil(sim.dt * omega / _STABILITY_MARGIN)
    return int(max(sim.substeps, needed))


def spring_forces(positions, edges, rest_length, stiffness, incidence=None):
    """Hooke forces of all springs, accumulated per particle (N, 3)."""
    d = positions[edges[:, 1]] - positions[edges[:, 0]]
    length = np.linalg.norm(d, axis=1)
    safe = np.where(length > 1e-12, length, 1.0)
    f = (stiffness * (length - rest_length) / safe)[:, None] * d
    f[length <= 1e-12] = 0.0
    if incidence is None:
        out = np.zeros_like(positions)
        np.add.at(out, edges[:, 0], f)
        np.add.at(out, edges[:, 1], -f)
        return out
    return incidence @ f


def _collide(x, v, scene, free, sim, friction_factor):
    # contact only below the surface; particles at d >= 0 are left untouched
    d, g = sdf_query(scene, x[free])
    hit = d < 0.0
    if np.any(hit):
        rows = np.nonzero(free)[0][hit]
        gh = g[hit]
        x[rows] -= d[hit][:, None] * gh
        vn = np.einsum('ij,ij->i', v[rows], gh)
        tangential = v[rows] - vn[:, None] * gh
        # inward normal velocity removed, separating velocity kept
        v[rows] = tangential * friction_factor + np.maximum(vn, 0.0)[:, None] * gh
    for _ in range(sim.projection_passes - 1):
        d, g = sdf_query(scene, x[free])
        hit = d < 0.0
        if not np.any(hit):
            break
        rows = np.nonzero(free)[0][hit]
        x[rows] -= d[hit][:, None] * g[hit]


def step(state, scene, picker_delta=None, dt=0.01, sim=None, picker_targets=None, step_index=None):
    """
    Advance the cloth by one frame.

    Parameters
    ----------
    state : ClothState
        Current state.
    scene : SceneSdf
        Rigid environment.
    picker_delta : array_like, optional
        (2, 3) picker displacements for this frame, meters.
    dt : float
        Frame duration, seconds.
    sim : SimConfig, optional
        Integration and contact settings.
    picker_targets : array_like, optional
        (2, 3) absolute picker positions at the end of the frame. Takes
        precedence over picker_delta.
    step_index : int, optional
        Reported in SimulationDivergedError.

    Returns
    -------
    ClothState
    """
    if dt <= 0:
        raise ConfigurationError(f'dt must be positive, got {dt}')
    if sim is None:
        sim = SimConfig(dt=dt)
    topo = state.topology
    config = state.config
    picked = np.asarray(state.picked)

    x = state.positions.copy()
    v = state.velocities.copy()
    free = np.ones(len(x), dtype=bool)

    if state.attached:
        start = x[picked].copy()
        if picker_targets is not None:
            target = np.asarray(picker_targets, dtype=float)
        elif picker_delta is not None:
            target = start + np.asarray(picker_delta, dtype=float)
        else:
            target = start
        if not np.all(np.isfinite(target)):
            raise SimulationDivergedError(f'non-finite picker command at step {step_index}', step_index)
        delta = target - start
        free[picked] = False

    if sim.auto_substeps:
        n_sub = state.substeps or effective_substeps(topo, config, sim)
    else:
        n_sub = int(sim.substeps)
    h = dt / n_sub
    gravity = np.asarray(sim.gravity, dtype=float)
    inv_m = 1.0 / config.particle_mass
    friction_factor = (1.0 - sim.friction) ** (1.0 / n_sub)

    for k in range(1, n_sub + 1):
        force = spring_forces(x, topo.edges, topo.rest_length, topo.stiffness, topo.incidence)
        acc = force * inv_m + gravity - config.damping * v
        v[free] += h * acc[free]
        x[free] += h * v[free]
        if state.attached:
            x[picked] = start + delta * (k / n_sub)
            v[picked] = delta / dt
        _collide(x, v, scene, free, sim, friction_factor)

    if state.attached:
        x[picked] = target
        v[picked] = delta / dt

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise SimulationDivergedError(f'simulation diverged at step {step_index}', step_index)

    return replace(state, positions=x, velocities=v, time=state.time + dt, substeps=n_sub)


def picker_path(plan):
    """(T+1, 2, 3) picker positions of a FlingPlan or an explicit array."""
    if hasattr(plan, 'pickers'):
        return plan.pickers
    path = np.asarray(plan, dtype=float)
    if path.ndim != 3 or path.shape[1:] != (2, 3):
        raise ConfigurationError(f'picker path must be (T+1, 2, 3), got {path.shape}')
    return path


def picker_clearance(scene, plan, start=0):
    """Smallest scene distance of either picker along a plan (from step start)."""
    path = picker_path(plan)[start:]
    d, _ = sdf_query(scene, path.reshape(-1, 3))
    return float(np.min(d))


def rollout_ground_truth(state, scene, plan, sim=None, start=0):
    """
    Simulate the cloth along a plan.

    Returns a list with one ClothState per frame, the input state first, so
    its length is the number of plan steps plus one.
    """
    if sim is None:
        sim = SimConfig()
    path = picker_path(plan)[start:]
    states = [state]
    for t in range(len(path) - 1):
        states.append(step(states[-1], scene, dt=sim.dt, sim=sim,
                           picker_targets=path[t + 1], step_index=start + t))
    return states


def release(state):
    """Detach the cloth from both pickers."""
    return replace(state, attached=False)


def kinetic_energy(state):
    return 0.5 * state.config.particle_mass * float(np.sum(state.velocities ** 2))


def settle(state, scene, n_steps, sim=None):
    """Run n_steps with static pickers; returns the final state."""
    if sim is None:
        sim = SimConfig()
    for t in range(n_steps):
        state = step(state, scene, dt=sim.dt, sim=sim, step_index=t)
    return state
