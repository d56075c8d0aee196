"""
datagen - Randomized scenarios, goal synthesis and trajectory collection

Draws cloth and scene parameters from their randomization ranges, builds
fling plans through random turning points, runs the ground-truth simulator
and records every trajectory at the simulation rate. Goals are synthesized by
dropping a flat cloth onto the scene and letting it settle, so every goal is
a state the simulator can reach.
"""

import math
import os
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from build_graph import sampler_from_cfg
from clothsim import (ClothConfig, SimConfig, flat_cloth, kinetic_energy, make_cloth, picker_clearance,
                      rollout_ground_truth, settle)
from config_defaults import KINDS, get_cfg_defaults
from dataset_io import write_index, write_trajectory
from envsdf import ScenePlacement, make_scenario, sdf_query, surface_height
from fling_errors import ConfigurationError, SimulationDivergedError, SimulationError
from seeding import (STREAM_CLOTH, STREAM_EPISODE, STREAM_GOAL, STREAM_SCENE, STREAM_SPLIT,
                     STREAM_TURNING_POINT, child_rng)
from trajectory import manipulation_plane, plan_from_turning_point

GOAL_ATTEMPTS = 5
DROP_CLEARANCE = 0.03
TURNING_POINT_DRAWS = 20


@dataclass(frozen=True)
class GoalState:
    nodes: np.ndarray
    particles: np.ndarray
    m_g: np.ndarray
    theta_g: float
    kinetic_energy: float


def sample_cloth(rng, cloth_cfg=None):
    """
    Random cloth: mass, size and the three stiffness scales drawn uniformly.

    The cloth is square; rows = cols = round(size / spacing) + 1.
    """
    if cloth_cfg is None:
        cloth_cfg = get_cfg_defaults().CLOTH
    mass = rng.uniform(*cloth_cfg.mass_range)
    size = rng.uniform(*cloth_cfg.size_range)
    stretch = rng.uniform(*cloth_cfg.stretch_range)
    bend = rng.uniform(*cloth_cfg.bend_range)
    shear = rng.uniform(*cloth_cfg.shear_range)
    n = int(round(size / cloth_cfg.spacing)) + 1
    return ClothConfig.from_cfg(cloth_cfg, rows=n, cols=n, mass=float(mass), stretch_scale=float(stretch),
                                bend_scale=float(bend), shear_scale=float(shear))


def sample_placement(rng, scene_cfg):
    z = rng.uniform(*scene_cfg.z_range)
    y = rng.uniform(*scene_cfg.y_range)
    yaw = rng.uniform(*scene_cfg.yaw_range)
    return ScenePlacement(y=float(y), z=float(z), yaw_deg=float(yaw))


def sample_scenario(kind, rng, scene_cfg=None):
    """Scene of the given kind with a random object placement."""
    if scene_cfg is None:
        scene_cfg = get_cfg_defaults().SCENE
    placement = sample_placement(rng, scene_cfg)
    if kind == 'flat':
        placement = ScenePlacement()
    return make_scenario(kind, placement, scene_cfg)


def start_midpoint(cloth, cloth_cfg):
    """Picker midpoint m_s of the hanging start configuration."""
    return np.array([0.0, 0.0, (cloth.rows - 1) * cloth.spacing + cloth_cfg.start_clearance])


def edge_height(scene, midpoint, theta, L):
    """Highest surface under a picker link of length L (sampled along the link)."""
    link = np.array([-math.sin(theta), math.cos(theta)])
    xy = np.asarray(midpoint, dtype=float)[:2]
    points = xy[None, :] + np.linspace(-0.5, 0.5, 9)[:, None] * L * link[None, :]
    return float(surface_height(scene, points).max())


def sample_target_pose(scene, cloth, rng, cfg):
    """
    Random target for the grasped edge: the cloth centered near the object
    with a random yaw. Returns (m_g, theta_g).
    """
    jitter = cfg.DATA.goal_jitter
    center = np.asarray(scene.center, dtype=float) + rng.uniform(-jitter, jitter, size=2)
    theta = math.radians(rng.uniform(*cfg.SCENE.yaw_range))
    forward = np.array([math.cos(theta), math.sin(theta)])
    depth = (cloth.rows - 1) * cloth.spacing
    xy = center - 0.5 * depth * forward
    z = edge_height(scene, xy, theta, cloth.edge_length) + cfg.SIM.particle_radius + cfg.TRAJ.release_clearance
    return np.array([xy[0], xy[1], z]), theta


def sample_turning_point(rng, frame, m_g, sampler_cfg):
    """Turning point (u_x, u_z): u_x a random fraction of the horizontal span."""
    span = float(np.linalg.norm((np.asarray(m_g) - frame.origin)[:2]))
    frac = rng.uniform(*sampler_cfg.ux_range)
    uz = rng.uniform(*sampler_cfg.uz_range)
    return np.array([frac * span, uz])


def _link_yaw(left, right):
    d = np.asarray(left) - np.asarray(right)
    return math.atan2(-d[0], d[1])


def goal_state_for(scene, kind, rng, cloth, cfg, sampler=None):
    """
    Settled goal state for a scene.

    A flat cloth is placed just above the scene at a random target pose and
    released; after SIM.settle_seconds its kinetic energy must be below
    SIM.settle_energy, otherwise a new pose is drawn.

    Parameters
    ----------
    scene : SceneSdf
    kind : str
        Scenario kind, checked against the scene.
    rng : numpy.random.Generator
    cloth : ClothConfig
    cfg : CfgNode
    sampler : NodeSampler, optional
        Node sampler of the episode cloth; a grid sampler from cfg otherwise.

    Returns
    -------
    GoalState
    """
    if kind != scene.kind:
        raise ConfigurationError(f'goal kind {kind} does not match scene kind {scene.kind}')
    sim = SimConfig.from_cfg(cfg.SIM)
    n_steps = int(round(cfg.SIM.settle_seconds / sim.dt))

    for attempt in range(GOAL_ATTEMPTS):
        pose_edge, theta = sample_target_pose(scene, cloth, rng, cfg)
        state = flat_cloth(cloth, pose_edge, theta, 0.0, sim)
        height = surface_height(scene, state.positions[:, :2]).max() + DROP_CLEARANCE
        state = flat_cloth(cloth, pose_edge, theta, height, sim)
        if sampler is None:
            sampler = sampler_from_cfg(make_cloth(cloth, sim=sim), cfg.GRAPH)
        try:
            state = settle(state, scene, n_steps, sim)
        except SimulationDivergedError as e:
            warnings.warn(f'goal settling diverged ({e}); drawing a new pose')
            continue
        energy = kinetic_energy(state)
        if energy < cfg.SIM.settle_energy:
            left, right = state.positions[list(state.picked)]
            return GoalState(
                nodes=sampler.nodes(state.positions),
                particles=state.positions,
                m_g=0.5 * (left + right),
                theta_g=_link_yaw(left, right),
                kinetic_energy=energy,
            )
        warnings.warn(f'goal for {kind} not settled after {cfg.SIM.settle_seconds} s '
                      f'(kinetic energy {energy:.2e} J, attempt {attempt + 1}); drawing a new pose')
    raise SimulationError(f'could not synthesize a settled {kind} goal in {GOAL_ATTEMPTS} attempts')


def perturb_stiffness(cloth, rng, mismatch):
    """Cloth with every stiffness scale multiplied by 1 + U(-mismatch, mismatch)."""
    if mismatch <= 0.0:
        return cloth
    factors = 1.0 + rng.uniform(-mismatch, mismatch, size=3)
    return replace(
        cloth,
        stretch_scale=float(cloth.stretch_scale * factors[0]),
        bend_scale=float(cloth.bend_scale * factors[1]),
        shear_scale=float(cloth.shear_scale * factors[2]),
    )


@dataclass(frozen=True)
class Episode:
    """
    One benchmark context.

    cloth is what the controller's dynamics believes; true_cloth is what the
    ground-truth simulator runs, its stiffness scales perturbed.
    """

    kind: str
    index: int
    cloth: ClothConfig
    true_cloth: ClothConfig
    scene: object
    goal: GoalState
    sampler: object


def make_episode(kind, index, seed, cfg, mismatch=0.0):
    """
    Seeded episode context: cloth, scene, settled goal and node sampler.

    Draws are addressed by (seed, STREAM_EPISODE, kind, index, part), so an
    episode does not depend on which other episodes were generated.
    """
    k = KINDS.index(kind)
    sim = SimConfig.from_cfg(cfg.SIM)
    cloth = sample_cloth(child_rng(seed, STREAM_EPISODE, k, index, 0), cfg.CLOTH)
    scene = sample_scenario(kind, child_rng(seed, STREAM_EPISODE, k, index, 1), cfg.SCENE)
    true_cloth = perturb_stiffness(cloth, child_rng(seed, STREAM_EPISODE, k, index, 2), mismatch)
    start = make_cloth(true_cloth, start_midpoint(true_cloth, cfg.CLOTH), 0.0, sim=sim)
    sampler = sampler_from_cfg(start, cfg.GRAPH)
    goal = goal_state_for(scene, kind, child_rng(seed, STREAM_EPISODE, k, index, 3), true_cloth, cfg, sampler)
    return Episode(kind, int(index), cloth, true_cloth, scene, goal, sampler)


def simulate_trajectory(traj_index, attempt, kind, seed, cfg):
    """One random fling in a random scene; returns (header, node positions, pickers)."""
    sim = SimConfig.from_cfg(cfg.SIM)
    cloth = sample_cloth(child_rng(seed, STREAM_CLOTH, traj_index, attempt), cfg.CLOTH)
    scene = sample_scenario(kind, child_rng(seed, STREAM_SCENE, traj_index, attempt), cfg.SCENE)

    m_s = start_midpoint(cloth, cfg.CLOTH)
    state = make_cloth(cloth, m_s, 0.0, sim=sim)
    sampler = sampler_from_cfg(state, cfg.GRAPH)

    m_g, theta_g = sample_target_pose(scene, cloth, child_rng(seed, STREAM_GOAL, traj_index, attempt), cfg)
    frame = manipulation_plane(m_s, m_g)
    rng = child_rng(seed, STREAM_TURNING_POINT, traj_index, attempt)
    for _ in range(TURNING_POINT_DRAWS):
        u = sample_turning_point(rng, frame, m_g, cfg.SAMPLER)
        plan = plan_from_turning_point(frame, u, m_g, cfg.TRAJ.accel, sim.dt, cloth.edge_length, 0.0, theta_g,
                                       hold_steps=cfg.TRAJ.hold_steps, min_height=cfg.TRAJ.min_turning_height)
        if picker_clearance(scene, plan) >= sim.particle_radius:
            break
    else:
        raise SimulationDivergedError(f'no collision-free turning point for trajectory {traj_index} '
                                      f'in {TURNING_POINT_DRAWS} draws')

    states = rollout_ground_truth(state, scene, plan, sim)
    particles = np.stack([s.positions for s in states])
    if np.min(sdf_query(scene, particles.reshape(-1, 3))[0]) < -1e-4:
        raise SimulationDivergedError(f'trajectory {traj_index} penetrates the scene')

    header = {
        'traj_id': int(traj_index),
        'attempt': int(attempt),
        'dt': sim.dt,
        'scenario': {'kind': kind, 'y': scene.placement.y, 'z': scene.placement.z,
                     'yaw_deg': scene.placement.yaw_deg},
        'cloth': asdict(cloth),
        'plan': {
            'u': plan.u.tolist(), 'm_s': plan.m_s.tolist(), 'm_m': plan.m_m.tolist(),
            'm_g': plan.m_g.tolist(), 'theta_s': plan.theta_s, 'theta_g': plan.theta_g,
            'L': plan.L, 'turning_step': plan.turning_step, 'motion_steps': plan.motion_steps,
            'hold_steps': plan.hold_steps, 'clamped': plan.clamped,
        },
        'sampler': {'mode': sampler.mode, 'downsample': cfg.GRAPH.downsample, 'min_grid': cfg.GRAPH.min_grid,
                    'voxel': cfg.GRAPH.voxel},
        'picked_nodes': sampler.picked_nodes.tolist(),
        'mesh_edges': sampler.mesh_edges.tolist(),
    }
    return header, sampler.nodes(particles), plan.pickers


def collect(n_traj, kinds, seed, cfg, out_dir, verbose=True):
    """
    Collect a trajectory dataset.

    Parameters
    ----------
    n_traj : int
        Number of trajectories, at least 10.
    kinds : list of str
        Scenario kinds, assigned round-robin.
    seed : int
        Root seed.
    cfg : CfgNode
    out_dir : str
        Dataset directory; traj_<id>.bin files and index.txt are written here.
    verbose : bool

    Returns
    -------
    pandas.DataFrame
        The dataset index.
    """
    if n_traj < 10:
        raise ConfigurationError(f'collect needs at least 10 trajectories, got {n_traj}')
    if not kinds:
        raise ConfigurationError('collect needs at least one scenario kind')
    os.makedirs(out_dir, exist_ok=True)

    max_attempts = 2 * n_traj
    attempts_used = 0
    dropped = 0
    written = []
    for i in range(n_traj):
        kind = kinds[i % len(kinds)]
        attempt = 0
        while attempts_used < max_attempts:
            attempts_used += 1
            try:
                header, nodes, pickers = simulate_trajectory(i, attempt, kind, seed, cfg)
            except SimulationDivergedError as e:
                dropped += 1
                warnings.warn(f'Dropping trajectory {i} attempt {attempt} ({kind}): {e}')
                attempt += 1
                continue
            written.append((i, kind, attempt, header, nodes, pickers))
            break
        else:
            warnings.warn(f'Attempt cap of {max_attempts} reached; stopping at {len(written)} trajectories')
            break
        if verbose:
            print(f'-   Simulated trajectory {i + 1}/{n_traj} ({kind}, {len(nodes)} frames)')

    n_test = max(1, int(round(cfg.DATA.test_fraction * len(written))))
    order = child_rng(seed, STREAM_SPLIT).permutation(len(written))
    test_rows = set(order[:n_test].tolist())

    rows = []
    for row, (i, kind, attempt, header, nodes, pickers) in enumerate(written):
        split = 'test' if row in test_rows else 'train'
        header['split'] = split
        name = f'traj_{i:05d}.bin'
        write_trajectory(os.path.join(out_dir, name), header, nodes, pickers)
        rows.append({'traj_id': i, 'file': name, 'split': split, 'kind': kind,
                     'n_frames': len(nodes), 'n_nodes': nodes.shape[1], 'attempts': attempt + 1})
    table = write_index(out_dir, rows)

    if verbose:
        print(f'Collected {len(written)} trajectories '
              f'({len(written) - n_test} train, {n_test} test), {dropped} dropped')
    return table
