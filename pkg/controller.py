"""
controller - Two-stage fling controller

Stage one samples K turning points in the manipulation plane, rolls every
resulting plan out with the dynamics model, and keeps the plan whose
predicted final state is closest to the goal. Stage two refines the chosen
plan while it executes: every control interval, the nine delta actions
{-d, 0, +d}^2 are applied to the unexecuted part of the plan, each candidate
is rolled out from the current observation to the end of the plan, and the
best one replaces the plan.

Two dynamics handles share one interface, predict_finals(observation, scene,
plans, start): LearnedDynamics rolls out the graph network, OracleDynamics
runs the ground-truth simulator with the cloth parameters the controller
believes in.
"""

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from calculate_bipartite_distance import calculate_bipartite_distance
from clothsim import SimConfig, make_cloth, picker_clearance, rollout_ground_truth, step
from datagen import edge_height, start_midpoint
from fling_errors import (ConfigurationError, ControllerError, DegeneratePlaneError, SimulationDivergedError,
                          SimulationError)
from gnndyn import rollout_model_batch
from quantify_state_distance import quantify_state_distance
from seeding import STREAM_BASELINE, STREAM_SAMPLER, child_rng
from trajectory import apply_delta, manipulation_plane, plan_from_turning_point, stationary_plan

MODES = ('open_loop', 'mpc', 'fixed_baseline')


@dataclass(frozen=True)
class SamplerConfig:
    """
    Stage-one sampling box.

    u_x is drawn as a fraction of the horizontal start-to-goal span, u_z in
    meters above the ground.
    """

    K: int = 50
    ux_range: tuple = (0.2, 1.2)
    uz_range: tuple = (0.1, 0.8)
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError(f'sampler needs K >= 1, got {self.K}')
        for name in ('ux_range', 'uz_range'):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ConfigurationError(f'sampler {name} is degenerate: {(lo, hi)}')

    @classmethod
    def from_cfg(cls, sampler_cfg, seed=0):
        return cls(K=sampler_cfg.K, ux_range=tuple(sampler_cfg.ux_range),
                   uz_range=tuple(sampler_cfg.uz_range), seed=int(seed))


@dataclass(frozen=True)
class MpcConfig:
    interval: int = 10
    delta: float = 0.02

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigurationError(f'MPC interval must be at least 1, got {self.interval}')
        if self.delta <= 0:
            raise ConfigurationError(f'MPC delta must be positive, got {self.delta}')

    @property
    def candidates(self):
        """The nine delta actions, (0, 0) first, then lexicographic."""
        grid = [(dx, dz) for dx in (-1, 0, 1) for dz in (-1, 0, 1)]
        grid.remove((0, 0))
        return [(0, 0)] + grid

    @classmethod
    def from_cfg(cls, mpc_cfg):
        return cls(interval=mpc_cfg.interval, delta=mpc_cfg.delta)


@dataclass(frozen=True)
class PlanSettings:
    """Kinematic parameters shared by every plan of an episode."""

    accel: float = 2.0
    dt: float = 0.01
    hold_steps: int = 40
    min_height: float = 0.02
    threshold: float = 0.1
    iou_cell: float = 0.01
    release_clearance: float = 0.01
    particle_radius: float = 0.00625

    @classmethod
    def from_cfg(cls, cfg):
        return cls(accel=cfg.TRAJ.accel, dt=cfg.SIM.dt, hold_steps=cfg.TRAJ.hold_steps,
                   min_height=cfg.TRAJ.min_turning_height, threshold=cfg.GRAPH.match_threshold,
                   iou_cell=cfg.GRAPH.iou_cell, release_clearance=cfg.TRAJ.release_clearance,
                   particle_radius=cfg.SIM.particle_radius)


@dataclass(frozen=True)
class Observation:
    """Ground-truth cloth state and the node history the model sees (oldest first)."""

    state: object
    window: np.ndarray


@dataclass(frozen=True)
class Stage1Result:
    plan: object
    distance: float
    candidates: np.ndarray
    distances: np.ndarray


@dataclass
class EpisodeReport:
    mode: str
    final_state: object
    metrics: object
    steps: int
    sim_time: float
    wall_time: float
    plan: object = None
    predicted_distance: float = float('nan')
    diverged: bool = False
    mpc_updates: int = 0
    mpc_failures: int = 0
    frames: list = field(default_factory=list)

    def as_record(self):
        record = self.metrics.as_record()
        u = self.plan.u if self.plan is not None else (np.nan, np.nan)
        record.update({
            'mode': self.mode,
            'steps': self.steps,
            'sim_time': self.sim_time,
            'wall_time': self.wall_time,
            'predicted_distance': self.predicted_distance,
            'diverged': self.diverged,
            'mpc_updates': self.mpc_updates,
            'mpc_failures': self.mpc_failures,
            'u_x': float(u[0]),
            'u_z': float(u[1]),
        })
        return record


class LearnedDynamics:
    """Batched rollouts of a trained predictor on the episode's node graph."""

    def __init__(self, predictor, sampler, radius=0.045, n_history=5, limit=10.0, dt=0.01):
        self.predictor = predictor
        self.sampler = sampler
        self.radius = radius
        self.n_history = n_history
        self.limit = limit
        self.dt = dt

    def predict_finals(self, observation, scene, plans, start=0):
        return rollout_model_batch(self.predictor, observation.window, scene, plans, self.sampler.picked_nodes,
                                   self.sampler.mesh_edges, self.radius, self.dt, self.n_history,
                                   limit=self.limit, start=start)


class OracleDynamics:
    """
    Ground-truth simulator used as the dynamics model.

    The observed particle state is carried over into a cloth with the
    believed parameters, so stiffness mismatch between belief and reality
    stays in effect.
    """

    def __init__(self, cloth, sim, sampler):
        self.cloth = cloth
        self.sim = sim
        self.sampler = sampler
        self._template = make_cloth(cloth, sim=sim)

    def believed_state(self, state):
        return replace(self._template, positions=state.positions.copy(), velocities=state.velocities.copy(),
                       attached=state.attached, time=state.time)

    def predict_finals(self, observation, scene, plans, start=0):
        state = self.believed_state(observation.state)
        out = []
        for plan in plans:
            try:
                states = rollout_ground_truth(state, scene, plan, self.sim, start)
                out.append(self.sampler.nodes(states[-1].positions))
            except SimulationDivergedError as e:
                out.append(e)
        return out


def _score(finals, goal_nodes, threshold):
    scores = np.full(len(finals), np.inf)
    for k, final in enumerate(finals):
        if isinstance(final, Exception):
            continue
        scores[k] = calculate_bipartite_distance(final, goal_nodes, threshold)
    return scores


def _reject_colliding(scores, scene, plans, start):
    # pickers are kinematic: a path through a solid is not executable
    for k, plan in enumerate(plans):
        if np.isfinite(scores[k]) and picker_clearance(scene, plan, start) < 0.0:
            scores[k] = np.inf
    return scores


def goal_target(goal, scene, L, settings=None):
    """
    Picker midpoint the plans end at: the goal edge midpoint, lifted so that
    neither picker ends inside the surface under the link.
    """
    settings = settings or PlanSettings()
    m_g = np.asarray(goal.m_g, dtype=float)
    floor = edge_height(scene, m_g, goal.theta_g, L) + settings.particle_radius
    return np.array([m_g[0], m_g[1], max(m_g[2], floor) + settings.release_clearance])


def sample_turning_points(frame, m_g, cfg):
    """(K, 2) turning points in plane coordinates from the sampler's seeded stream."""
    rng = child_rng(cfg.seed, STREAM_SAMPLER)
    span = float(np.linalg.norm((np.asarray(m_g, dtype=float) - frame.origin)[:2]))
    frac = rng.uniform(*cfg.ux_range, size=cfg.K)
    uz = rng.uniform(*cfg.uz_range, size=cfg.K)
    return np.column_stack([frac * span, uz])


def stage1_select(dyn, observation, goal, scene, frame, cfg, settings=None, theta_s=0.0, L=None):
    """
    Choose the initial plan by sampling turning points.

    Parameters
    ----------
    dyn : LearnedDynamics or OracleDynamics
    observation : Observation
        Grasped start configuration.
    goal : GoalState
        Goal nodes, target midpoint m_g and yaw theta_g.
    scene : SceneSdf
    frame : PlaneFrame
        Manipulation plane through m_s and m_g.
    cfg : SamplerConfig
    settings : PlanSettings, optional
    theta_s : float
        Current link yaw, radians.
    L : float, optional
        Picker separation; the current picker distance if omitted.

    Returns
    -------
    Stage1Result
        Best plan and its predicted distance, plus all candidates and their
        predicted distances (inf for diverged rollouts).
    """
    settings = settings or PlanSettings()
    if L is None:
        left, right = observation.state.picker_positions
        L = float(np.linalg.norm(left - right))
    target = goal_target(goal, scene, L, settings)
    candidates = sample_turning_points(frame, target, cfg)
    plans = [plan_from_turning_point(frame, u, target, settings.accel, settings.dt, L, theta_s, goal.theta_g,
                                     settings.hold_steps, settings.min_height) for u in candidates]
    scores = _score(dyn.predict_finals(observation, scene, plans, 0), goal.nodes, settings.threshold)
    scores = _reject_colliding(scores, scene, plans, 0)
    if not np.any(np.isfinite(scores)):
        raise ControllerError(f'all {cfg.K} stage-one candidates diverged or collided (sampler seed {cfg.seed})')

    used = np.array([p.u for p in plans])
    best = int(np.lexsort((used[:, 1], used[:, 0], scores))[0])
    assert np.all(scores[best] <= scores), 'selected candidate is not the best predicted one'
    return Stage1Result(plans[best], float(scores[best]), used, scores)


def stage2_mpc_step(dyn, observation, plan, step_index, goal, scene, cfg, settings=None):
    """
    One receding-horizon refinement at a control boundary.

    Returns
    -------
    delta : tuple of int
        Chosen delta action; (0, 0) once the motion part of the plan is over.
    plan : FlingPlan
        The plan with the chosen delta applied.
    """
    settings = settings or PlanSettings()
    if step_index >= plan.motion_steps:
        return (0, 0), plan
    deltas = cfg.candidates
    plans = [apply_delta(plan, step_index, d, cfg.delta, settings.min_height) for d in deltas]
    scores = _score(dyn.predict_finals(observation, scene, plans, step_index), goal.nodes, settings.threshold)
    scores = _reject_colliding(scores, scene, plans, step_index)
    if not np.any(np.isfinite(scores)):
        raise ControllerError(f'all {len(deltas)} delta candidates diverged or collided at step {step_index}')
    best = int(np.argmin(scores))
    return deltas[best], plans[best]


def fixed_plan(frame, goal, fixed_u, settings, theta_s, L, scene=None):
    """Plan through a frozen turning point given as (fraction of span, height)."""
    target = goal_target(goal, scene, L, settings) if scene is not None else np.asarray(goal.m_g, dtype=float)
    span = float(np.linalg.norm((target - frame.origin)[:2]))
    u = np.array([fixed_u[0] * span, fixed_u[1]])
    return plan_from_turning_point(frame, u, target, settings.accel, settings.dt, L, theta_s, goal.theta_g,
                                   settings.hold_steps, settings.min_height)


def run_episode(state, scene, goal, dyn, sampler, sampler_cfg, mpc_cfg, mode='mpc', settings=None,
                sim=None, fixed_u=None, n_history=5, record_frames=False, verbose=False):
    """
    Run one closed-loop fling episode in the ground-truth simulator.

    Parameters
    ----------
    state : ClothState
        Grasped start state, simulated with the true cloth parameters.
    scene : SceneSdf
    goal : GoalState
    dyn : LearnedDynamics or OracleDynamics
        Unused in fixed_baseline mode.
    sampler : NodeSampler
        Maps particles to model nodes.
    sampler_cfg : SamplerConfig
    mpc_cfg : MpcConfig
    mode : str
        open_loop (stage one only), mpc (stage one, then stage two every
        interval) or fixed_baseline (fixed_u, no adaptation).
    settings : PlanSettings, optional
    sim : SimConfig, optional
    fixed_u : tuple, optional
        (fraction of span, height) for fixed_baseline mode.
    n_history : int
    record_frames : bool
        Keep the node positions of every executed frame.
    verbose : bool
        Print the final metric progress lines.

    Returns
    -------
    EpisodeReport
    """
    if mode not in MODES:
        raise ConfigurationError(f'unknown episode mode: {mode}')
    if mode == 'fixed_baseline' and fixed_u is None:
        raise ConfigurationError('fixed_baseline mode needs a fixed turning point')
    settings = settings or PlanSettings()
    sim = sim or SimConfig()
    tic = time.time()

    left, right = state.picker_positions
    m_s = 0.5 * (left + right)
    L = float(np.linalg.norm(left - right))
    theta_s = float(np.arctan2(-(left - right)[0], (left - right)[1]))
    nodes = sampler.nodes(state.positions)
    history = [nodes] * (n_history + 1)
    frames = [nodes] if record_frames else []

    predicted = float('nan')
    try:
        frame = manipulation_plane(m_s, goal.m_g)
    except DegeneratePlaneError:
        frame = None
    if frame is None:
        plan = stationary_plan(m_s, theta_s, L, settings.dt)
    elif mode == 'fixed_baseline':
        plan = fixed_plan(frame, goal, fixed_u, settings, theta_s, L, scene)
    else:
        chosen = stage1_select(dyn, Observation(state, np.stack(history)), goal, scene, frame, sampler_cfg,
                               settings, theta_s, L)
        plan, predicted = chosen.plan, chosen.distance

    diverged = False
    updates = failures = 0
    t = 0
    while t < plan.n_steps:
        if mode == 'mpc' and t > 0 and t % mpc_cfg.interval == 0 and t < plan.motion_steps:
            try:
                delta, plan = stage2_mpc_step(dyn, Observation(state, np.stack(history)), plan, t, goal, scene,
                                              mpc_cfg, settings)
                updates += delta != (0, 0)
            except (ControllerError, SimulationError) as e:
                failures += 1
                warnings.warn(f'MPC step {t} kept the current plan: {e}')
        try:
            state = step(state, scene, dt=sim.dt, sim=sim, picker_targets=plan.pickers[t + 1], step_index=t)
        except SimulationDivergedError as e:
            warnings.warn(f'Episode diverged: {e}')
            diverged = True
            break
        nodes = sampler.nodes(state.positions)
        history = history[1:] + [nodes]
        if record_frames:
            frames.append(nodes)
        t += 1

    metrics = quantify_state_distance(sampler.nodes(state.positions), goal.nodes, settings.threshold,
                                      settings.iou_cell, verbose)
    return EpisodeReport(
        mode=mode, final_state=state, metrics=metrics, steps=t, sim_time=t * settings.dt,
        wall_time=time.time() - tic, plan=plan, predicted_distance=predicted, diverged=diverged,
        mpc_updates=int(updates), mpc_failures=failures, frames=frames,
    )


def select_fixed_turning_point(contexts, cfg, n_candidates=100, seed=0, sim=None, verbose=False):
    """
    Best single turning point over a set of training contexts.

    Every candidate (fraction of span, height) is executed in the
    ground-truth simulator on every context; the candidate with the lowest
    mean matched distance is returned and then applied unchanged.

    Parameters
    ----------
    contexts : list of Episode
    cfg : CfgNode
    n_candidates : int
    seed : int
    sim : SimConfig
    verbose : bool

    Returns
    -------
    best : tuple of float
        (fraction of span, height).
    table : pandas.DataFrame
        Candidate, u_frac, u_z and mean distance of every candidate.
    """
    settings = PlanSettings.from_cfg(cfg)
    sim = sim or SimConfig.from_cfg(cfg.SIM)
    rng = child_rng(seed, STREAM_BASELINE)
    fracs = rng.uniform(*cfg.SAMPLER.ux_range, size=n_candidates)
    heights = rng.uniform(*cfg.SAMPLER.uz_range, size=n_candidates)

    starts = []
    for ctx in contexts:
        start = make_cloth(ctx.true_cloth, start_midpoint(ctx.true_cloth, cfg.CLOTH), 0.0, sim=sim)
        starts.append((ctx, start, manipulation_plane(start_midpoint(ctx.true_cloth, cfg.CLOTH), ctx.goal.m_g)))

    rows = []
    for c in range(n_candidates):
        scores = []
        for ctx, start, frame in starts:
            plan = fixed_plan(frame, ctx.goal, (fracs[c], heights[c]), settings, 0.0, ctx.true_cloth.edge_length,
                              ctx.scene)
            if picker_clearance(ctx.scene, plan) < 0.0:
                scores.append(np.inf)
                continue
            try:
                final = rollout_ground_truth(start, ctx.scene, plan, sim)[-1]
                scores.append(calculate_bipartite_distance(ctx.sampler.nodes(final.positions), ctx.goal.nodes,
                                                           settings.threshold))
            except SimulationDivergedError:
                scores.append(np.inf)
        rows.append({'candidate': c, 'u_frac': fracs[c], 'u_z': heights[c], 'mean_distance': float(np.mean(scores))})
        if verbose and (c + 1) % 10 == 0:
            print(f'-   Scored {c + 1}/{n_candidates} fixed turning points')

    table = pd.DataFrame(rows)
    best = table.sort_values(['mean_distance', 'u_frac', 'u_z'], kind='mergesort').iloc[0]
    return (float(best['u_frac']), float(best['u_z'])), table
