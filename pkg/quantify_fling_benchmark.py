"""
quantify_fling_benchmark - Benchmark the fling controller across scenarios

Runs seeded episodes for every scenario kind and every method, and collects
one row per (method, episode) with the final state distances to the goal.
Methods:

    ours            stage one + stage two with the environment-aware model
    no_mpc          stage one only
    no_ea           stage one + stage two with the ground-only model
    fixed_baseline  one turning point, selected once on training contexts

All methods see the same episode contexts (cloth, scene, goal, sampler
seed), so rows can be compared pairwise.
"""

import os
import warnings

import numpy as np
import pandas as pd

from clothsim import SimConfig, make_cloth
from config_defaults import KINDS, SCENARIO_GROUPS
from controller import (LearnedDynamics, MpcConfig, OracleDynamics, PlanSettings, SamplerConfig,
                        run_episode, select_fixed_turning_point)
from datagen import make_episode, start_midpoint
from fling_errors import FlingError, ModelError
from seeding import STREAM_BASELINE, STREAM_SAMPLER, child_seed_sequence
from trajectory import plan_table

METHODS = ['ours', 'no_mpc', 'no_ea', 'fixed_baseline']
METHOD_MODES = {
    'ours': ('mpc', 'full'),
    'no_mpc': ('open_loop', 'full'),
    'no_ea': ('mpc', 'no_ea'),
    'fixed_baseline': ('fixed_baseline', None),
}
BENCH_COLUMNS = ['method', 'scenario', 'group', 'episode', 'mpe_mm', 'chamfer_mm', 'iou', 'steps', 'sim_time',
                 'predicted_distance', 'u_x', 'u_z', 'mpc_updates', 'mpc_failures', 'diverged', 'wall_time']
SUMMARY_COLUMNS = ['method', 'group', 'n', 'iou_mean', 'iou_std', 'mpe_mm_mean', 'mpe_mm_std',
                   'sim_time_mean', 'sim_time_std', 'n_diverged']


def derived_seed(seed, *keys):
    """Integer seed for a sub-run, from the counter-based stream scheme."""
    return int(child_seed_sequence(seed, *keys).generate_state(1)[0])


def selected_methods(cfg):
    return list(METHODS) if cfg.RUN.mode == 'all' else [cfg.RUN.mode]


def make_dynamics(episode, variant, cfg, models=None):
    """Dynamics handle of an episode: oracle simulator or a learned model variant."""
    sim = SimConfig.from_cfg(cfg.SIM)
    if cfg.RUN.dynamics == 'oracle':
        return OracleDynamics(episode.cloth, sim, episode.sampler)
    return LearnedDynamics(models[variant], episode.sampler, cfg.GRAPH.radius, cfg.GRAPH.n_history,
                           cfg.MODEL.divergence_limit, cfg.SIM.dt)


def episode_start(episode, cfg):
    """Grasped, hanging start state of an episode with the true cloth."""
    sim = SimConfig.from_cfg(cfg.SIM)
    return make_cloth(episode.true_cloth, start_midpoint(episode.true_cloth, cfg.CLOTH), 0.0, sim=sim)


def run_method(episode, method, cfg, models=None, fixed_u=None, seed=0, record_frames=False, verbose=False):
    """Run one episode with one method; returns its EpisodeReport."""
    mode, variant = METHOD_MODES[method]
    sim = SimConfig.from_cfg(cfg.SIM)
    dyn = None if mode == 'fixed_baseline' else make_dynamics(episode, variant, cfg, models)
    sampler_cfg = SamplerConfig.from_cfg(
        cfg.SAMPLER, derived_seed(seed, STREAM_SAMPLER, KINDS.index(episode.kind), episode.index))
    return run_episode(episode_start(episode, cfg), episode.scene, episode.goal, dyn, episode.sampler,
                       sampler_cfg, MpcConfig.from_cfg(cfg.MPC), mode, PlanSettings.from_cfg(cfg), sim,
                       fixed_u=fixed_u, n_history=cfg.GRAPH.n_history, record_frames=record_frames,
                       verbose=verbose)


def benchmark_row(method, episode, report):
    m = report.as_record()
    return {
        'method': method,
        'scenario': episode.kind,
        'group': SCENARIO_GROUPS[episode.kind],
        'episode': episode.index,
        'mpe_mm': m['mean_matched_distance'] * 1000.0,
        'chamfer_mm': m['chamfer'] * 1000.0,
        'iou': m['iou'],
        'steps': m['steps'],
        'sim_time': m['sim_time'],
        'predicted_distance': m['predicted_distance'],
        'u_x': m['u_x'],
        'u_z': m['u_z'],
        'mpc_updates': m['mpc_updates'],
        'mpc_failures': m['mpc_failures'],
        'diverged': m['diverged'],
        'wall_time': m['wall_time'],
    }


def episode_table(report):
    """Per-step plan (midpoint, pickers, yaw) with the executed node centroid."""
    table = plan_table(report.plan)
    if report.frames:
        centroids = np.array([f.mean(axis=0) for f in report.frames])
        executed = pd.DataFrame({
            'step': np.arange(len(centroids)),
            'centroid_x': centroids[:, 0],
            'centroid_y': centroids[:, 1],
            'centroid_z': centroids[:, 2],
        })
        table = table.merge(executed, on='step', how='left')
    return table


def summarize_benchmark(rows):
    """Method x scenario-group summary (mean and std of IoU, MPE and simulated time)."""
    if len(rows) == 0:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    grouped = rows.groupby(['method', 'group'], sort=False)
    summary = grouped.agg(
        n=('episode', 'size'),
        iou_mean=('iou', 'mean'), iou_std=('iou', 'std'),
        mpe_mm_mean=('mpe_mm', 'mean'), mpe_mm_std=('mpe_mm', 'std'),
        sim_time_mean=('sim_time', 'mean'), sim_time_std=('sim_time', 'std'),
        n_diverged=('diverged', 'sum'),
    ).reset_index()
    return summary[SUMMARY_COLUMNS]


def fixed_baseline_point(cfg, seed, verbose=True):
    """Select the frozen turning point of the fixed baseline on training contexts."""
    context_seed = derived_seed(seed, STREAM_BASELINE, 1)
    contexts = []
    for kind in cfg.BENCH.baseline_kinds:
        for i in range(cfg.BENCH.baseline_contexts):
            contexts.append(make_episode(kind, i, context_seed, cfg, mismatch=0.0))
    if verbose:
        print(f'-   Selecting the fixed baseline on {len(contexts)} training contexts')
    return select_fixed_turning_point(contexts, cfg, cfg.BENCH.baseline_candidates, seed,
                                      SimConfig.from_cfg(cfg.SIM), verbose)


def quantify_fling_benchmark(cfg, models=None, fixed_u=None, dump_dir=None, verbose=True):
    """
    Run the benchmark.

    Parameters
    ----------
    cfg : CfgNode
        RUN.mode selects the methods, RUN.dynamics oracle or learned,
        BENCH the scenario kinds, episode count and stiffness mismatch.
    models : dict, optional
        Learned predictors by variant ('full', 'no_ea'); required for
        learned dynamics.
    fixed_u : tuple, optional
        Frozen baseline turning point; selected here when needed and omitted.
    dump_dir : str, optional
        Per-episode plan and centroid tables are written here for the first
        BENCH.dump_episodes episodes of each scenario.
    verbose : bool

    Returns
    -------
    rows : pandas.DataFrame
        One row per (method, episode), columns BENCH_COLUMNS.
    summary : pandas.DataFrame
        Method x scenario group, columns SUMMARY_COLUMNS.
    """
    seed = cfg.RUN.seed
    methods = selected_methods(cfg)
    models = models or {}
    if cfg.RUN.dynamics == 'learned':
        if 'no_ea' in methods and 'no_ea' not in models:
            warnings.warn('No ground-only model given; skipping the no_ea method')
            methods.remove('no_ea')
        if any(m in methods for m in ('ours', 'no_mpc')) and 'full' not in models:
            raise ModelError('learned dynamics need a trained model')
    elif 'no_ea' in methods:
        warnings.warn('The no_ea method needs learned dynamics; skipping it in oracle mode')
        methods.remove('no_ea')
    if 'fixed_baseline' in methods and fixed_u is None:
        fixed_u, _ = fixed_baseline_point(cfg, seed, verbose)
        if verbose:
            print(f'-   Fixed turning point: fraction {fixed_u[0]:.3f}, height {fixed_u[1]:.3f} m')

    rows = []
    for kind in cfg.BENCH.kinds:
        for i in range(cfg.BENCH.episodes):
            if verbose:
                print(f'  Processing {kind} episode {i + 1}/{cfg.BENCH.episodes}')
            try:
                episode = make_episode(kind, i, seed, cfg, cfg.BENCH.stiffness_mismatch)
            except FlingError as e:
                warnings.warn(f'Skipping {kind} episode {i}: {e}')
                continue
            dump = dump_dir is not None and i < cfg.BENCH.dump_episodes
            for method in methods:
                try:
                    report = run_method(episode, method, cfg, models, fixed_u, seed, record_frames=dump,
                                        verbose=verbose)
                except FlingError as e:
                    warnings.warn(f'Skipping {method} on {kind} episode {i}: {e}')
                    continue
                rows.append(benchmark_row(method, episode, report))
                if dump:
                    os.makedirs(dump_dir, exist_ok=True)
                    episode_table(report).to_csv(os.path.join(dump_dir, f'{method}_{kind}_{i:03d}.csv'),
                                                 index=False)

    rows = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    summary = summarize_benchmark(rows)
    if verbose and len(summary):
        print('\n' + '=' * 80)
        print('RESULTS')
        print('=' * 80)
        print(summary.to_string(index=False))
    return rows, summary
