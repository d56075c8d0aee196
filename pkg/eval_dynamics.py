"""
eval_dynamics - Held-out accuracy of a dynamics predictor

Two errors per trajectory, both in millimeters:

vel_err_mm
    Root mean square one-step velocity error over non-picked nodes, scaled
    by dt to a per-step displacement.
pos_err_mm
    Mean node deviation of an open-loop rollout started from the first
    window and driven by the recorded picker path.
"""

import warnings

import numpy as np
import pandas as pd

from dataset_io import record_scene, windows
from fling_errors import RolloutDivergedError
from gnndyn import rollout_model

EVAL_COLUMNS = ['traj_id', 'kind', 'n_windows', 'vel_err_mm', 'pos_err_mm', 'diverged']


def velocity_errors(predictor, record, scene, radius, n_history=5, env_features=None):
    """Squared velocity errors (non-picked nodes) of every window of one trajectory."""
    if env_features is None:
        env_features = getattr(predictor, 'env_features', 'full')
    samples, actions, targets = [], [], []
    for w in windows(record, scene, radius, n_history, env_features):
        samples.append(w.sample)
        actions.append(w.action)
        targets.append(w.target)
    if not samples:
        return np.zeros(0)
    predictions = predictor.predict_batch(samples, actions)
    free = np.ones(record.positions.shape[1], dtype=bool)
    free[record.picked] = False
    return np.concatenate([np.sum((p - t)[free] ** 2, axis=1) for p, t in zip(predictions, targets)])


def rollout_error(predictor, record, scene, radius, n_history=5, env_features=None, limit=10.0):
    """Mean open-loop deviation of non-picked nodes over the predicted frames, meters."""
    window = record.positions[:n_history + 1]
    path = record.pickers[n_history:]
    predicted = rollout_model(predictor, window, scene, path, record.picked, record.mesh_edges, radius,
                              record.dt, n_history, env_features, limit)
    truth = record.positions[n_history:]
    if len(predicted) < 2:
        return np.nan
    free = np.ones(truth.shape[1], dtype=bool)
    free[record.picked] = False
    # frame 0 is the given window, not a prediction
    return float(np.mean(np.linalg.norm(predicted[1:, free] - truth[1:, free], axis=2)))


def eval_dynamics(predictor, records, cfg, verbose=False):
    """
    Velocity and rollout errors of a predictor on held-out trajectories.

    Parameters
    ----------
    predictor : DynamicsModel or PersistenceBaseline
    records : list of TrajectoryRecord
    cfg : CfgNode
        Uses GRAPH.radius, GRAPH.n_history, MODEL.divergence_limit and SCENE.
    verbose : bool

    Returns
    -------
    summary : dict
        vel_err_mm and pos_err_mm over all trajectories, n_trajectories and
        n_diverged.
    table : pandas.DataFrame
        One row per trajectory, columns EVAL_COLUMNS.
    """
    rows = []
    squared = []
    for i, record in enumerate(records):
        scene = record_scene(record, cfg.SCENE)
        errors = velocity_errors(predictor, record, scene, cfg.GRAPH.radius, cfg.GRAPH.n_history)
        squared.append(errors)
        try:
            pos = rollout_error(predictor, record, scene, cfg.GRAPH.radius, cfg.GRAPH.n_history,
                                limit=cfg.MODEL.divergence_limit)
            diverged = False
        except RolloutDivergedError as e:
            warnings.warn(f'Rollout of trajectory {record.header.get("traj_id")} diverged: {e}')
            pos = np.nan
            diverged = True
        rows.append({
            'traj_id': record.header.get('traj_id', i),
            'kind': record.kind,
            'n_windows': len(errors),
            'vel_err_mm': float(np.sqrt(np.mean(errors)) * record.dt * 1000.0) if len(errors) else np.nan,
            'pos_err_mm': pos * 1000.0,
            'diverged': diverged,
        })
        if verbose:
            print(f'-   Evaluated trajectory {i + 1}/{len(records)} ({record.kind})')

    table = pd.DataFrame(rows, columns=EVAL_COLUMNS)
    all_sq = np.concatenate(squared) if squared else np.zeros(0)
    dt = records[0].dt if records else 0.0
    summary = {
        'vel_err_mm': float(np.sqrt(np.mean(all_sq)) * dt * 1000.0) if len(all_sq) else np.nan,
        'pos_err_mm': float(table['pos_err_mm'].mean()) if len(table) else np.nan,
        'n_trajectories': len(table),
        'n_diverged': int(table['diverged'].sum()) if len(table) else 0,
    }
    return summary, table
