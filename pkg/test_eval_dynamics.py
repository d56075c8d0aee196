"""
Tests for the held-out accuracy of dynamics predictors.
"""

import numpy as np
import pytest

from config_defaults import get_cfg_defaults
from dataset_io import TrajectoryRecord, frame_velocities, record_scene
from eval_dynamics import EVAL_COLUMNS, eval_dynamics, rollout_error
from gnndyn import PersistenceBaseline

DT = 0.01
PICKED = [0, 2]


def _grid(n=3, spacing=0.025, z=0.2):
    r, c = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    return np.column_stack([r.ravel() * spacing, c.ravel() * spacing, np.full(n * n, z)])


def _record(positions, traj_id=0):
    positions = np.asarray(positions, dtype=float)
    header = {
        'dt': DT,
        'scenario': {'kind': 'flat', 'y': 0.0, 'z': None, 'yaw_deg': 0.0},
        'picked_nodes': PICKED,
        'mesh_edges': [[0, 1], [1, 2], [0, 3], [3, 6], [1, 4], [4, 7], [2, 5], [5, 8]],
        'traj_id': traj_id,
    }
    return TrajectoryRecord(header, positions, frame_velocities(positions, DT), positions[:, PICKED].copy())


def _curved_record(n_frames=12, traj_id=0):
    """Free nodes on distinct curved paths, picked nodes on a straight line."""
    x0 = _grid()
    t = np.arange(n_frames)[:, None, None]
    phase = np.arange(len(x0))[None, :, None]
    wobble = np.concatenate([0.002 * t ** 2 * np.ones_like(phase, dtype=float),
                             0.01 * np.sin(0.3 * t + phase),
                             -0.004 * t * np.ones_like(phase, dtype=float)], axis=2)
    positions = x0[None] + wobble
    positions[:, PICKED] = x0[PICKED][None] + t * np.array([0.003, 0.0, 0.002])
    return _record(positions, traj_id)


class ReplayPredictor:
    """Returns the recorded next velocity of whichever frame the sample matches."""

    def __init__(self, record):
        self.record = record
        self.env_features = 'full'

    def predict(self, sample, action):
        gap = np.max(np.abs(self.record.positions - sample.node_positions[None]), axis=(1, 2))
        t = int(np.argmin(gap))
        assert gap[t] < 1e-9, f"Sample does not match any recorded frame (gap {gap[t]})"
        return (self.record.positions[t + 1] - self.record.positions[t]) / self.record.dt

    def predict_batch(self, samples, actions):
        return [self.predict(s, a) for s, a in zip(samples, actions)]


class ConstantVelocity:
    """Predicts the same velocity for every node."""

    env_features = 'full'

    def __init__(self, velocity):
        self.velocity = np.asarray(velocity, dtype=float)

    def predict(self, sample, action):
        return np.tile(self.velocity, (sample.n_nodes, 1))

    def predict_batch(self, samples, actions):
        return [self.predict(s, a) for s, a in zip(samples, actions)]


def test_exact_predictions_give_zero_error():
    """Test that replaying the recorded motion scores zero velocity and rollout error."""
    print("Testing eval_dynamics with exact predictions...")
    cfg = get_cfg_defaults()
    records = [_curved_record(traj_id=0), _curved_record(n_frames=9, traj_id=1)]
    summaries = [eval_dynamics(ReplayPredictor(r), [r], cfg)[0] for r in records]
    for summary in summaries:
        assert summary['vel_err_mm'] < 1e-6, f"Velocity error should be 0, got {summary['vel_err_mm']}"
        assert summary['pos_err_mm'] < 1e-6, f"Rollout error should be 0, got {summary['pos_err_mm']}"
        assert summary['n_trajectories'] == 1 and summary['n_diverged'] == 0
    print("✓ exact prediction tests passed")


def test_persistence_on_constant_velocity():
    """Test that persistence is exact when every node keeps its velocity."""
    print("Testing persistence on constant velocity...")
    cfg = get_cfg_defaults()
    v = np.array([0.05, -0.02, 0.01])
    positions = _grid()[None] + np.arange(12)[:, None, None] * v * DT
    record = _record(positions)
    summary, table = eval_dynamics(PersistenceBaseline(DT, cfg.GRAPH.n_history), [record], cfg)
    assert summary['vel_err_mm'] < 1e-9, f"Persistence velocity error should be 0, got {summary['vel_err_mm']}"
    assert summary['pos_err_mm'] < 1e-9, f"Persistence rollout error should be 0, got {summary['pos_err_mm']}"
    assert list(table.columns) == EVAL_COLUMNS, "Per-trajectory table columns"
    assert table['n_windows'].iloc[0] == 12 - cfg.GRAPH.n_history, "One window per predictable frame"
    print("✓ persistence tests passed")


def test_rollout_error_averages_predicted_frames():
    """Test that the rollout error skips the given frame and averages frames 1..T."""
    print("Testing rollout error averaging...")
    cfg = get_cfg_defaults()
    n_history = cfg.GRAPH.n_history
    record = _record(np.repeat(_grid()[None], 12, axis=0))
    speed = 0.1
    err = rollout_error(ConstantVelocity([speed, 0.0, 0.0]), record, record_scene(record), cfg.GRAPH.radius,
                        n_history)
    horizon = 12 - 1 - n_history
    # free nodes drift k * speed * dt at predicted frame k
    expected = speed * DT * np.mean(np.arange(1, horizon + 1))
    assert abs(err - expected) < 1e-12, f"Expected {expected}, got {err}"

    summary, _ = eval_dynamics(ConstantVelocity([speed, 0.0, 0.0]), [record], cfg)
    assert abs(summary['pos_err_mm'] - expected * 1000.0) < 1e-9, "pos_err_mm should be the same in mm"
    assert abs(summary['vel_err_mm'] - speed * DT * 1000.0) < 1e-9, "Constant 0.1 m/s bias is 1 mm per step"

    short = _record(np.repeat(_grid()[None], n_history + 1, axis=0))
    assert np.isnan(rollout_error(ConstantVelocity([speed, 0.0, 0.0]), short, record_scene(short),
                                  cfg.GRAPH.radius, n_history)), "No predicted frame gives NaN"
    print("✓ rollout error tests passed")


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
