"""
dataset_io - Trajectory dataset files

Dataset directory layout:

    index.txt        CSV table, one row per trajectory
    traj_<id>.bin    one self-describing trajectory container

Container layout (little-endian):

    4 bytes   magic b'FLNG'
    uint32    header length in bytes
    header    UTF-8 JSON (format version, scenario, cloth, plan summary,
              node topology, frame layout)
    frames    n_frames records, each positions (M x 3), velocities (M x 3)
              and pickers (2 x 3), all float32, in that field order

Velocities are backward differences (x_t - x_{t-1}) / dt; frame 0 has zero
velocity.
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np
import pandas as pd

from build_graph import build_graph
from envsdf import ScenePlacement, make_scenario
from fling_errors import DataError

MAGIC = b'FLNG'
FORMAT_VERSION = 1
FRAME_FIELDS = ('positions', 'velocities', 'pickers')
INDEX_COLUMNS = ['traj_id', 'file', 'split', 'kind', 'n_frames', 'n_nodes', 'attempts']


@dataclass
class TrajectoryRecord:
    header: dict
    positions: np.ndarray
    velocities: np.ndarray
    pickers: np.ndarray

    @property
    def n_frames(self):
        return len(self.positions)

    @property
    def picked(self):
        return np.asarray(self.header['picked_nodes'], dtype=np.int64)

    @property
    def mesh_edges(self):
        return np.asarray(self.header['mesh_edges'], dtype=np.int64).reshape(-1, 2)

    @property
    def dt(self):
        return float(self.header['dt'])

    @property
    def kind(self):
        return self.header['scenario']['kind']


@dataclass(frozen=True)
class WindowSample:
    sample: object
    action: np.ndarray
    target: np.ndarray


def frame_velocities(positions, dt):
    """Backward-difference velocities, zero for the first frame."""
    positions = np.asarray(positions, dtype=float)
    vel = np.zeros_like(positions)
    vel[1:] = np.diff(positions, axis=0) / dt
    return vel


def write_trajectory(path, header, positions, pickers):
    """
    Write one trajectory container.

    Parameters
    ----------
    path : str
    header : dict
        JSON-serializable metadata; version, frame count, node count and field
        order are filled in here.
    positions : ndarray
        (T, M, 3) node positions.
    pickers : ndarray
        (T, 2, 3) picker positions.
    """
    positions = np.asarray(positions, dtype=float)
    pickers = np.asarray(pickers, dtype=float)
    velocities = frame_velocities(positions, header['dt'])
    header = dict(header)
    header.update({
        'format_version': FORMAT_VERSION,
        'n_frames': int(positions.shape[0]),
        'n_nodes': int(positions.shape[1]),
        'fields': list(FRAME_FIELDS),
        'dtype': '<f4',
    })
    blob = json.dumps(header, sort_keys=True).encode('utf-8')
    frames = np.concatenate([
        positions.reshape(len(positions), -1),
        velocities.reshape(len(positions), -1),
        pickers.reshape(len(positions), -1),
    ], axis=1).astype('<f4')
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<I', len(blob)))
        f.write(blob)
        f.write(frames.tobytes())


def read_trajectory(path):
    """Read one trajectory container into a TrajectoryRecord (float64 arrays)."""
    if not os.path.isfile(path):
        raise DataError(f'trajectory file not found: {path}')
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise DataError(f'{path} is not a trajectory file')
    (length,) = struct.unpack('<I', raw[4:8])
    try:
        header = json.loads(raw[8:8 + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f'corrupt header in {path}: {e}') from e
    if header.get('format_version') != FORMAT_VERSION:
        raise DataError(f'{path} has format version {header.get("format_version")}, expected {FORMAT_VERSION}')

    t, m = header['n_frames'], header['n_nodes']
    width = 3 * m + 3 * m + 6
    data = np.frombuffer(raw[8 + length:], dtype='<f4')
    if data.size != t * width:
        raise DataError(f'{path} holds {data.size} values, expected {t * width}')
    data = data.reshape(t, width).astype(float)
    return TrajectoryRecord(
        header=header,
        positions=data[:, :3 * m].reshape(t, m, 3),
        velocities=data[:, 3 * m:6 * m].reshape(t, m, 3),
        pickers=data[:, 6 * m:].reshape(t, 2, 3),
    )


def write_index(root, rows):
    table = pd.DataFrame(rows, columns=INDEX_COLUMNS)
    table.to_csv(os.path.join(root, 'index.txt'), index=False)
    return table


def read_index(root):
    path = os.path.join(root, 'index.txt')
    if not os.path.isfile(path):
        raise DataError(f'no dataset index at {path}')
    table = pd.read_csv(path)
    missing = [c for c in INDEX_COLUMNS if c not in table.columns]
    if missing:
        raise DataError(f'dataset index {path} lacks columns {missing}')
    return table


def load_split(root, split, kinds=None):
    """All trajectory records of one split, optionally filtered by kind."""
    table = read_index(root)
    table = table[table['split'] == split]
    if kinds:
        table = table[table['kind'].isin(list(kinds))]
    return [read_trajectory(os.path.join(root, f)) for f in table['file']]


def record_scene(record, scene_cfg=None):
    """Rebuild the SceneSdf a trajectory was recorded in."""
    s = record.header['scenario']
    placement = ScenePlacement(y=s['y'], z=s['z'], yaw_deg=s['yaw_deg'])
    return make_scenario(s['kind'], placement, scene_cfg)


def n_windows(record, n_history=5):
    return max(0, record.n_frames - n_history)


def window_sample(record, start, scene, radius, n_history=5, env_features='full', noise_std=0.0, rng=None):
    """
    Training triple from frames start .. start + n_history.

    The input is the node state at frame start + n_history - 1 with the stored
    velocities of frames start .. start + n_history - 1; the target is the
    stored velocity of the next frame. Position jitter on non-picked nodes
    enters the newest velocity and is removed from the target.
    """
    last = start + n_history - 1
    if start < 0 or last + 1 >= record.n_frames:
        raise DataError(f'window {start} outside a {record.n_frames}-frame trajectory')
    dt = record.dt
    picked = record.picked
    x = record.positions[last].copy()
    vel = record.velocities[start:last + 1].copy()
    target = record.velocities[last + 1].copy()

    if noise_std > 0.0 and rng is not None:
        noise = rng.normal(0.0, noise_std, size=x.shape)
        noise[picked] = 0.0
        x += noise
        vel[-1] += noise / dt
        target -= noise / dt

    sample = build_graph(x[None], scene, picked, radius, dt, record.mesh_edges, velocities=vel,
                         env_features=env_features, n_history=n_history)
    action = record.pickers[last + 1] - record.pickers[last]
    return WindowSample(sample, action, target)


def windows(record, scene, radius, n_history=5, env_features='full'):
    """All noise-free windows of a trajectory, in order."""
    for start in range(n_windows(record, n_history)):
        yield window_sample(record, start, scene, radius, n_history, env_features)
