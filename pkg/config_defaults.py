"""
config_defaults - Run configuration for the fling-to-goal suite

All commands read one yacs CfgNode. Values below are the defaults; a YAML
file passed with --config overrides them, and unknown keys are rejected.
Lengths are in meters, times in seconds, angles in degrees unless the key
name says otherwise.
"""

import os

from yacs.config import CfgNode as CN

from fling_errors import ConfigurationError

_C = CN()

# ---------------------------------------------------------------------------- #
# Run
# ---------------------------------------------------------------------------- #
_C.RUN = CN()
_C.RUN.seed = 0
_C.RUN.out = 'runs/default'
_C.RUN.verbose = True
# learned | oracle
_C.RUN.dynamics = 'learned'
# ours | no_mpc | no_ea | fixed_baseline | all
_C.RUN.mode = 'all'
# none | no_ea
_C.RUN.ablation = 'none'
_C.RUN.force = False

# ---------------------------------------------------------------------------- #
# Rigid scene
# ---------------------------------------------------------------------------- #
_C.SCENE = CN()
# x of the object center; the cloth starts hanging above the origin
_C.SCENE.object_x = 0.45
_C.SCENE.platform_side = 0.4
_C.SCENE.platform_height = 0.15
_C.SCENE.hemisphere_radius = 0.15
_C.SCENE.pole_height = 0.15
_C.SCENE.pole_width = 0.4
_C.SCENE.pole_depth = 0.04
# box | capsule
_C.SCENE.pole_shape = 'box'
_C.SCENE.table_side = 0.4
_C.SCENE.table_height = 0.15
_C.SCENE.table_thickness = 0.03
_C.SCENE.z_range = [0.1, 0.3]
_C.SCENE.y_range = [-0.2, 0.2]
_C.SCENE.yaw_range = [-30.0, 30.0]

# ---------------------------------------------------------------------------- #
# Cloth
# ---------------------------------------------------------------------------- #
_C.CLOTH = CN()
_C.CLOTH.spacing = 0.025
_C.CLOTH.mass_range = [0.05, 0.5]
_C.CLOTH.size_range = [0.2, 0.4]
_C.CLOTH.stretch_range = [0.5, 2.0]
_C.CLOTH.bend_range = [0.5, 2.0]
_C.CLOTH.shear_range = [0.5, 2.0]
_C.CLOTH.damping = 1.0
_C.CLOTH.stretch_stiffness = 800.0
_C.CLOTH.shear_stiffness = 200.0
_C.CLOTH.bend_stiffness = 50.0
# particle mass the base stiffnesses refer to; 0 disables mass scaling
_C.CLOTH.reference_particle_mass = 0.005
# clearance between the hanging cloth and the ground at the start
_C.CLOTH.start_clearance = 0.1

# ---------------------------------------------------------------------------- #
# Simulator
# ---------------------------------------------------------------------------- #
_C.SIM = CN()
_C.SIM.dt = 0.01
_C.SIM.substeps = 4
_C.SIM.auto_substeps = True
_C.SIM.gravity = [0.0, 0.0, -9.81]
_C.SIM.friction = 0.3
_C.SIM.particle_radius = 0.00625
_C.SIM.projection_passes = 3
_C.SIM.settle_seconds = 3.0
_C.SIM.settle_energy = 1e-4

# ---------------------------------------------------------------------------- #
# Graph representation and metrics
# ---------------------------------------------------------------------------- #
_C.GRAPH = CN()
_C.GRAPH.n_history = 5
_C.GRAPH.radius = 0.045
# grid | voxel
_C.GRAPH.sampler = 'grid'
_C.GRAPH.downsample = 3
# grid sides are never subsampled below this (40 x 40 -> 13 x 13)
_C.GRAPH.min_grid = 13
_C.GRAPH.voxel = 0.0216
_C.GRAPH.match_threshold = 0.1
_C.GRAPH.iou_cell = 0.01

# ---------------------------------------------------------------------------- #
# Dynamics model
# ---------------------------------------------------------------------------- #
_C.MODEL = CN()
_C.MODEL.hidden = 64
_C.MODEL.global_size = 32
_C.MODEL.n_blocks = 10
_C.MODEL.mlp_layers = 3
# full | ground
_C.MODEL.env_features = 'full'
_C.MODEL.divergence_limit = 10.0

# ---------------------------------------------------------------------------- #
# Training
# ---------------------------------------------------------------------------- #
_C.TRAIN = CN()
_C.TRAIN.lr = 1e-4
_C.TRAIN.batch_size = 16
_C.TRAIN.epochs = 20
_C.TRAIN.beta1 = 0.9
_C.TRAIN.beta2 = 0.999
_C.TRAIN.weight_decay = 0.0
_C.TRAIN.noise_std = 1e-3
_C.TRAIN.stats_samples = 2000

# ---------------------------------------------------------------------------- #
# Fling kinematics
# ---------------------------------------------------------------------------- #
_C.TRAJ = CN()
_C.TRAJ.accel = 2.0
_C.TRAJ.hold_steps = 40
_C.TRAJ.min_turning_height = 0.02
_C.TRAJ.release_clearance = 0.01

# ---------------------------------------------------------------------------- #
# Controller
# ---------------------------------------------------------------------------- #
_C.SAMPLER = CN()
_C.SAMPLER.K = 50
_C.SAMPLER.ux_range = [0.2, 1.2]
_C.SAMPLER.uz_range = [0.1, 0.8]

_C.MPC = CN()
_C.MPC.interval = 10
_C.MPC.delta = 0.02

# ---------------------------------------------------------------------------- #
# Dataset
# ---------------------------------------------------------------------------- #
_C.DATA = CN()
_C.DATA.root = 'data/desk'
_C.DATA.n_traj = 200
_C.DATA.kinds = ['flat', 'platform']
# kinds used for training; empty means every kind in the dataset
_C.DATA.train_kinds = []
_C.DATA.test_fraction = 0.1
_C.DATA.goal_jitter = 0.05

# ---------------------------------------------------------------------------- #
# Benchmark
# ---------------------------------------------------------------------------- #
_C.BENCH = CN()
_C.BENCH.kinds = ['flat', 'platform', 'hemisphere', 'pole', 'table']
_C.BENCH.episodes = 20
_C.BENCH.stiffness_mismatch = 0.5
_C.BENCH.no_ea_checkpoint = ''
_C.BENCH.baseline_candidates = 100
_C.BENCH.baseline_contexts = 5
_C.BENCH.baseline_kinds = ['flat', 'platform', 'hemisphere', 'pole']
_C.BENCH.dump = False
_C.BENCH.dump_episodes = 2

KINDS = ['flat', 'platform', 'hemisphere', 'pole', 'table']
SCENARIO_GROUPS = {
    'flat': 'flat',
    'platform': 'complex',
    'hemisphere': 'complex',
    'pole': 'complex',
    'table': 'unseen',
}


def get_cfg_defaults():
    """Fresh, mutable copy of the default configuration."""
    return _C.clone()


def load_config(path=None, overrides=None):
    """
    Load the run configuration.

    Parameters
    ----------
    path : str, optional
        YAML file merged over the defaults.
    overrides : list, optional
        Flat ``['SECTION.key', value, ...]`` list applied after the file.

    Returns
    -------
    CfgNode
        Frozen configuration.
    """
    cfg = get_cfg_defaults()
    if path:
        if not os.path.isfile(path):
            raise ConfigurationError(f'config file not found: {path}')
        try:
            cfg.merge_from_file(path)
        except KeyError as e:
            raise ConfigurationError(f'unknown config key: {_key_name(e)}') from e
        except ValueError as e:
            raise ConfigurationError(f'invalid config value in {path}: {e}') from e
    if overrides:
        try:
            cfg.merge_from_list(list(overrides))
        except (KeyError, AssertionError) as e:
            raise ConfigurationError(f'unknown config key: {_key_name(e)}') from e
        except ValueError as e:
            raise ConfigurationError(f'invalid config override: {e}') from e
    validate_config(cfg)
    cfg.freeze()
    return cfg


def validate_config(cfg):
    for kind in list(cfg.DATA.kinds) + list(cfg.BENCH.kinds) + list(cfg.DATA.train_kinds):
        if kind not in KINDS:
            raise ConfigurationError(f'unknown scenario kind: {kind}')
    if cfg.RUN.dynamics not in ('learned', 'oracle'):
        raise ConfigurationError(f'RUN.dynamics must be learned or oracle, got {cfg.RUN.dynamics}')
    if cfg.RUN.ablation not in ('none', 'no_ea'):
        raise ConfigurationError(f'RUN.ablation must be none or no_ea, got {cfg.RUN.ablation}')
    if cfg.RUN.mode not in ('all', 'ours', 'no_mpc', 'no_ea', 'fixed_baseline'):
        raise ConfigurationError(f'unknown RUN.mode: {cfg.RUN.mode}')
    if cfg.MODEL.env_features not in ('full', 'ground'):
        raise ConfigurationError(f'MODEL.env_features must be full or ground, got {cfg.MODEL.env_features}')
    if cfg.GRAPH.sampler not in ('grid', 'voxel'):
        raise ConfigurationError(f'GRAPH.sampler must be grid or voxel, got {cfg.GRAPH.sampler}')
    if cfg.GRAPH.downsample < 1 or cfg.GRAPH.min_grid < 0:
        raise ConfigurationError('GRAPH.downsample must be at least 1 and GRAPH.min_grid non-negative')
    if cfg.SAMPLER.K < 1:
        raise ConfigurationError('SAMPLER.K must be at least 1')
    if cfg.MPC.interval < 1:
        raise ConfigurationError('MPC.interval must be at least 1')
    if cfg.TRAIN.epochs < 1 or cfg.TRAIN.lr <= 0 or cfg.TRAIN.batch_size < 1:
        raise ConfigurationError('TRAIN needs epochs >= 1, batch_size >= 1 and lr > 0')
    for name in ('ux_range', 'uz_range'):
        lo, hi = cfg.SAMPLER[name]
        if not hi > lo:
            raise ConfigurationError(f'SAMPLER.{name} is degenerate: {(lo, hi)}')


def dump_resolved_config(cfg, out_dir):
    """Write every resolved value to ``out_dir/resolved_config.yaml``."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, 'resolved_config.yaml')
    with open(path, 'w') as f:
        f.write(cfg.dump())
    return path


def _key_name(error):
    # yacs puts the offending key in the message: "Non-existent config key: X"
    message = error.args[0] if error.args else str(error)
    return str(message).split(':')[-1].strip()
