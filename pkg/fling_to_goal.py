"""
fling_to_goal - Command-line entry point

Subcommands:

    collect         simulate a trajectory dataset into DATA.root
    train           train the dynamics model on the training split
    eval-dynamics   held-out velocity and rollout errors per model variant
    bench           controller benchmark (per-episode rows and summary)
    dump-traj       per-step plan and node-centroid tables of a few episodes

Every command loads the configuration (defaults, then --config, then the
command-line flags, then trailing KEY VALUE pairs), echoes the resolved
configuration next to its outputs and returns 0 on success or the exit code
of the error family that stopped it.

Example:

    python fling_to_goal.py collect --seed 1 DATA.n_traj 200
    python fling_to_goal.py train --out runs/general
    python fling_to_goal.py bench --checkpoint runs/general/model.npz --mode all
"""

import argparse
import os
import sys

import pandas as pd

from config_defaults import dump_resolved_config, load_config
from datagen import collect, make_episode
from dataset_io import load_split
from eval_dynamics import eval_dynamics
from fling_errors import ConfigurationError, DataError, FlingError
from gnndyn import PersistenceBaseline, build_model, check_compatible, load_checkpoint, save_checkpoint
from quantify_fling_benchmark import (episode_table, fixed_baseline_point, quantify_fling_benchmark,
                                      run_method)
from seeding import STREAM_MODEL_INIT, child_seed_sequence
from train_dynamics import make_optimizer, train

EVAL_TABLE_COLUMNS = ['variant', 'scenario', 'n_trajectories', 'vel_err_mm', 'pos_err_mm', 'n_diverged']


def _refuse_overwrite(path, force):
    if os.path.exists(path) and not force:
        raise ConfigurationError(f'{path} already exists; pass --force to overwrite')


def _model_variant(model, kinds):
    if model.env_features == 'ground':
        return 'no_ea'
    if len(kinds) == 1:
        return f'specific_{kinds[0]}'
    return 'general'


def _load_model(path, cfg):
    model, info = load_checkpoint(path)
    check_compatible(model, cfg)
    model.eval()
    return model, info


def cmd_collect(cfg, force=False):
    """Simulate the dataset; prints trajectory counts and drop statistics."""
    root = cfg.DATA.root
    _refuse_overwrite(os.path.join(root, 'index.txt'), force)
    dump_resolved_config(cfg, root)
    print(f'Collecting {cfg.DATA.n_traj} trajectories of {", ".join(cfg.DATA.kinds)} into {root}')
    return collect(cfg.DATA.n_traj, list(cfg.DATA.kinds), cfg.RUN.seed, cfg, root, verbose=cfg.RUN.verbose)


def cmd_train(cfg, checkpoint=None, resume=False, force=False):
    """Train on the training split; writes the checkpoint and loss_curve.csv."""
    out = cfg.RUN.out
    path = checkpoint or os.path.join(out, 'model.npz')
    if not resume:
        _refuse_overwrite(path, force)
    kinds = list(cfg.DATA.train_kinds)
    records = load_split(cfg.DATA.root, 'train', kinds or None)
    if not records:
        raise DataError(f'no training trajectories in {cfg.DATA.root} for kinds {kinds or "all"}')
    if not kinds:
        kinds = sorted({r.kind for r in records})
    dump_resolved_config(cfg, out)

    if resume:
        model, info = load_checkpoint(path, optimizer_factory=lambda p: make_optimizer(p, cfg.TRAIN))
        check_compatible(model, cfg)
        start_epoch, optimizer, losses = info['epoch'], info['optimizer'], info['loss_history']
        print(f'Resuming {path} at epoch {start_epoch}')
    else:
        init_seed = int(child_seed_sequence(cfg.RUN.seed, STREAM_MODEL_INIT).generate_state(1)[0])
        model = build_model(cfg.MODEL, cfg.GRAPH.n_history, cfg.SIM.dt, init_seed)
        start_epoch, optimizer, losses = 0, None, []

    print(f'Training on {len(records)} trajectories ({", ".join(kinds)})')
    model, optimizer, history = train(model, records, cfg, cfg.RUN.seed, start_epoch, optimizer, losses,
                                      checkpoint_path=path, verbose=cfg.RUN.verbose)
    losses = losses + [row['loss'] for row in history]
    save_checkpoint(path, model, optimizer, cfg.TRAIN.epochs, losses,
                    extra={'variant': _model_variant(model, kinds), 'train_kinds': kinds})
    curve = pd.DataFrame({'epoch': range(len(losses)), 'loss': losses})
    curve.to_csv(os.path.join(out, 'loss_curve.csv'), index=False)
    print(f'Checkpoint saved to {path}')
    return curve


def cmd_eval_dynamics(cfg, checkpoint=None, force=False):
    """Per-variant, per-scenario held-out errors; the persistence row is always present."""
    out = cfg.RUN.out
    table_path = os.path.join(out, 'eval_dynamics.csv')
    _refuse_overwrite(table_path, force)
    records = load_split(cfg.DATA.root, 'test')
    if not records:
        raise DataError(f'no test trajectories in {cfg.DATA.root}')
    dump_resolved_config(cfg, out)

    variants = []
    if checkpoint:
        model, info = _load_model(checkpoint, cfg)
        label = info['extra'].get('variant', _model_variant(model, [])) if cfg.RUN.ablation == 'none' else 'no_ea'
        variants.append((label, model))
    if cfg.BENCH.no_ea_checkpoint:
        variants.append(('no_ea', _load_model(cfg.BENCH.no_ea_checkpoint, cfg)[0]))
    variants.append(('persistence', PersistenceBaseline(cfg.SIM.dt, cfg.GRAPH.n_history)))

    kinds = sorted({r.kind for r in records})
    rows = []
    for label, predictor in variants:
        for kind in kinds:
            subset = [r for r in records if r.kind == kind]
            summary, _ = eval_dynamics(predictor, subset, cfg)
            rows.append({'variant': label, 'scenario': kind, **summary})
            print(f'-   {label} on {kind}: velocity error {summary["vel_err_mm"]:.3f} mm, '
                  f'rollout error {summary["pos_err_mm"]:.2f} mm')
    table = pd.DataFrame(rows)[EVAL_TABLE_COLUMNS]
    table.to_csv(table_path, index=False)
    print(f'Results saved to {table_path}')
    return table


def _bench_models(cfg, checkpoint):
    if cfg.RUN.dynamics == 'oracle':
        return {}
    if not checkpoint:
        raise ConfigurationError('learned dynamics need --checkpoint (or RUN.dynamics oracle)')
    models = {'full': _load_model(checkpoint, cfg)[0]}
    if cfg.BENCH.no_ea_checkpoint:
        models['no_ea'] = _load_model(cfg.BENCH.no_ea_checkpoint, cfg)[0]
    return models


def cmd_bench(cfg, checkpoint=None, force=False):
    """Controller benchmark; writes bench.csv and bench_summary.csv."""
    out = cfg.RUN.out
    rows_path = os.path.join(out, 'bench.csv')
    _refuse_overwrite(rows_path, force)
    models = _bench_models(cfg, checkpoint)
    dump_resolved_config(cfg, out)
    dump_dir = os.path.join(out, 'dump') if cfg.BENCH.dump else None
    rows, summary = quantify_fling_benchmark(cfg, models, dump_dir=dump_dir, verbose=cfg.RUN.verbose)
    rows.to_csv(rows_path, index=False)
    summary.to_csv(os.path.join(out, 'bench_summary.csv'), index=False)
    print(f'Results saved to {rows_path}')
    return rows, summary


def cmd_dump_traj(cfg, checkpoint=None, force=False):
    """One plan/centroid table per episode for BENCH.dump_episodes episodes of each kind."""
    out_dir = os.path.join(cfg.RUN.out, 'traj')
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise ConfigurationError(f'{out_dir} is not empty; pass --force to overwrite')
    models = _bench_models(cfg, checkpoint)
    method = 'ours' if cfg.RUN.mode == 'all' else cfg.RUN.mode
    fixed_u = fixed_baseline_point(cfg, cfg.RUN.seed, cfg.RUN.verbose)[0] if method == 'fixed_baseline' else None
    os.makedirs(out_dir, exist_ok=True)
    dump_resolved_config(cfg, cfg.RUN.out)

    written = []
    for kind in cfg.BENCH.kinds:
        for i in range(cfg.BENCH.dump_episodes):
            episode = make_episode(kind, i, cfg.RUN.seed, cfg, cfg.BENCH.stiffness_mismatch)
            report = run_method(episode, method, cfg, models, fixed_u, cfg.RUN.seed, record_frames=True)
            path = os.path.join(out_dir, f'{method}_{kind}_{i:03d}.csv')
            episode_table(report).to_csv(path, index=False)
            written.append(path)
            if cfg.RUN.verbose:
                print(f'-   Wrote {path}')
    return written


def build_parser():
    parser = argparse.ArgumentParser(description='Goal-conditioned cloth flinging: data, model and controller.')
    sub = parser.add_subparsers(dest='command', required=True)
    for name in ('collect', 'train', 'eval-dynamics', 'bench', 'dump-traj'):
        p = sub.add_parser(name)
        p.add_argument('--config', help='YAML configuration merged over the defaults')
        p.add_argument('--seed', type=int, help='root seed (RUN.seed)')
        p.add_argument('--out', help='output directory (RUN.out)')
        p.add_argument('--mode', help='benchmark method: all, ours, no_mpc, no_ea or fixed_baseline')
        p.add_argument('--ablation', help='none or no_ea (train with ground-only environment features)')
        p.add_argument('--force', action='store_true', help='overwrite existing outputs')
        p.add_argument('--checkpoint', help='model checkpoint (.npz)')
        p.add_argument('--resume', action='store_true', help='continue training from --checkpoint')
        p.add_argument('opts', nargs=argparse.REMAINDER, help='KEY VALUE overrides, e.g. DATA.n_traj 20')
    return parser


def config_from_args(args):
    overrides = []
    if args.seed is not None:
        overrides += ['RUN.seed', args.seed]
    if args.out:
        overrides += ['RUN.out', args.out]
    if args.mode:
        overrides += ['RUN.mode', args.mode]
    if args.ablation:
        overrides += ['RUN.ablation', args.ablation]
        if args.ablation == 'no_ea':
            overrides += ['MODEL.env_features', 'ground']
    if args.force:
        overrides += ['RUN.force', True]
    overrides += list(args.opts or [])
    return load_config(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        force = cfg.RUN.force
        if args.command == 'collect':
            cmd_collect(cfg, force)
        elif args.command == 'train':
            cmd_train(cfg, args.checkpoint, args.resume, force)
        elif args.command == 'eval-dynamics':
            cmd_eval_dynamics(cfg, args.checkpoint, force)
        elif args.command == 'bench':
            cmd_bench(cfg, args.checkpoint, force)
        else:
            cmd_dump_traj(cfg, args.checkpoint, force)
    except FlingError as e:
        print(f'error: {e}', file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
