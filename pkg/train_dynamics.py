"""
train_dynamics - Supervised training of the graph dynamics model

Training triples are cut lazily from the recorded trajectories with a
sliding window. Input and edge normalization statistics are fitted once, on
noise-free windows, before the first epoch and then frozen. Each epoch
visits every window once in a seeded order; small Gaussian position jitter
is added to non-picked nodes and corrected in the target velocity.
"""

import time
import warnings

import numpy as np
import torch

from dataset_io import n_windows, record_scene, window_sample
from fling_errors import DataError, TrainingError
from gnndyn import drive_features, loss_and_grad, save_checkpoint, set_normalization
from seeding import STREAM_TRAIN_NOISE, STREAM_TRAIN_SHUFFLE, child_rng


def make_optimizer(parameters, train_cfg):
    """Adam with the TRAIN section hyperparameters."""
    return torch.optim.Adam(
        parameters,
        lr=train_cfg.lr,
        betas=(train_cfg.beta1, train_cfg.beta2),
        weight_decay=train_cfg.weight_decay,
    )


def window_index(records, n_history):
    """(record, start) pairs of every training window, in dataset order."""
    pairs = [(r, s) for r, record in enumerate(records) for s in range(n_windows(record, n_history))]
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def fit_normalization(model, records, scenes, index, radius, n_samples, seed):
    """
    Fit and install normalization statistics from up to n_samples windows.

    Node and edge features get mean and std; the velocity output gets a
    per-axis RMS scale computed over non-picked nodes.
    """
    rng = child_rng(seed, STREAM_TRAIN_SHUFFLE)
    n = min(int(n_samples), len(index))
    chosen = np.sort(rng.choice(len(index), size=n, replace=False))

    node_f, edge_f, targets = [], [], []
    for k in chosen:
        r, start = index[k]
        w = window_sample(records[r], start, scenes[r], radius, model.n_history, model.env_features)
        node_f.append(drive_features(w.sample, w.action, model.dt))
        edge_f.append(w.sample.edge_features)
        free = np.ones(w.sample.n_nodes, dtype=bool)
        free[w.sample.picked] = False
        targets.append(w.target[free])

    node_f = np.concatenate(node_f)
    edge_f = np.concatenate(edge_f)
    targets = np.concatenate(targets)
    set_normalization(
        model,
        node_f.mean(axis=0), node_f.std(axis=0),
        edge_f.mean(axis=0), edge_f.std(axis=0),
        np.sqrt(np.mean(targets ** 2, axis=0)),
    )
    return n


def train(model, records, cfg, seed, start_epoch=0, optimizer=None, loss_history=None,
          checkpoint_path=None, verbose=True):
    """
    Train a DynamicsModel on trajectory records.

    Parameters
    ----------
    model : DynamicsModel
    records : list of TrajectoryRecord
        Training split.
    cfg : CfgNode
        Uses the GRAPH, SCENE and TRAIN sections.
    seed : int
        Root seed; epoch order and jitter are addressed by (seed, epoch).
    start_epoch : int
        First epoch to run; above zero when resuming, in which case the
        normalization statistics of the model are kept.
    optimizer : torch.optim.Optimizer, optional
        Restored optimizer when resuming.
    loss_history : list of float, optional
        Per-epoch losses of the epochs already run.
    checkpoint_path : str, optional
        Checkpoint written after every epoch.
    verbose : bool

    Returns
    -------
    model : DynamicsModel
    optimizer : torch.optim.Optimizer
    history : list of dict
        One row per epoch run: epoch, loss, first_batch_loss, n_batches, seconds.
    """
    if not records:
        raise DataError('no training trajectories')
    train_cfg = cfg.TRAIN
    radius = cfg.GRAPH.radius
    scenes = [record_scene(r, cfg.SCENE) for r in records]
    index = window_index(records, model.n_history)
    if len(index) == 0:
        raise DataError(f'training trajectories are shorter than {model.n_history + 1} frames')

    if start_epoch == 0:
        n_stats = fit_normalization(model, records, scenes, index, radius, train_cfg.stats_samples, seed)
        if verbose:
            print(f'-   Normalization fitted on {n_stats} windows')
    if optimizer is None:
        optimizer = make_optimizer(model.parameters(), train_cfg)
    losses = list(loss_history or [])

    history = []
    model.train()
    for epoch in range(start_epoch, train_cfg.epochs):
        tic = time.time()
        order = child_rng(seed, STREAM_TRAIN_SHUFFLE, epoch).permutation(len(index))
        batch_losses = []
        for b, lo in enumerate(range(0, len(order), train_cfg.batch_size)):
            noise_rng = child_rng(seed, STREAM_TRAIN_NOISE, epoch, b)
            batch = []
            for k in order[lo:lo + train_cfg.batch_size]:
                r, start = index[k]
                w = window_sample(records[r], start, scenes[r], radius, model.n_history, model.env_features,
                                  noise_std=train_cfg.noise_std, rng=noise_rng)
                batch.append((w.sample, w.action, w.target))
            loss, _ = loss_and_grad(model, batch, batch_index=b)
            optimizer.step()
            batch_losses.append(loss)

        epoch_loss = float(np.mean(batch_losses))
        if not np.isfinite(epoch_loss):
            raise TrainingError(f'non-finite mean loss in epoch {epoch}')
        if epoch == 0 and len(batch_losses) > 1 and epoch_loss >= batch_losses[0]:
            warnings.warn(f'Loss did not decrease during the first epoch '
                          f'(first batch {batch_losses[0]:.4g}, epoch mean {epoch_loss:.4g})')
        losses.append(epoch_loss)
        row = {
            'epoch': epoch,
            'loss': epoch_loss,
            'first_batch_loss': batch_losses[0],
            'n_batches': len(batch_losses),
            'seconds': time.time() - tic,
        }
        history.append(row)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, model, optimizer, epoch + 1, losses)
        if verbose:
            print(f'  Epoch {epoch + 1}/{train_cfg.epochs}: loss {epoch_loss:.5f} '
                  f'({len(batch_losses)} batches, {row["seconds"]:.1f} s)')
    model.eval()
    return model, optimizer, history
