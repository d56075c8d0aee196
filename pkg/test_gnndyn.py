"""
Tests for the graph network dynamics model, its rollouts and its training.
"""

from dataclasses import replace

import numpy as np
import pytest
import torch

from build_graph import build_graph, node_feature_width
from config_defaults import get_cfg_defaults
from dataset_io import TrajectoryRecord
from envsdf import make_scenario
from fling_errors import ModelError, RolloutDivergedError, TrainingError
from gnndyn import (DynamicsModel, PersistenceBaseline, batch_loss, build_model, check_compatible, collate,
                    euler_update, forward, load_checkpoint, loss_and_grad, rollout_model, rollout_model_batch,
                    save_checkpoint)
from train_dynamics import make_optimizer, train

SCENE = make_scenario('flat')


def _grid(n=3, spacing=0.025, z=0.2):
    r, c = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    return np.column_stack([r.ravel() * spacing, c.ravel() * spacing, np.full(n * n, z)])


def _random_sample(rng, n_nodes=5, radius=0.5):
    history = rng.uniform(0.0, 0.1, size=(6, n_nodes, 3)) + [0.0, 0.0, 0.2]
    return build_graph(history, SCENE, [0, 1], radius, 0.01)


def _zero_model(**kwargs):
    model = DynamicsModel(**kwargs)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def _static_record(traj_id, n_frames=10, offset=0.0):
    x = _grid() + [offset, 0.0, 0.0]
    positions = np.repeat(x[None], n_frames, axis=0)
    header = {
        'dt': 0.01,
        'scenario': {'kind': 'flat', 'y': 0.0, 'z': None, 'yaw_deg': 0.0},
        'picked_nodes': [0, 2],
        'mesh_edges': [[0, 1], [1, 2], [0, 3], [3, 6]],
        'traj_id': traj_id,
    }
    pickers = np.repeat(x[[0, 2]][None], n_frames, axis=0)
    return TrajectoryRecord(header, positions, np.zeros_like(positions), pickers)


def _small_cfg(epochs=3):
    cfg = get_cfg_defaults()
    cfg.MODEL.hidden = 16
    cfg.MODEL.global_size = 8
    cfg.MODEL.n_blocks = 2
    cfg.MODEL.mlp_layers = 1
    cfg.TRAIN.epochs = epochs
    cfg.TRAIN.batch_size = 4
    cfg.TRAIN.lr = 1e-3
    return cfg


def test_zero_weights_predict_zero():
    """Test that an all-zero network predicts zero velocity."""
    print("Testing zero-weight model...")
    model = _zero_model(hidden=8, global_size=4, n_blocks=2, mlp_layers=1)
    sample = _random_sample(np.random.default_rng(0))
    out = forward(model, sample, np.zeros((2, 3)))
    assert out.shape == (5, 3), f"Expected (5, 3) output, got {out.shape}"
    assert np.all(out == 0.0), "Zero weights should give zero velocity"
    print("✓ zero-weight model tests passed")


def test_permutation_equivariance():
    """Test that relabeling nodes permutes the output the same way."""
    print("Testing permutation equivariance...")
    torch.manual_seed(0)
    model = DynamicsModel(hidden=16, global_size=8, n_blocks=2, mlp_layers=2).double()
    rng = np.random.default_rng(1)
    sample = _random_sample(rng, n_nodes=7, radius=0.08)
    node_f, edge_f, senders, receivers, node_graph, n_graphs, _ = collate([sample], [np.zeros((2, 3))], 0.01,
                                                                           torch.float64)
    with torch.no_grad():
        out = model(node_f, edge_f, senders, receivers, node_graph, n_graphs).numpy()

        perm = rng.permutation(7)
        inverse = np.argsort(perm)
        new_s = torch.as_tensor(inverse[senders.numpy()])
        new_r = torch.as_tensor(inverse[receivers.numpy()])
        out_p = model(node_f[perm], edge_f, new_s, new_r, node_graph, n_graphs).numpy()
    err = np.max(np.abs(out_p - out[perm]))
    assert err < 1e-9, f"Permuted output differs by {err}"
    print("✓ permutation equivariance tests passed")


def test_environment_features_reach_output():
    """Test that changing one node's signed distance changes the predicted velocities."""
    print("Testing environment feature sensitivity...")
    torch.manual_seed(3)
    model = DynamicsModel(hidden=16, global_size=8, n_blocks=2, mlp_layers=1).double()
    sample = _random_sample(np.random.default_rng(8), n_nodes=5, radius=0.08)
    action = np.zeros((2, 3))
    base = forward(model, sample, action)

    node = 3
    features = sample.node_features.copy()
    features[node, 17] += 0.05
    moved = forward(model, replace(sample, node_features=features), action)
    assert np.max(np.abs(moved[node] - base[node])) > 1e-9, "The SDF distance feature has no effect on the output"

    features = sample.node_features.copy()
    features[node, 18:21] = [1.0, 0.0, 0.0]
    turned = forward(model, replace(sample, node_features=features), action)
    assert np.max(np.abs(turned[node] - base[node])) > 1e-9, "The SDF gradient feature has no effect on the output"
    print("✓ environment feature sensitivity tests passed")


def test_hand_computed_forward():
    """Test a model without processor blocks against explicit linear algebra."""
    print("Testing hand-computed forward...")
    torch.manual_seed(2)
    model = DynamicsModel(hidden=4, global_size=2, n_blocks=0, mlp_layers=0).double()
    f = np.random.default_rng(3).normal(size=(1, node_feature_width(5)))
    with torch.no_grad():
        out = model(torch.as_tensor(f), torch.zeros((0, 6), dtype=torch.float64),
                    torch.zeros(0, dtype=torch.long), torch.zeros(0, dtype=torch.long),
                    torch.zeros(1, dtype=torch.long), 1).numpy()
    enc, dec = model.node_encoder[0], model.decoder[0]
    h = enc.weight.detach().numpy() @ f[0] + enc.bias.detach().numpy()
    expected = dec.weight.detach().numpy() @ h + dec.bias.detach().numpy()
    assert np.allclose(out[0], expected, atol=1e-12), f"Expected {expected}, got {out[0]}"

    assert np.allclose(euler_update([[0.0, 0.0, 1.0]], [[1.0, 2.0, -3.0]], 0.01), [[0.01, 0.02, 0.97]]), \
        "Euler update x + v dt"
    print("✓ hand-computed forward tests passed")


def test_zero_loss_gives_zero_gradient():
    """Test that a perfect prediction has zero gradient."""
    model = _zero_model(hidden=8, global_size=4, n_blocks=1, mlp_layers=1)
    sample = _random_sample(np.random.default_rng(4))
    loss, grads = loss_and_grad(model, [(sample, np.zeros((2, 3)), np.zeros((5, 3)))])
    assert loss == 0.0, f"Expected zero loss, got {loss}"
    assert all(np.all(g == 0.0) for g in grads.values()), "Zero loss should give zero gradients"
    with pytest.raises(TrainingError):
        loss_and_grad(model, [])


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    """Test every backpropagated gradient entry against central differences on a tiny float64 net."""
    print("Testing gradients against finite differences...")
    torch.manual_seed(seed)
    model = DynamicsModel(hidden=8, global_size=4, n_blocks=1, mlp_layers=1).double()
    rng = np.random.default_rng(seed + 10)
    batch = [(_random_sample(rng), rng.normal(0.0, 0.01, size=(2, 3)), rng.normal(size=(5, 3)))]
    _, grads = loss_and_grad(model, batch)

    eps = 1e-6
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
                up = batch_loss(model, batch).item()
                flat[i] = original - eps
                down = batch_loss(model, batch).item()
                flat[i] = original
            fd = (up - down) / (2 * eps)
            g = grads[name].reshape(-1)[i]
            assert abs(fd - g) <= 1e-3 * max(abs(fd), abs(g)) + 1e-6, \
                f"{name}[{i}]: finite difference {fd} vs gradient {g}"
    print("✓ finite-difference gradient tests passed")


def test_checkpoint_round_trip(tmp_path):
    """Test that weights, statistics and Adam moments survive a checkpoint."""
    print("Testing checkpoint round trip...")
    cfg = _small_cfg()
    model = build_model(cfg.MODEL, seed=5)
    optimizer = make_optimizer(model.parameters(), cfg.TRAIN)
    batch = [(_random_sample(np.random.default_rng(6)), np.zeros((2, 3)), np.ones((5, 3)))]
    loss_and_grad(model, batch)
    optimizer.step()

    path = save_checkpoint(str(tmp_path / 'model.npz'), model, optimizer, 3, [1.0, 0.5], {'note': 'x'})
    loaded, info = load_checkpoint(path, lambda p: make_optimizer(p, cfg.TRAIN))
    assert info['epoch'] == 3 and info['loss_history'] == [1.0, 0.5], "Epoch and loss history not restored"
    assert info['extra'] == {'note': 'x'}, "Extra metadata not restored"
    for (name, a), b in zip(model.state_dict().items(), loaded.state_dict().values()):
        assert torch.equal(a, b), f"{name} differs after loading"

    # one more identical step on both copies
    for m, opt in ((model, optimizer), (loaded, info['optimizer'])):
        loss_and_grad(m, batch)
        opt.step()
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert torch.allclose(a, b), "Restored optimizer should take the same step"

    with pytest.raises(ModelError):
        load_checkpoint(str(tmp_path / 'missing.npz'))
    print("✓ checkpoint tests passed")


def test_incompatible_inputs():
    """Test width and configuration mismatches."""
    model = DynamicsModel(hidden=8, global_size=4, n_blocks=1, mlp_layers=1)
    with pytest.raises(ModelError):
        model(torch.zeros((3, 20)), torch.zeros((0, 6)), torch.zeros(0, dtype=torch.long),
              torch.zeros(0, dtype=torch.long), torch.zeros(3, dtype=torch.long), 1)
    cfg = get_cfg_defaults()
    check_compatible(model, cfg)
    cfg.GRAPH.n_history = 3
    with pytest.raises(ModelError):
        check_compatible(model, cfg)
    cfg = get_cfg_defaults()
    cfg.SIM.dt = 0.02
    with pytest.raises(ModelError):
        check_compatible(model, cfg)


def test_persistence_baseline():
    """Test that the baseline repeats the newest velocity."""
    sample = _random_sample(np.random.default_rng(7))
    out = PersistenceBaseline().predict(sample, np.zeros((2, 3)))
    assert np.array_equal(out, sample.node_features[:, :3]), "Baseline should repeat the newest velocity"


def test_zero_model_rollouts():
    """Test rollouts of a zero-velocity model with still and moving pickers."""
    print("Testing rollouts...")
    model = _zero_model(hidden=8, global_size=4, n_blocks=1, mlp_layers=1)
    x = _grid()
    window = np.repeat(x[None], 6, axis=0)
    picked = [0, 2]
    still = np.repeat(x[picked][None], 5, axis=0)
    frames = rollout_model(model, window, SCENE, still, picked)
    assert frames.shape == (5, 9, 3), f"Expected 5 frames, got {frames.shape}"
    assert np.allclose(frames, x), "A still rollout of a zero model should stay frozen"

    moving = still + np.arange(5)[:, None, None] * np.array([0.01, 0.0, 0.0])
    frames = rollout_model(model, window, SCENE, moving, picked)
    assert np.allclose(frames[:, picked], moving), "Picked nodes should follow the pickers"
    free = [i for i in range(9) if i not in picked]
    assert np.allclose(frames[:, free], x[free]), "Free nodes should not move under a zero model"
    print("✓ rollout tests passed")


class _ExplodingPredictor:
    env_features = 'full'

    def predict(self, sample, action):
        return np.full((sample.n_nodes, 3), 1e4)

    def predict_batch(self, samples, actions):
        return [self.predict(s, a) for s, a in zip(samples, actions)]


def test_rollout_divergence():
    """Test that runaway positions raise and are isolated in batched rollouts."""
    x = _grid()
    window = np.repeat(x[None], 6, axis=0)
    path = np.repeat(x[[0, 2]][None], 4, axis=0)
    with pytest.raises(RolloutDivergedError) as info:
        rollout_model(_ExplodingPredictor(), window, SCENE, path, [0, 2], start=0)
    assert info.value.step_index == 0, f"Expected divergence at step 0, got {info.value.step_index}"

    results = rollout_model_batch(_ExplodingPredictor(), window, SCENE, [path, path[:1]], [0, 2])
    assert isinstance(results[0], RolloutDivergedError), "Diverging candidate should carry its error"
    assert np.allclose(results[1], x), "An empty plan should return the current frame"


def test_batched_rollout_matches_sequential():
    """Test that batching candidates does not change their rollouts."""
    print("Testing batched rollouts...")
    torch.manual_seed(8)
    model = DynamicsModel(hidden=16, global_size=8, n_blocks=2, mlp_layers=1).double()
    x = _grid()
    window = np.repeat(x[None], 6, axis=0)
    base = x[[0, 2]]
    plans = [
        base[None] + np.arange(5)[:, None, None] * np.array([0.01, 0.0, 0.0]),
        base[None] + np.arange(7)[:, None, None] * np.array([0.0, 0.005, 0.01]),
    ]
    batched = rollout_model_batch(model, window, SCENE, plans, [0, 2], mesh_edges=[[0, 1], [1, 2]])
    for plan, final in zip(plans, batched):
        single = rollout_model(model, window, SCENE, plan, [0, 2], mesh_edges=[[0, 1], [1, 2]])[-1]
        assert np.allclose(single, final, atol=1e-9), "Batched and sequential rollouts differ"
    print("✓ batched rollout tests passed")


def test_training_reduces_loss_and_is_reproducible():
    """Test that training lowers the loss and that a fixed seed fixes the weights."""
    print("Testing training...")
    cfg = _small_cfg(epochs=3)
    cfg.TRAIN.noise_std = 0.0
    records = [_static_record(0), _static_record(1, offset=0.1)]

    model, _, history = train(build_model(cfg.MODEL, seed=3), records, cfg, seed=3, verbose=False)
    assert len(history) == 3 and history[0]['n_batches'] == 3, "Expected 3 epochs of 3 batches"
    assert history[-1]['loss'] < history[0]['first_batch_loss'], \
        f"Loss did not decrease: {history[0]['first_batch_loss']} -> {history[-1]['loss']}"

    again, _, _ = train(build_model(cfg.MODEL, seed=3), records, cfg, seed=3, verbose=False)
    for (name, a), b in zip(model.state_dict().items(), again.state_dict().values()):
        assert torch.equal(a, b), f"{name} differs between identical training runs"
    print("✓ training tests passed")


def test_training_resume(tmp_path):
    """Test that resuming from a checkpoint reproduces the next epoch."""
    print("Testing training resume...")
    records = [_static_record(0), _static_record(1, offset=0.1)]
    cfg = _small_cfg(epochs=2)
    _, _, full = train(build_model(cfg.MODEL, seed=4), records, cfg, seed=4, verbose=False)

    path = str(tmp_path / 'resume.npz')
    cfg.TRAIN.epochs = 1
    train(build_model(cfg.MODEL, seed=4), records, cfg, seed=4, checkpoint_path=path, verbose=False)
    model, info = load_checkpoint(path, lambda p: make_optimizer(p, cfg.TRAIN))
    assert info['epoch'] == 1, f"Checkpoint should be after epoch 1, got {info['epoch']}"
    cfg.TRAIN.epochs = 2
    _, _, resumed = train(model, records, cfg, seed=4, start_epoch=1, optimizer=info['optimizer'],
                          loss_history=info['loss_history'], verbose=False)
    assert len(resumed) == 1, "Only the remaining epoch should run"
    assert abs(resumed[0]['loss'] - full[1]['loss']) < 1e-6, \
        f"Resumed epoch loss {resumed[0]['loss']} differs from {full[1]['loss']}"
    print("✓ training resume tests passed")


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
