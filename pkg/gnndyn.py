"""
gnndyn - Environment-aware graph network dynamics model

Encoder / processor / decoder graph network predicting the next-step
velocity of every cloth node. The encoder embeds node features (velocity
history, picked one-hot, environment descriptor) and edge features
(distance vector, length, edge type). Each processor block updates edges
from their endpoint nodes and the global vector, nodes from the summed
incoming edges and the global vector, and the global vector from mean-pooled
nodes and edges. Edge and node streams are residual. The decoder maps node
embeddings to velocities.

Picked nodes are driven by the action a: their newest input velocity is
a / dt and, during rollout, their next position is x + a.
"""

import json
import os

import numpy as np
import torch
import torch.nn as nn

from build_graph import EDGE_WIDTH, build_graph, node_feature_width
from clothsim import picker_path
from fling_errors import ModelError, RolloutDivergedError, TrainingError

CHECKPOINT_VERSION = 1


def mlp(in_dim, hidden, out_dim, n_hidden_layers):
    """ReLU MLP with n_hidden_layers hidden layers and a linear output."""
    layers = []
    width = in_dim
    for _ in range(n_hidden_layers):
        layers += [nn.Linear(width, hidden), nn.ReLU()]
        width = hidden
    layers.append(nn.Linear(width, out_dim))
    return nn.Sequential(*layers)


def segment_sum(values, index, n_segments):
    out = values.new_zeros((n_segments,) + values.shape[1:])
    return out.index_add_(0, index, values)


def segment_mean(values, index, n_segments):
    total = segment_sum(values, index, n_segments)
    count = torch.bincount(index, minlength=n_segments).clamp(min=1).to(values.dtype)
    return total / count[:, None]


class GraphNetBlock(nn.Module):
    def __init__(self, hidden, global_size, mlp_layers):
        super().__init__()
        self.edge_mlp = mlp(3 * hidden + global_size, hidden, hidden, mlp_layers)
        self.node_mlp = mlp(2 * hidden + global_size, hidden, hidden, mlp_layers)
        self.global_mlp = mlp(2 * hidden + global_size, hidden, global_size, mlp_layers)

    def forward(self, h, e, u, senders, receivers, node_graph, edge_graph, n_graphs):
        e = e + self.edge_mlp(torch.cat([e, h[senders], h[receivers], u[edge_graph]], dim=1))
        incoming = segment_sum(e, receivers, h.shape[0])
        h = h + self.node_mlp(torch.cat([h, incoming, u[node_graph]], dim=1))
        u = self.global_mlp(torch.cat([
            segment_mean(h, node_graph, n_graphs),
            segment_mean(e, edge_graph, n_graphs),
            u,
        ], dim=1))
        return h, e, u


class DynamicsModel(nn.Module):
    """
    Graph network dynamics model.

    Parameters
    ----------
    hidden : int
        Node and edge embedding width h.
    global_size : int
        Global vector width g.
    n_blocks : int
        Processor blocks.
    mlp_layers : int
        Hidden layers per MLP.
    n_history : int
        Velocities in the node features.
    dt : float
        Model time step, seconds.
    env_features : str
        full (scene SDF descriptor) or ground (ground plane only).
    """

    def __init__(self, hidden=64, global_size=32, n_blocks=10, mlp_layers=3, n_history=5,
                 dt=0.01, env_features='full'):
        super().__init__()
        self.hidden = int(hidden)
        self.global_size = int(global_size)
        self.n_blocks = int(n_blocks)
        self.mlp_layers = int(mlp_layers)
        self.n_history = int(n_history)
        self.dt = float(dt)
        self.env_features = env_features
        self.node_in = node_feature_width(self.n_history)
        self.edge_in = EDGE_WIDTH

        self.node_encoder = mlp(self.node_in, self.hidden, self.hidden, self.mlp_layers)
        self.edge_encoder = mlp(self.edge_in, self.hidden, self.hidden, self.mlp_layers)
        self.blocks = nn.ModuleList(
            GraphNetBlock(self.hidden, self.global_size, self.mlp_layers) for _ in range(self.n_blocks))
        self.decoder = mlp(self.hidden, self.hidden, 3, self.mlp_layers)

        self.register_buffer('node_mean', torch.zeros(self.node_in))
        self.register_buffer('node_std', torch.ones(self.node_in))
        self.register_buffer('edge_mean', torch.zeros(self.edge_in))
        self.register_buffer('edge_std', torch.ones(self.edge_in))
        self.register_buffer('out_std', torch.ones(3))

    def config(self):
        return {
            'hidden': self.hidden,
            'global_size': self.global_size,
            'n_blocks': self.n_blocks,
            'mlp_layers': self.mlp_layers,
            'n_history': self.n_history,
            'dt': self.dt,
            'env_features': self.env_features,
        }

    @property
    def dtype(self):
        return self.node_mean.dtype

    def forward(self, node_features, edge_features, senders, receivers, node_graph, n_graphs):
        """Normalized velocity prediction for a collated batch of graphs."""
        if node_features.shape[1] != self.node_in:
            raise ModelError(f'node_encoder expects {self.node_in} node features, got {node_features.shape[1]}')
        if edge_features.shape[1] != self.edge_in:
            raise ModelError(f'edge_encoder expects {self.edge_in} edge features, got {edge_features.shape[1]}')
        h = self.node_encoder((node_features - self.node_mean) / self.node_std)
        e = self.edge_encoder((edge_features - self.edge_mean) / self.edge_std)
        u = h.new_zeros((n_graphs, self.global_size))
        edge_graph = node_graph[senders]
        for block in self.blocks:
            h, e, u = block(h, e, u, senders, receivers, node_graph, edge_graph, n_graphs)
        return self.decoder(h)

    def predict(self, sample, action):
        return forward(self, sample, action)

    def predict_batch(self, samples, actions):
        inputs = collate(samples, actions, self.dt, self.dtype)
        with torch.no_grad():
            out = self(*inputs[:6]) * self.out_std
        out = out.cpu().numpy().astype(float)
        return np.split(out, np.cumsum([s.n_nodes for s in samples])[:-1])


class PersistenceBaseline:
    """Predicts that every node keeps its previous velocity."""

    env_features = 'full'

    def __init__(self, dt=0.01, n_history=5):
        self.dt = float(dt)
        self.n_history = int(n_history)

    def predict(self, sample, action):
        return np.array(sample.newest_velocity, dtype=float)

    def predict_batch(self, samples, actions):
        return [self.predict(s, a) for s, a in zip(samples, actions)]


def drive_features(sample, action, dt):
    """Node features with a / dt inserted as the newest velocity of picked nodes."""
    features = np.array(sample.node_features, dtype=float)
    action = np.asarray(action, dtype=float).reshape(-1, 3)
    if len(action) != len(sample.picked):
        raise ModelError(f'action has {len(action)} rows for {len(sample.picked)} picked nodes')
    if not np.all(np.isfinite(action)):
        raise ModelError('action contains non-finite values')
    if len(sample.picked):
        n_vel = features.shape[1] - 6
        history = features[sample.picked, :n_vel]
        features[sample.picked, 3:n_vel] = history[:, :n_vel - 3]
        features[sample.picked, :3] = action / dt
    return features


def collate(samples, actions, dt, dtype=torch.float32):
    """
    Disjoint union of graphs as tensors.

    Returns node features, edge features, senders, receivers, node graph ids,
    graph count, and the picked-node mask.
    """
    node_f, edge_f, senders, receivers, node_graph, picked = [], [], [], [], [], []
    offset = 0
    for g, (sample, action) in enumerate(zip(samples, actions)):
        node_f.append(drive_features(sample, action, dt))
        edge_f.append(sample.edge_features)
        senders.append(sample.senders + offset)
        receivers.append(sample.receivers + offset)
        node_graph.append(np.full(sample.n_nodes, g, dtype=np.int64))
        mask = np.zeros(sample.n_nodes, dtype=bool)
        mask[sample.picked] = True
        picked.append(mask)
        offset += sample.n_nodes
    return (
        torch.as_tensor(np.concatenate(node_f), dtype=dtype),
        torch.as_tensor(np.concatenate(edge_f).reshape(-1, EDGE_WIDTH), dtype=dtype),
        torch.as_tensor(np.concatenate(senders).astype(np.int64)),
        torch.as_tensor(np.concatenate(receivers).astype(np.int64)),
        torch.as_tensor(np.concatenate(node_graph)),
        len(samples),
        torch.as_tensor(np.concatenate(picked)),
    )


def forward(model, sample, action):
    """
    Next-step velocity of every node.

    Parameters
    ----------
    model : DynamicsModel
    sample : GraphSample
    action : array_like
        (P, 3) displacement of each picked node this step, meters.

    Returns
    -------
    ndarray
        (M, 3) velocities, m/s. Picked-node outputs are not overridden here.
    """
    return model.predict_batch([sample], [action])[0]


def euler_update(positions, velocities, dt):
    return np.asarray(positions) + np.asarray(velocities) * dt


def _next_positions(x, velocity, picked, action, dt):
    x_new = euler_update(x, velocity, dt)
    x_new[picked] = x[picked] + action
    return x_new


def rollout_model(predictor, window, scene, plan, picked, mesh_edges=None, radius=0.045, dt=0.01,
                  n_history=5, env_features=None, limit=10.0, start=0):
    """
    Autoregressive rollout of a predictor along a plan.

    Parameters
    ----------
    predictor : DynamicsModel or PersistenceBaseline
    window : array_like
        (n_history + 1, M, 3) most recent node positions, oldest first.
    scene : SceneSdf
    plan : FlingPlan or array_like
        Plan, or (T+1, 2, 3) picker positions.
    picked : array_like
        Node ids of the left and right picked nodes.
    mesh_edges : array_like, optional
    radius, dt : float
    n_history : int
    env_features : str, optional
        Defaults to the predictor's setting.
    limit : float
        Positions beyond this magnitude raise RolloutDivergedError.
    start : int
        First plan step to execute.

    Returns
    -------
    ndarray
        (T+1-start, M, 3) node positions, the current frame first.
    """
    if env_features is None:
        env_features = getattr(predictor, 'env_features', 'full')
    path = picker_path(plan)[start:]
    picked = np.asarray(picked, dtype=np.int64)
    frames = [np.array(f, dtype=float) for f in window]
    out = [frames[-1]]
    for t in range(len(path) - 1):
        sample = build_graph(np.stack(frames[-(n_history + 1):]), scene, picked, radius, dt,
                             mesh_edges, env_features=env_features, n_history=n_history)
        action = path[t + 1] - path[t]
        velocity = predictor.predict(sample, action)
        x = _next_positions(frames[-1], velocity, picked, action, dt)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
            raise RolloutDivergedError(f'rollout diverged at step {start + t}', start + t)
        frames.append(x)
        out.append(x)
    return np.stack(out)


def rollout_model_batch(predictor, window, scene, plans, picked, mesh_edges=None, radius=0.045, dt=0.01,
                        n_history=5, env_features=None, limit=10.0, start=0):
    """
    Rollouts of several plans from one window, one batched forward per step.

    Each candidate is value-isolated: a diverging candidate does not affect the
    others. Returns a list with the final node positions of each plan, or the
    RolloutDivergedError it raised.
    """
    if env_features is None:
        env_features = getattr(predictor, 'env_features', 'full')
    paths = [picker_path(p)[start:] for p in plans]
    picked = np.asarray(picked, dtype=np.int64)
    base = [np.array(f, dtype=float) for f in window]
    frames = [list(base) for _ in paths]
    results = [None] * len(paths)

    t = 0
    while True:
        active = [k for k, p in enumerate(paths) if results[k] is None and t < len(p) - 1]
        for k, p in enumerate(paths):
            if results[k] is None and t >= len(p) - 1:
                results[k] = frames[k][-1]
        if not active:
            break
        samples, actions = [], []
        for k in active:
            samples.append(build_graph(np.stack(frames[k][-(n_history + 1):]), scene, picked, radius, dt,
                                       mesh_edges, env_features=env_features, n_history=n_history))
            actions.append(paths[k][t + 1] - paths[k][t])
        velocities = predictor.predict_batch(samples, actions)
        for k, action, velocity in zip(active, actions, velocities):
            x = _next_positions(frames[k][-1], velocity, picked, action, dt)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
                results[k] = RolloutDivergedError(f'rollout diverged at step {start + t}', start + t)
                continue
            frames[k].append(x)
            del frames[k][:-(n_history + 1)]
        t += 1
    return results


def batch_loss(model, batch):
    """Mean squared normalized velocity error over non-picked nodes (tensor)."""
    samples = [b[0] for b in batch]
    actions = [b[1] for b in batch]
    node_f, edge_f, senders, receivers, node_graph, n_graphs, picked = collate(samples, actions, model.dt, model.dtype)
    target = torch.as_tensor(np.concatenate([np.asarray(b[2], dtype=float) for b in batch]), dtype=model.dtype)
    pred = model(node_f, edge_f, senders, receivers, node_graph, n_graphs)
    diff = pred[~picked] - target[~picked] / model.out_std
    return (diff ** 2).mean()


def loss_and_grad(model, batch, batch_index=0):
    """
    Loss and exact gradient for one batch.

    Parameters
    ----------
    model : DynamicsModel
    batch : list
        (GraphSample, action, target velocities) triples.
    batch_index : int
        Reported in TrainingError.

    Returns
    -------
    loss : float
    grads : dict
        Parameter name to gradient array, same shapes as the parameters.
    """
    if len(batch) == 0:
        raise TrainingError('empty batch', batch_index)
    model.zero_grad(set_to_none=False)
    loss = batch_loss(model, batch)
    if not torch.isfinite(loss):
        raise TrainingError(f'non-finite loss in batch {batch_index}', batch_index)
    loss.backward()
    # the last block's global update never reaches the decoder, so it has no grad
    grads = {
        name: p.grad.detach().cpu().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape))
        for name, p in model.named_parameters()
    }
    return float(loss.detach()), grads


def set_normalization(model, node_mean, node_std, edge_mean, edge_std, out_std, floor=1e-8):
    """Install frozen normalization statistics; tiny stds are replaced by 1."""
    def std(v):
        v = np.asarray(v, dtype=float)
        return np.where(v > floor, v, 1.0)

    with torch.no_grad():
        model.node_mean.copy_(torch.as_tensor(np.asarray(node_mean, dtype=float)))
        model.node_std.copy_(torch.as_tensor(std(node_std)))
        model.edge_mean.copy_(torch.as_tensor(np.asarray(edge_mean, dtype=float)))
        model.edge_std.copy_(torch.as_tensor(std(edge_std)))
        model.out_std.copy_(torch.as_tensor(std(out_std)))


def build_model(model_cfg, n_history=5, dt=0.01, seed=0):
    """DynamicsModel from the MODEL config section, weights seeded."""
    torch.manual_seed(int(seed))
    return DynamicsModel(
        hidden=model_cfg.hidden,
        global_size=model_cfg.global_size,
        n_blocks=model_cfg.n_blocks,
        mlp_layers=model_cfg.mlp_layers,
        n_history=n_history,
        dt=dt,
        env_features=model_cfg.env_features,
    )


def check_compatible(model, cfg):
    """Raise ModelError when a loaded model does not fit the run configuration."""
    expected = node_feature_width(cfg.GRAPH.n_history)
    if model.node_in != expected:
        raise ModelError(f'checkpoint has {model.node_in} node features, config needs {expected}')
    if abs(model.dt - cfg.SIM.dt) > 1e-12:
        raise ModelError(f'checkpoint dt {model.dt} differs from SIM.dt {cfg.SIM.dt}')


def save_checkpoint(path, model, optimizer=None, epoch=0, loss_history=None, extra=None):
    """
    Write weights, normalization statistics, config echo and optional Adam
    state to one .npz container.
    """
    arrays = {
        'format_version': np.array(CHECKPOINT_VERSION),
        'model_config': np.array(json.dumps(model.config(), sort_keys=True)),
        'extra': np.array(json.dumps(extra or {}, sort_keys=True)),
        'epoch': np.array(int(epoch)),
        'loss_history': np.asarray(loss_history if loss_history is not None else [], dtype=float),
    }
    for name, tensor in model.state_dict().items():
        arrays[f'state/{name}'] = tensor.detach().cpu().numpy()
    if optimizer is not None:
        for idx, state in optimizer.state_dict()['state'].items():
            for key, value in state.items():
                arrays[f'adam/{idx}/{key}'] = torch.as_tensor(value).detach().cpu().numpy()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path, optimizer_factory=None):
    """
    Read a checkpoint.

    Returns
    -------
    model : DynamicsModel
    info : dict
        epoch, loss_history, extra and, if optimizer_factory is given, the
        restored optimizer under 'optimizer'.
    """
    if not os.path.isfile(path):
        raise ModelError(f'checkpoint not found: {path}')
    with np.load(path, allow_pickle=False) as data:
        version = int(data['format_version'])
        if version != CHECKPOINT_VERSION:
            raise ModelError(f'checkpoint format {version} not supported (expected {CHECKPOINT_VERSION})')
        config = json.loads(str(data['model_config']))
        model = DynamicsModel(**config)
        state = {k[len('state/'):]: torch.from_numpy(data[k].copy()) for k in data.files if k.startswith('state/')}
        model = model.to(state['node_mean'].dtype)
        try:
            model.load_state_dict(state)
        except RuntimeError as e:
            raise ModelError(f'checkpoint weights do not match the model layout: {e}') from e
        info = {
            'epoch': int(data['epoch']),
            'loss_history': data['loss_history'].tolist(),
            'extra': json.loads(str(data['extra'])),
        }
        if optimizer_factory is not None:
            optimizer = optimizer_factory(model.parameters())
            opt_state = optimizer.state_dict()
            restored = {}
            for k in data.files:
                if not k.startswith('adam/'):
                    continue
                _, idx, key = k.split('/')
                restored.setdefault(int(idx), {})[key] = torch.from_numpy(data[k].copy())
            opt_state['state'] = restored
            optimizer.load_state_dict(opt_state)
            info['optimizer'] = optimizer
    return model, info
