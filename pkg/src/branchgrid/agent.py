"""Branching dueling Q-network: three LSTM encoders over the exogenous
history, a shared dense trunk, one state-value head, and one advantage branch
per battery. Branch Q-values use the mean-centered dueling combination, TD
targets use the double-Q decoupling (argmax from the main network, value from
the target copy), and the loss is the branch-averaged squared TD error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParamStore, Tensor


@dataclass(frozen=True)
class AgentConfig:
    n_bess: int
    n_levels: int = 11
    history_hours: float = 24.0
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    lstm_hidden: int = 32
    trunk_hidden: tuple[int, ...] = (128, 64)
    head_hidden: int = 32
    power_scale: float = 1000.0  # kW scale for history channels

    def __post_init__(self):
        if self.n_bess < 1:
            raise ValueError("n_bess must be at least 1")
        if self.n_levels < 2:
            raise ValueError("n_levels must be at least 2")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        for e in (self.eps_start, self.eps_end):
            if not 0.0 <= e <= 1.0:
                raise ValueError("epsilon schedule must stay in [0, 1]")
        if self.eps_decay_steps < 1:
            raise ValueError("eps_decay_steps must be positive")

    @property
    def n_scalars(self) -> int:
        # SoC per battery, current buy price, cyclic time encoding
        return self.n_bess + 3

    def epsilon_at(self, env_step: int) -> float:
        frac = min(1.0, env_step / self.eps_decay_steps)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


def output_count(cfg: AgentConfig) -> tuple[int, int]:
    """(branching outputs N*n, flat-combinatorial outputs n**N)."""
    return cfg.n_bess * cfg.n_levels, cfg.n_levels ** cfg.n_bess


def encode_states(states, power_scale: float):
    """Stack env states into network inputs.

    Returns (seq_solar, seq_wind, seq_load) each (B, W, 1) with kW channels
    divided by power_scale, and scalars (B, N+3) = SoC vector, buy price,
    sin/cos of the day phase.
    """
    hist = np.stack([s.hist for s in states]) / power_scale   # (B, W, 3)
    soc = np.stack([s.soc for s in states])
    phase = np.array([2.0 * np.pi * s.t / s.steps_per_day for s in states])
    scalars = np.concatenate([
        soc,
        np.array([[s.price_buy] for s in states]),
        np.sin(phase)[:, None],
        np.cos(phase)[:, None],
    ], axis=1)
    return (hist[:, :, 0:1], hist[:, :, 1:2], hist[:, :, 2:3], scalars)


class BdqNetwork:
    """Parameter container plus forward pass producing per-branch Q rows."""

    CHANNELS = ("solar", "wind", "load")

    def __init__(self, cfg: AgentConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params = ParamStore()
        H = cfg.lstm_hidden
        for ch in self.CHANNELS:
            self.params.add(f"{ch}.wx", nn.xavier_uniform(rng, (1, 4 * H)))
            self.params.add(f"{ch}.wh", nn.xavier_uniform(rng, (H, 4 * H)))
            self.params.add(f"{ch}.b", nn.lstm_bias(H))
        width = 3 * H + cfg.n_scalars
        for k, out in enumerate(cfg.trunk_hidden):
            self.params.add(f"trunk{k}.w", nn.xavier_uniform(rng, (width, out)))
            self.params.add(f"trunk{k}.b", np.zeros(out))
            width = out
        self.params.add("value.h.w", nn.xavier_uniform(rng, (width, cfg.head_hidden)))
        self.params.add("value.h.b", np.zeros(cfg.head_hidden))
        self.params.add("value.o.w", nn.xavier_uniform(rng, (cfg.head_hidden, 1)))
        self.params.add("value.o.b", np.zeros(1))
        for d in range(cfg.n_bess):
            self.params.add(f"branch{d}.h.w",
                            nn.xavier_uniform(rng, (width, cfg.head_hidden)))
            self.params.add(f"branch{d}.h.b", np.zeros(cfg.head_hidden))
            self.params.add(f"branch{d}.o.w",
                            nn.xavier_uniform(rng, (cfg.head_hidden, cfg.n_levels)))
            self.params.add(f"branch{d}.o.b", np.zeros(cfg.n_levels))

    def forward(self, seq_solar, seq_wind, seq_load, scalars):
        """Tape forward; returns (value Tensor (B,1), [advantage Tensors],
        [Q Tensors (B,n)])."""
        p = self.params
        feats = []
        for ch, seq in zip(self.CHANNELS, (seq_solar, seq_wind, seq_load)):
            feats.append(nn.lstm(Tensor(seq), p[f"{ch}.wx"], p[f"{ch}.wh"],
                                 p[f"{ch}.b"]))
        feats.append(Tensor(scalars))
        z = nn.concat(feats, axis=1)
        for k in range(len(self.cfg.trunk_hidden)):
            z = nn.dense(z, p[f"trunk{k}.w"], p[f"trunk{k}.b"], "relu")
        vh = nn.dense(z, p["value.h.w"], p["value.h.b"], "relu")
        value = nn.dense(vh, p["value.o.w"], p["value.o.b"], "identity")
        advantages = []
        qs = []
        for d in range(self.cfg.n_bess):
            ah = nn.dense(z, p[f"branch{d}.h.w"], p[f"branch{d}.h.b"], "relu")
            a = nn.dense(ah, p[f"branch{d}.o.w"], p[f"branch{d}.o.b"], "identity")
            advantages.append(a)
            qs.append(nn.dueling(value, a))
        return value, advantages, qs

    def q_batch(self, states) -> np.ndarray:
        """(B, N, n) Q-values for a list of env states."""
        inputs = encode_states(states, self.cfg.power_scale)
        _, _, qs = self.forward(*inputs)
        return np.stack([q.value for q in qs], axis=1)

    def clone(self) -> "BdqNetwork":
        other = object.__new__(BdqNetwork)
        other.cfg = self.cfg
        other.params = self.params.clone()
        return other


class TargetNetwork:
    """Frozen periodic snapshot of the main network."""

    def __init__(self, main: BdqNetwork):
        self.network = main.clone()
        self.last_sync = 0

    def sync(self, main: BdqNetwork, step: int = 0) -> None:
        self.network.params.load(main.params.values())
        self.last_sync = step

    def q_batch(self, states) -> np.ndarray:
        return self.network.q_batch(states)


def q_values(network: BdqNetwork, state) -> np.ndarray:
    """(N, n) Q-matrix for a single state."""
    return network.q_batch([state])[0]


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Independent epsilon-greedy per branch; ties resolve to the lowest index."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0, 1]")
    n_branch, n_levels = q.shape
    out = np.empty(n_branch, dtype=np.int64)
    for d in range(n_branch):
        if rng.random() < eps:
            out[d] = rng.integers(n_levels)
        else:
            out[d] = int(np.argmax(q[d]))
    return out


def td_targets(batch, main: BdqNetwork, target: TargetNetwork,
               gamma: float) -> np.ndarray:
    """y = r + gamma * mean_d Q_target_d(s', argmax_b Q_main_d(s', b));
    terminal transitions collapse to y = r."""
    if not batch:
        raise ValueError("empty batch")
    rewards = np.array([tr.reward for tr in batch])
    terminal = np.array([tr.terminal for tr in batch])
    if gamma == 0.0 or terminal.all():
        boot = np.zeros(len(batch))
    else:
        next_states = [tr.next_state for tr in batch]
        q_main = main.q_batch(next_states)            # (B, N, n)
        best = np.argmax(q_main, axis=2)              # (B, N)
        q_tgt = target.q_batch(next_states)
        b_idx = np.arange(len(batch))[:, None]
        d_idx = np.arange(q_tgt.shape[1])[None, :]
        boot = q_tgt[b_idx, d_idx, best].mean(axis=1)
    return rewards + gamma * boot * (~terminal)


def loss_and_grads(batch, weights: np.ndarray, main: BdqNetwork,
                   target: TargetNetwork, gamma: float):
    """Weighted branch-averaged squared TD error over a minibatch.

    Returns (loss value, gradient dict, per-transition absolute TD errors for
    priority updates).
    """
    if len(weights) != len(batch):
        raise ValueError("weights length must match batch length")
    y = td_targets(batch, main, target, gamma)
    states = [tr.state for tr in batch]
    actions = np.stack([tr.actions for tr in batch])  # (B, N)

    inputs = encode_states(states, main.cfg.power_scale)
    _, _, qs = main.forward(*inputs)
    y_t = Tensor(y)
    acc = None
    taken_values = []
    for d, q_d in enumerate(qs):
        taken = nn.gather_cols(q_d, actions[:, d])
        taken_values.append(taken.value.copy())
        err = nn.sub(y_t, taken)
        sq = nn.square(err)
        acc = sq if acc is None else nn.add(acc, sq)
    per_transition = nn.scale(acc, 1.0 / main.cfg.n_bess)
    weighted = nn.mul(Tensor(np.asarray(weights, dtype=np.float64)), per_transition)
    loss = nn.mean_all(weighted)

    main.params.zero_grads()
    nn.backward(loss)
    grads = {name: (main.params[name].grad if main.params[name].grad is not None
                    else np.zeros_like(main.params[name].value))
             for name in main.params.names()}
    grads = {k: v.copy() for k, v in grads.items()}
    td_err = np.mean(np.abs(y[:, None] - np.stack(taken_values, axis=1)), axis=1)
    return float(loss.value), grads, td_err
