import numpy as np
import pytest
from scipy import stats

from branchgrid import nn
from branchgrid.agent import (AgentConfig, BdqNetwork, TargetNetwork,
                              encode_states, loss_and_grads, output_count,
                              q_values, select_action, td_targets)
from branchgrid.nn import Tensor
from branchgrid.replay import Transition


SMALL = AgentConfig(n_bess=2, n_levels=5, history_hours=4.0, gamma=0.9,
                    lstm_hidden=6, trunk_hidden=(16, 12), head_hidden=8,
                    power_scale=100.0)


class StubState:
    def __init__(self, rng, window=4, n_bess=2, T=24):
        self.hist = rng.uniform(0.0, 100.0, size=(window, 3))
        self.soc = rng.uniform(0.1, 0.9, size=n_bess)
        self.price_buy = float(rng.uniform(0.05, 0.5))
        self.t = int(rng.integers(T))
        self.steps_per_day = T


def make_batch(rng, net, k=6, terminal_frac=0.2):
    batch = []
    for _ in range(k):
        batch.append(Transition(
            state=StubState(rng, n_bess=net.cfg.n_bess),
            actions=rng.integers(0, net.cfg.n_levels, size=net.cfg.n_bess),
            reward=float(rng.normal()),
            next_state=StubState(rng, n_bess=net.cfg.n_bess),
            terminal=bool(rng.random() < terminal_frac)))
    return batch


def test_network_output_arity():
    rng = np.random.default_rng(0)
    net = BdqNetwork(SMALL, rng)
    states = [StubState(rng) for _ in range(3)]
    inputs = encode_states(states, SMALL.power_scale)
    value, advantages, qs = net.forward(*inputs)
    assert value.value.shape == (3, 1)
    assert len(qs) == SMALL.n_bess
    assert all(q.value.shape == (3, SMALL.n_levels) for q in qs)
    # N*n + 1 scalars per state in total
    total = sum(q.value.shape[1] for q in qs) + 1
    assert total == SMALL.n_bess * SMALL.n_levels + 1


def test_q_equals_value_when_advantages_constant():
    rng = np.random.default_rng(1)
    net = BdqNetwork(SMALL, rng)
    for d in range(SMALL.n_bess):
        w = net.params[f"branch{d}.o.w"]
        b = net.params[f"branch{d}.o.b"]
        w.value = np.zeros_like(w.value)
        b.value = np.full_like(b.value, 4.2)
    state = StubState(rng)
    inputs = encode_states([state], SMALL.power_scale)
    value, _, qs = net.forward(*inputs)
    for q in qs:
        assert np.max(np.abs(q.value - value.value)) <= 1e-12


def test_dueling_hand_example():
    # V = 1, advantages (2, 0, 1): mean 1, so Q = (2, 0, 1)
    q = nn.dueling(Tensor(np.array([[1.0]])), Tensor(np.array([[2.0, 0.0, 1.0]])))
    np.testing.assert_allclose(q.value, [[2.0, 0.0, 1.0]], atol=1e-15)


def test_branch_shift_invariance():
    rng = np.random.default_rng(2)
    net = BdqNetwork(SMALL, rng)
    state = StubState(rng)
    q_before = q_values(net, state)
    b = net.params["branch0.o.b"]
    b.value = b.value + 5.0
    q_after = q_values(net, state)
    assert np.max(np.abs(q_after - q_before)) <= 1e-12


def test_mean_subtraction_identity():
    rng = np.random.default_rng(3)
    net = BdqNetwork(SMALL, rng)
    for _ in range(50):
        state = StubState(rng)
        inputs = encode_states([state], SMALL.power_scale)
        value, _, qs = net.forward(*inputs)
        for q in qs:
            assert abs(np.mean(q.value - value.value)) <= 1e-12


def test_argmax_invariant_under_positive_affine():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(10, 1))
    a = rng.normal(size=(10, 7))
    q = nn.dueling(Tensor(v), Tensor(a)).value
    q_scaled = nn.dueling(Tensor(3.0 * v + 2.0), Tensor(3.0 * a)).value
    assert np.array_equal(np.argmax(q, axis=1), np.argmax(q_scaled, axis=1))


def test_select_action_greedy_and_ties():
    rng = np.random.default_rng(0)
    q = np.array([[1.0, 3.0, 2.0], [0.0, 0.0, 5.0]])
    assert np.array_equal(select_action(q, 0.0, rng), [1, 2])
    assert np.array_equal(select_action(np.array([[7.0, 7.0, 1.0]]), 0.0, rng), [0])


def test_select_action_eps_zero_deterministic():
    q = np.random.default_rng(1).normal(size=(3, 9))
    picks = {tuple(select_action(q, 0.0, np.random.default_rng(i)))
             for i in range(20)}
    assert len(picks) == 1


def test_select_action_uniform_at_eps_one():
    rng = np.random.default_rng(5)
    q = np.zeros((1, 4))
    counts = np.zeros(4)
    for _ in range(10_000):
        counts[select_action(q, 1.0, rng)[0]] += 1
    assert stats.chisquare(counts).pvalue > 0.01


class FakeNet:
    """q_batch stub with a fixed (N, n) table per state index."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def q_batch(self, states):
        return np.stack([self.table for _ in states])


def _transition(r=1.0, terminal=False):
    state = StubState(np.random.default_rng(0))
    return Transition(state=state, actions=np.array([0, 0]), reward=r,
                      next_state=state, terminal=terminal)


def test_td_targets_gamma_zero():
    batch = [_transition(r) for r in (1.0, -2.0, 0.5)]
    y = td_targets(batch, FakeNet(np.zeros((2, 3))), FakeNet(np.zeros((2, 3))),
                   gamma=0.0)
    np.testing.assert_allclose(y, [1.0, -2.0, 0.5])


def test_td_targets_terminal():
    batch = [_transition(3.0, terminal=True)]
    y = td_targets(batch, FakeNet(np.ones((2, 3))), FakeNet(np.ones((2, 3))),
                   gamma=0.99)
    np.testing.assert_allclose(y, [3.0])


def test_td_targets_hand_example():
    # main argmax levels (2, 0); target values there (3.0, 5.0)
    main = FakeNet([[0.0, 1.0, 9.0], [9.0, 1.0, 0.0]])
    target = FakeNet([[1.0, 2.0, 3.0], [5.0, 6.0, 7.0]])
    y = td_targets([_transition(1.0)], main, target, gamma=0.9)
    assert y[0] == pytest.approx(1.0 + 0.9 * (3.0 + 5.0) / 2.0, abs=1e-12)


def test_td_targets_main_equals_target_gamma_limit():
    # with target == main and zero rewards, gamma=0.9: y = gamma * mean of
    # per-branch maxima
    table = np.array([[1.0, 4.0, 2.0], [0.0, -1.0, 6.0]])
    net = FakeNet(table)
    y = td_targets([_transition(0.0)], net, net, gamma=0.9)
    assert y[0] == pytest.approx(0.9 * (4.0 + 6.0) / 2.0, abs=1e-12)


def test_loss_hand_example_and_consistency():
    rng = np.random.default_rng(6)
    net = BdqNetwork(SMALL, rng)
    target = TargetNetwork(net)
    batch = make_batch(rng, net, k=5)
    weights = rng.uniform(0.4, 1.0, size=5)
    loss, grads, td_err = loss_and_grads(batch, weights, net, target,
                                         SMALL.gamma)

    y = td_targets(batch, net, target, SMALL.gamma)
    q = net.q_batch([tr.state for tr in batch])
    taken = np.stack([q[i, :, tr.actions].diagonal()
                      for i, tr in enumerate(batch)])
    manual = np.mean(weights * np.mean((y[:, None] - taken) ** 2, axis=1))
    assert loss == pytest.approx(manual, rel=1e-12)
    np.testing.assert_allclose(td_err, np.mean(np.abs(y[:, None] - taken), axis=1),
                               atol=1e-12)
    assert set(grads) == set(net.params.names())


def test_loss_zero_when_q_matches_targets():
    # single transition, gamma=0: y = r; force r to equal the taken Q values
    rng = np.random.default_rng(7)
    cfg = AgentConfig(n_bess=1, n_levels=3, history_hours=4.0, gamma=0.0,
                      lstm_hidden=4, trunk_hidden=(8,), head_hidden=4,
                      power_scale=100.0)
    net = BdqNetwork(cfg, rng)
    target = TargetNetwork(net)
    state = StubState(rng, n_bess=1)
    q = q_values(net, state)
    tr = Transition(state=state, actions=np.array([1]), reward=float(q[0, 1]),
                    next_state=state, terminal=True)
    loss, grads, td_err = loss_and_grads([tr], np.ones(1), net, target, 0.0)
    assert loss <= 1e-24
    assert max(np.abs(g).max() for g in grads.values()) <= 1e-10
    assert td_err[0] <= 1e-12


def test_full_loss_gradcheck():
    rng = np.random.default_rng(8)
    net = BdqNetwork(SMALL, rng)
    target = TargetNetwork(net)
    batch = make_batch(rng, net, k=4)
    weights = rng.uniform(0.4, 1.0, size=4)
    y = td_targets(batch, net, target, SMALL.gamma)
    actions = np.stack([tr.actions for tr in batch])

    def f():
        inputs = encode_states([tr.state for tr in batch], SMALL.power_scale)
        _, _, qs = net.forward(*inputs)
        acc = None
        for d, q_d in enumerate(qs):
            sq = nn.square(nn.sub(Tensor(y), nn.gather_cols(q_d, actions[:, d])))
            acc = sq if acc is None else nn.add(acc, sq)
        return nn.mean_all(nn.mul(Tensor(weights),
                                  nn.scale(acc, 1.0 / SMALL.n_bess)))

    assert nn.grad_check(f, net.params, step=1e-5) <= 1e-4


def test_output_count_examples():
    assert output_count(AgentConfig(n_bess=1, n_levels=11)) == (11, 11)
    assert output_count(AgentConfig(n_bess=5, n_levels=11)) == (55, 161051)
    assert output_count(AgentConfig(n_bess=3, n_levels=3)) == (9, 27)


def test_target_network_sync():
    rng = np.random.default_rng(9)
    net = BdqNetwork(SMALL, rng)
    target = TargetNetwork(net)
    w = net.params["trunk0.w"]
    w.value = w.value + 1.0
    assert not np.array_equal(target.network.params["trunk0.w"].value, w.value)
    target.sync(net, step=7)
    assert np.array_equal(target.network.params["trunk0.w"].value, w.value)
    assert target.last_sync == 7


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(n_bess=0)
    with pytest.raises(ValueError):
        AgentConfig(n_bess=1, n_levels=1)
    with pytest.raises(ValueError):
        AgentConfig(n_bess=1, gamma=1.0)
    cfg = AgentConfig(n_bess=1, eps_start=1.0, eps_end=0.1, eps_decay_steps=100)
    assert cfg.epsilon_at(0) == 1.0
    assert cfg.epsilon_at(50) == pytest.approx(0.55)
    assert cfg.epsilon_at(10_000) == pytest.approx(0.1)
