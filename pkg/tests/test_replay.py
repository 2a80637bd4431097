import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from scipy import stats

from branchgrid.replay import (ReplayBuffer, ReplayConfig, SumTree, Transition,
                               Underfilled)


def tr(tag):
    return Transition(state=tag, actions=np.array([0]), reward=0.0,
                      next_state=tag, terminal=False)


def tree_consistent(tree: SumTree) -> bool:
    for i in range(1, tree.capacity):
        left, right = 2 * i, 2 * i + 1
        if abs(tree.sums[i] - (tree.sums[left] + tree.sums[right])) > 1e-9:
            return False
        if tree.maxs[i] != max(tree.maxs[left], tree.maxs[right]):
            return False
        if tree.mins[i] != min(tree.mins[left], tree.mins[right]):
            return False
    return True


def test_push_empty_buffer():
    buf = ReplayBuffer(ReplayConfig(capacity=8))
    buf.push(tr("a"))
    assert len(buf) == 1
    assert buf.tree.get(0) == 1.0


def test_fifo_overwrite():
    buf = ReplayBuffer(ReplayConfig(capacity=4))
    for i in range(5):
        buf.push(tr(i))
    assert len(buf) == 4
    stored = {t.state for t in buf._data}
    assert stored == {1, 2, 3, 4}  # oldest (0) overwritten


def test_push_uses_current_max_priority():
    buf = ReplayBuffer(ReplayConfig(capacity=8, alpha=0.6, eps_priority=0.01))
    buf.push(tr("a"))
    # set leaf 0 priority to exactly 9.0 via the update rule
    err = 9.0 ** (1.0 / 0.6) - 0.01
    buf.update_priorities(np.array([0]), np.array([err]))
    assert buf.tree.get(0) == pytest.approx(9.0, rel=1e-12)
    buf.push(tr("b"))
    assert buf.tree.get(1) == pytest.approx(9.0, rel=1e-12)


def test_zero_td_error_never_starves():
    buf = ReplayBuffer(ReplayConfig(capacity=8, alpha=0.6, eps_priority=0.01))
    buf.push(tr("a"))
    buf.update_priorities(np.array([0]), np.array([0.0]))
    assert buf.tree.get(0) == pytest.approx(0.01 ** 0.6)
    assert buf.tree.get(0) > 0.0


def test_priority_arithmetic():
    buf = ReplayBuffer(ReplayConfig(capacity=8, alpha=0.6, eps_priority=0.01))
    buf.push(tr("a"))
    buf.update_priorities(np.array([0]), np.array([1.99]))
    assert buf.tree.get(0) == pytest.approx(2.0 ** 0.6, rel=1e-12)


def test_root_equals_leaf_sum():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(ReplayConfig(capacity=16))
    for i in range(16):
        buf.push(tr(i))
    buf.update_priorities(np.arange(16), rng.uniform(0.0, 5.0, size=16))
    leaf_sum = sum(buf.tree.get(i) for i in range(16))
    assert buf.tree.total == pytest.approx(leaf_sum, abs=1e-9)


def test_uniform_priorities_give_unit_weights():
    buf = ReplayBuffer(ReplayConfig(capacity=8))
    for i in range(6):
        buf.push(tr(i))
    _, weights, _ = buf.sample(4, beta=0.7, rng=np.random.default_rng(1))
    np.testing.assert_allclose(weights, 1.0)


def test_beta_zero_unit_weights_regardless_of_priorities():
    buf = ReplayBuffer(ReplayConfig(capacity=8))
    for i in range(6):
        buf.push(tr(i))
    buf.update_priorities(np.arange(6), np.linspace(0.0, 3.0, 6))
    _, weights, _ = buf.sample(4, beta=0.0, rng=np.random.default_rng(2))
    np.testing.assert_allclose(weights, 1.0)


def test_weights_formula():
    buf = ReplayBuffer(ReplayConfig(capacity=8, alpha=1.0, eps_priority=0.01))
    for i in range(4):
        buf.push(tr(i))
    buf.update_priorities(np.arange(4), np.array([0.99, 1.99, 0.49, 0.24]))
    batch, weights, leaves = buf.sample(4, beta=0.5, rng=np.random.default_rng(3))
    total = buf.tree.total
    probs = np.array([buf.tree.get(int(l)) for l in leaves]) / total
    expected = (4 * probs) ** -0.5
    expected /= (4 * buf.tree.min_leaf() / total) ** -0.5
    np.testing.assert_allclose(weights, expected, rtol=1e-12)


def test_underfilled():
    buf = ReplayBuffer(ReplayConfig(capacity=8))
    buf.push(tr("a"))
    with pytest.raises(Underfilled):
        buf.sample(2, beta=0.4, rng=np.random.default_rng(0))


def test_proportional_sampling_two_leaves():
    buf = ReplayBuffer(ReplayConfig(capacity=2, alpha=1.0, eps_priority=0.01))
    buf.push(tr("a"))
    buf.push(tr("b"))
    buf.update_priorities(np.array([0, 1]), np.array([0.99, 2.99]))  # p = 1, 3
    rng = np.random.default_rng(4)
    hits = 0
    draws = 100_000
    for _ in range(draws // 2):
        _, _, leaves = buf.sample(2, beta=0.0, rng=rng)
        hits += int(np.sum(leaves == 1))
    freq = hits / draws
    assert abs(freq - 0.75) <= 0.02


def test_sampling_distribution_chisquare():
    buf = ReplayBuffer(ReplayConfig(capacity=8, alpha=0.6, eps_priority=0.01))
    for i in range(8):
        buf.push(tr(i))
    errs = np.array([0.1, 0.5, 1.0, 2.0, 0.05, 3.0, 0.7, 1.5])
    buf.update_priorities(np.arange(8), errs)
    p = (errs + 0.01) ** 0.6
    expected_freq = p / p.sum()
    rng = np.random.default_rng(5)
    counts = np.zeros(8)
    draws = 100_000
    for _ in range(draws // 4):
        _, _, leaves = buf.sample(4, beta=0.4, rng=rng)
        for l in leaves:
            counts[int(l)] += 1
    assert stats.chisquare(counts, expected_freq * draws).pvalue > 0.01


def test_alpha_zero_uniform():
    buf = ReplayBuffer(ReplayConfig(capacity=4, alpha=0.0, eps_priority=0.01))
    for i in range(4):
        buf.push(tr(i))
    buf.update_priorities(np.arange(4), np.array([0.0, 10.0, 100.0, 1e6]))
    assert all(buf.tree.get(i) == 1.0 for i in range(4))


def test_bad_update_index():
    buf = ReplayBuffer(ReplayConfig(capacity=4))
    buf.push(tr("a"))
    with pytest.raises(IndexError):
        buf.update_priorities(np.array([3]), np.array([1.0]))


@given(st.lists(st.tuples(st.sampled_from(["push", "sample", "update"]),
                          st.integers(0, 2 ** 31 - 1)), min_size=1, max_size=60))
@settings(max_examples=40, deadline=None)
def test_sum_tree_invariant_under_fuzzing(ops):
    buf = ReplayBuffer(ReplayConfig(capacity=8))
    counter = 0
    for op, seed in ops:
        rng = np.random.default_rng(seed)
        if op == "push" or len(buf) == 0:
            buf.push(tr(counter))
            counter += 1
        elif op == "sample":
            k = min(len(buf), int(rng.integers(1, 5)))
            buf.sample(k, beta=float(rng.uniform(0, 1)), rng=rng)
        else:
            k = int(rng.integers(1, len(buf) + 1))
            leaves = rng.integers(0, len(buf), size=k)
            buf.update_priorities(leaves, rng.uniform(0, 10, size=k))
        assert tree_consistent(buf.tree)


def test_capacity_must_be_power_of_two_internally():
    with pytest.raises(ValueError):
        SumTree(3)
    buf = ReplayBuffer(ReplayConfig(capacity=5))  # rounded up internally
    for i in range(5):
        buf.push(tr(i))
    assert len(buf) == 5
