import math

import numpy as np
import pytest

from gerbil.collector import (
    STATE_DIM,
    AgentPool,
    CollectorConfig,
    MultiAgentCollector,
    ReplayBuffer,
    SubsetStats,
    collect,
    random_collect,
    reward,
    state_repr,
    write_episode_log,
)
from gerbil.core import TabularDataset, is_canonical


def _oracle_state(X):
    """Descriptives of descriptives, recomputed column by column."""

    def stats(v):
        v = np.asarray(v, dtype=float)
        s = np.sort(v)

        def pct(q):
            pos = q * (len(s) - 1)
            lo = math.floor(pos)
            hi = min(lo + 1, len(s) - 1)
            return s[lo] + (pos - lo) * (s[hi] - s[lo])

        mean = sum(v) / len(v)
        std = math.sqrt(sum((x - mean) ** 2 for x in v) / len(v))
        return [mean, std, s[0], pct(0.25), pct(0.5), pct(0.75), s[-1]]

    first = [stats(X[:, j]) for j in range(X.shape[1])]
    out = []
    for i in range(7):
        out.extend(stats([col[i] for col in first]))
    return np.array(out)


def test_state_of_empty_subset_is_zero(tiny):
    s = state_repr(tiny[0], ())
    assert s.shape == (STATE_DIM,) and not s.any()


def test_state_matches_oracle(tiny):
    ds, _ = tiny
    tokens = (4, 7, 11)
    expected = _oracle_state(ds.features[:, [1, 4, 8]])
    np.testing.assert_allclose(state_repr(ds, tokens), expected, rtol=1e-12, atol=1e-12)


def test_state_of_identical_constant_columns():
    ds = TabularDataset(np.full((6, 3), 2.5), np.array([0, 1] * 3))
    s = state_repr(ds, (3, 4, 5)).reshape(7, 7)
    # row i summarises first-level statistic i across columns; index 1 is std
    assert np.all(s[1] == 0)
    assert np.all(s[:, 1] == 0)
    np.testing.assert_array_equal(s[0], [2.5, 0, 2.5, 2.5, 2.5, 2.5, 2.5])


def test_reward_examples():
    cfg = CollectorConfig(lambda_rel=0.1, lambda_red=0.1)
    assert reward(0.8, 0.5, 0.3, cfg) == pytest.approx(0.82, abs=1e-12)
    assert reward(0.7, 0.4, 0.9, CollectorConfig(lambda_rel=0, lambda_red=0)) == 0.7
    assert reward(0.0, 0.0, 0.0, cfg, empty=True) == -1.0


def test_subset_stats():
    rng = np.random.default_rng(0)
    y = np.array([0, 1] * 10)
    X = rng.standard_normal((20, 3))
    X[:, 1] = X[:, 0] * -2
    st = SubsetStats(TabularDataset(X, y))
    assert st.redundancy([0, 1]) == pytest.approx(1.0)
    assert st.redundancy([2]) == 0.0
    expected = abs(np.corrcoef(X[:, 2], y)[0, 1])
    assert st.relevance([2]) == pytest.approx(expected)


def test_epsilon_schedule():
    cfg = CollectorConfig(epochs=100)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(25) == pytest.approx(0.55)
    assert cfg.epsilon(50) == 0.1
    assert cfg.epsilon(99) == 0.1


def test_replay_buffer_wraps():
    buf = ReplayBuffer(3, 2, 1)
    for i in range(5):
        buf.add([i, i], [i % 2], float(i), [i, i])
    assert len(buf) == 3
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]
    s, a, r, s2 = buf.sample(10, np.random.default_rng(0))
    assert len(r) == 3 and len(set(r.tolist())) == 3


def test_agent_pool_agents_are_independent():
    pool = AgentPool(4, STATE_DIM, 8)
    x = torch_randn(3, STATE_DIM)
    out = pool(x)
    assert out.shape == (3, 4, 2)
    with_grad = pool(x)[:, 2].sum()
    with_grad.backward()
    assert pool.w1.grad[2].abs().sum() > 0
    assert pool.w1.grad[[0, 1, 3]].abs().sum() == 0


def torch_randn(*shape):
    import torch

    return torch.randn(*shape, generator=torch.Generator().manual_seed(0))


def _const_utility(tokens):
    return 0.5


def test_collect_counts_and_records(tiny):
    ds, _ = tiny
    assert collect(ds, CollectorConfig(epochs=0), _const_utility) == []
    agent = MultiAgentCollector(ds, CollectorConfig(epochs=60, seed=1), _const_utility)
    recs = agent.run()
    empties = sum(e.utility is None for e in agent.episodes)
    assert len(agent.episodes) == 60
    assert len(recs) == 60 - empties
    assert all(is_canonical(r.tokens) and 0 <= r.utility <= 1 for r in recs)


def test_collect_is_deterministic(tiny):
    ds, _ = tiny
    cfg = CollectorConfig(epochs=40, seed=3)
    u = lambda t: len(t) / 10
    assert collect(ds, cfg, u) == collect(ds, cfg, u)


def test_agents_learn_two_feature_bandit():
    rng = np.random.default_rng(0)
    ds = TabularDataset(rng.standard_normal((20, 2)), np.array([0, 1] * 10))
    cfg = CollectorConfig(epochs=300, lambda_rel=0, lambda_red=0, updates_per_epoch=4, target_sync=5, seed=0)
    agent = MultiAgentCollector(ds, cfg, lambda t: 1.0 if tuple(t) == (3,) else 0.0)
    agent.run()
    assert agent.greedy_subset((3,)) == (3,)


def test_agents_prefer_best_single_feature():
    rng = np.random.default_rng(1)
    ds = TabularDataset(rng.standard_normal((20, 2)), np.array([0, 1] * 10))
    table = {(3,): 0.9, (4,): 0.1, (3, 4): 0.5}
    cfg = CollectorConfig(epochs=300, lambda_rel=0, lambda_red=0, updates_per_epoch=4, target_sync=5, seed=0)
    agent = MultiAgentCollector(ds, cfg, lambda t: table[tuple(t)])
    agent.run()
    assert agent.greedy_subset((3,)) == (3,)


def test_random_collect_edges():
    ds = TabularDataset(np.zeros((4, 1)), np.array([0, 1, 0, 1]))
    assert random_collect(ds, 0, 0, _const_utility) == []
    recs = random_collect(ds, 5, 0, _const_utility)
    assert all(r.tokens == (3,) for r in recs)


def test_random_collect_marginals(tiny):
    ds, _ = tiny
    n = 10_000
    recs = random_collect(ds, n, 0, _const_utility)
    counts = np.zeros(10)
    for r in recs:
        counts[[t - 3 for t in r.tokens]] += 1
    # size uniform on 1..10 then uniform members: each feature present w.p. E[k]/10 = 0.55
    p = 0.55
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)


def test_episode_log(tmp_path, tiny):
    agent = MultiAgentCollector(tiny[0], CollectorConfig(epochs=5), _const_utility)
    agent.run()
    path = tmp_path / "ep.csv"
    write_episode_log(agent.episodes, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,subset_size,utility,reward,epsilon"
    assert len(lines) == 6
