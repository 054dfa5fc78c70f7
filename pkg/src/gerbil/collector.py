"""Multi-agent DQN collector of (feature subset, utility) training pairs.

One agent per feature decides select/deselect each epoch; all agents share
the subset-level state and the reward. A random-selection collector is
provided as the control arm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .core import ConfigError, SubsetRecord, TabularDataset

STATE_DIM = 49
UtilityFn = Callable[[Sequence[int]], float]


@dataclass(frozen=True)
class CollectorConfig:
    epochs: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.1
    # None -> half of the epochs
    eps_decay_epochs: int | None = None
    buffer_capacity: int = 4096
    batch_size: int = 32
    gamma: float = 0.9
    target_sync: int = 10
    hidden: int = 64
    lr: float = 1e-3
    updates_per_epoch: int = 1
    lambda_rel: float = 0.1
    lambda_red: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0 <= self.eps_end <= 1 and 0 <= self.eps_start <= 1):
            raise ConfigError("exploration rates must lie in [0, 1]")
        if self.buffer_capacity <= 0 or self.batch_size <= 0:
            raise ConfigError("buffer_capacity and batch_size must be positive")
        if self.target_sync <= 0 or self.hidden <= 0 or self.updates_per_epoch <= 0:
            raise ConfigError("target_sync, hidden and updates_per_epoch must be positive")
        if self.eps_decay_epochs is not None and self.eps_decay_epochs < 0:
            raise ConfigError("eps_decay_epochs must be >= 0")

    def epsilon(self, epoch: int) -> float:
        decay = self.epochs // 2 if self.eps_decay_epochs is None else self.eps_decay_epochs
        if decay <= 0 or epoch >= decay:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * epoch / decay


def _describe(a: np.ndarray, axis: int) -> np.ndarray:
    q25, q50, q75 = np.percentile(a, [25, 50, 75], axis=axis)
    return np.stack([a.mean(axis=axis), a.std(axis=axis), a.min(axis=axis), q25, q50, q75, a.max(axis=axis)])


def state_repr(ds: TabularDataset, tokens: Sequence[int]) -> np.ndarray:
    """Fixed-length summary of the selected columns.

    Each selected column is reduced to (mean, std, min, 25%, 50%, 75%, max)
    over samples, giving a 7 x k table; each of its 7 rows is reduced the same
    way across columns. The 7 x 7 result is flattened row-major (first-level
    statistic outer). Population std; linear-interpolated percentiles.
    """
    if len(tokens) == 0:
        return np.zeros(STATE_DIM)
    cols = ds.features[:, ds.vocab.columns(tokens)]
    first = _describe(cols, axis=0)
    return _describe(first, axis=1).T.ravel()


def _abs_corr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.sqrt((a * a).sum(axis=0))
    nb = np.sqrt((b * b).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (a.T @ b) / np.outer(na, nb)
    return np.nan_to_num(np.abs(c), nan=0.0, posinf=0.0)


class SubsetStats:
    """Precomputed |Pearson| correlations for relevance and redundancy terms."""

    def __init__(self, ds: TabularDataset):
        self.label_corr = _abs_corr(ds.features, ds.labels[:, None].astype(float))[:, 0]
        self.feature_corr = _abs_corr(ds.features, ds.features)

    def relevance(self, columns: Sequence[int]) -> float:
        if len(columns) == 0:
            return 0.0
        return float(self.label_corr[list(columns)].mean())

    def redundancy(self, columns: Sequence[int]) -> float:
        k = len(columns)
        if k < 2:
            return 0.0
        sub = self.feature_corr[np.ix_(columns, columns)]
        return float((sub.sum() - np.trace(sub)) / (k * (k - 1)))


def reward(u: float, relevance: float, redundancy: float, cfg: CollectorConfig = CollectorConfig(), empty: bool = False) -> float:
    if empty:
        return -1.0
    return u + cfg.lambda_rel * relevance - cfg.lambda_red * redundancy


class ReplayBuffer:
    """Ring buffer of (state, actions, reward, next_state) transitions."""

    def __init__(self, capacity: int, state_dim: int, n_agents: int):
        if capacity <= 0:
            raise ConfigError("buffer capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim), dtype=np.float32)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self._pos = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, state, actions, r, next_state):
        i = self._pos
        self.states[i] = state
        self.actions[i] = actions
        self.rewards[i] = r
        self.next_states[i] = next_state
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.choice(self._size, size=min(batch_size, self._size), replace=False)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]


class AgentPool(nn.Module):
    """Independent one-hidden-layer Q networks, one per feature, evaluated as a batch.

    Output shape is (batch, n_agents, 2); action 0 deselects, 1 selects.
    """

    def __init__(self, n_agents: int, state_dim: int, hidden: int):
        super().__init__()
        b1 = 1.0 / np.sqrt(state_dim)
        b2 = 1.0 / np.sqrt(hidden)
        self.w1 = nn.Parameter(torch.empty(n_agents, state_dim, hidden).uniform_(-b1, b1))
        self.b1 = nn.Parameter(torch.empty(n_agents, hidden).uniform_(-b1, b1))
        self.w2 = nn.Parameter(torch.empty(n_agents, hidden, 2).uniform_(-b2, b2))
        self.b2 = nn.Parameter(torch.empty(n_agents, 2).uniform_(-b2, b2))

    @property
    def n_agents(self) -> int:
        return self.w1.shape[0]

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        h = torch.relu(torch.einsum("bd,adh->bah", states, self.w1) + self.b1)
        return torch.einsum("bah,ahk->bak", h, self.w2) + self.b2


@dataclass(frozen=True)
class Episode:
    epoch: int
    subset_size: int
    utility: float | None
    reward: float
    epsilon: float


class MultiAgentCollector:
    """Runs the per-feature DQN agents against ``utility_fn`` for ``cfg.epochs`` epochs.

    Each epoch the agents act on the state of the previous selection, the
    resulting subset is scored, and one transition is stored. Empty
    selections get reward -1 and produce no record.
    """

    def __init__(self, ds: TabularDataset, cfg: CollectorConfig, utility_fn: UtilityFn):
        self.ds = ds
        self.cfg = cfg
        self.utility_fn = utility_fn
        # agents observe a column-standardised copy so network inputs are unit scale
        X = ds.features
        sd = X.std(axis=0)
        self._obs_ds = TabularDataset((X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0), ds.labels, ds.feature_names)
        self.stats = SubsetStats(ds)
        self.rng = np.random.default_rng(cfg.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.online = AgentPool(ds.n_features, STATE_DIM, cfg.hidden)
            self.target = AgentPool(ds.n_features, STATE_DIM, cfg.hidden)
        self.target.load_state_dict(self.online.state_dict())
        self.optimizer = torch.optim.Adam(self.online.parameters(), lr=cfg.lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, STATE_DIM, ds.n_features)
        self.records: list[SubsetRecord] = []
        self.episodes: list[Episode] = []
        self._selection: tuple[int, ...] = ()

    def observe(self, tokens: Sequence[int]) -> np.ndarray:
        return state_repr(self._obs_ds, tokens).astype(np.float32)

    def greedy_actions(self, tokens: Sequence[int]) -> np.ndarray:
        with torch.no_grad():
            q = self.online(torch.from_numpy(self.observe(tokens))[None])[0]
        # ties go to deselect
        return (q[:, 1] > q[:, 0]).numpy().astype(np.int64)

    def greedy_subset(self, tokens: Sequence[int] = ()) -> tuple[int, ...]:
        acts = self.greedy_actions(tokens)
        return tuple(self.ds.vocab.tokens(np.flatnonzero(acts)))

    def _learn(self):
        s, a, r, s2 = self.buffer.sample(self.cfg.batch_size, self.rng)
        s, s2 = torch.from_numpy(s), torch.from_numpy(s2)
        a, r = torch.from_numpy(a), torch.from_numpy(r)
        with torch.no_grad():
            target = r[:, None] + self.cfg.gamma * self.target(s2).max(dim=2).values
        q = self.online(s).gather(2, a[:, :, None])[:, :, 0]
        loss = torch.mean((q - target) ** 2)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return float(loss.detach())

    def step(self, epoch: int):
        cfg = self.cfg
        eps = cfg.epsilon(epoch)
        state = self.observe(self._selection)
        greedy = self.greedy_actions(self._selection)
        explore = self.rng.random(self.ds.n_features) < eps
        rand_actions = self.rng.integers(0, 2, self.ds.n_features)
        actions = np.where(explore, rand_actions, greedy)
        columns = np.flatnonzero(actions)
        tokens = tuple(self.ds.vocab.tokens(columns))
        if len(tokens) == 0:
            u = None
            r = reward(0.0, 0.0, 0.0, cfg, empty=True)
        else:
            u = float(self.utility_fn(tokens))
            r = reward(u, self.stats.relevance(columns), self.stats.redundancy(columns), cfg)
            self.records.append(SubsetRecord(tokens, u))
        self.buffer.add(state, actions, r, self.observe(tokens))
        if len(self.buffer) >= cfg.batch_size:
            for _ in range(cfg.updates_per_epoch):
                self._learn()
        if (epoch + 1) % cfg.target_sync == 0:
            self.target.load_state_dict(self.online.state_dict())
        self._selection = tokens
        self.episodes.append(Episode(epoch, len(tokens), u, r, eps))

    def run(self) -> list[SubsetRecord]:
        start = len(self.episodes)
        for epoch in range(start, start + self.cfg.epochs):
            self.step(epoch)
        return list(self.records)


def collect(ds: TabularDataset, cfg: CollectorConfig, utility_fn: UtilityFn) -> list[SubsetRecord]:
    return MultiAgentCollector(ds, cfg, utility_fn).run()


def random_collect(ds: TabularDataset, epochs: int, seed: int, utility_fn: UtilityFn) -> list[SubsetRecord]:
    """Control collector: subset size uniform in [1, n_features], then members uniform."""
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    rng = np.random.default_rng(seed)
    n = ds.n_features
    records = []
    for _ in range(epochs):
        k = int(rng.integers(1, n + 1))
        cols = np.sort(rng.choice(n, size=k, replace=False))
        tokens = tuple(ds.vocab.tokens(cols))
        records.append(SubsetRecord(tokens, float(utility_fn(tokens))))
    return records


def write_episode_log(episodes: Sequence[Episode], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "subset_size", "utility", "reward", "epsilon"])
        for e in episodes:
            w.writerow([e.epoch, e.subset_size, "" if e.utility is None else f"{e.utility:.6f}", f"{e.reward:.6f}", f"{e.epsilon:.6f}"])
