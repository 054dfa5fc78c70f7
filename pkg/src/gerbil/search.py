"""Gradient ascent in the learned latent space and decoding of candidate subsets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch

from .core import ConfigError, GerbilError, MetricsReport, SubsetRecord, canonicalize
from .seqmodel import SubsetVAE, generate_raw, pad_sequences

DIVERGENCE_LIMIT = 1e6


class EmptyRecords(GerbilError):
    pass


class DivergenceAbort(GerbilError):
    pass


class NoValidCandidate(GerbilError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    top_k: int = 25
    eta: float = 0.5
    steps: int = 20
    decode_every: int = 5

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if self.steps < 1 or self.decode_every < 1:
            raise ConfigError("steps and decode_every must be >= 1")

    def decode_steps(self) -> list[int]:
        """Trajectory steps that get decoded: the start, every ``decode_every``-th step, the end."""
        steps = {0, self.steps}
        steps.update(range(self.decode_every, self.steps + 1, self.decode_every))
        return sorted(steps)


def select_seeds(records: Sequence[SubsetRecord], k: int) -> list[tuple[int, ...]]:
    """Top-``k`` distinct canonical subsets by utility; ties prefer shorter, then lexicographically smaller."""
    if not records:
        raise EmptyRecords("no records to seed the search")
    best: dict[tuple[int, ...], float] = {}
    for rec in records:
        key = canonicalize(rec.tokens)
        if key and (key not in best or rec.utility > best[key]):
            best[key] = rec.utility
    ranked = sorted(best, key=lambda s: (-best[s], len(s), s))
    return ranked[:k]


def evaluator_gradient(evaluator: Callable[[torch.Tensor], torch.Tensor], e: torch.Tensor) -> torch.Tensor:
    """d evaluator / d e for a single point or row-wise for a batch of points."""
    e = e.detach().requires_grad_(True)
    with torch.enable_grad():
        out = evaluator(e)
        (grad,) = torch.autograd.grad(out.sum(), e)
    return grad


def ascend(e: torch.Tensor, evaluator: Callable[[torch.Tensor], torch.Tensor], eta: float, steps: int) -> list[torch.Tensor]:
    """Trajectory ``[e_1, ..., e_steps]`` of ``e_{t+1} = e_t + eta * grad(e_t)``.

    ``e`` may be one point or a (batch, dim) stack; the evaluator must act
    row-wise so that the summed output's gradient separates per row.
    """
    if not math.isfinite(eta) or eta <= 0:
        raise ConfigError("eta must be a positive finite number")
    if not torch.all(torch.isfinite(e)):
        raise ValueError("starting point is not finite")
    traj = []
    cur = e.detach()
    for t in range(1, steps + 1):
        cur = cur + eta * evaluator_gradient(evaluator, cur)
        if not torch.all(torch.isfinite(cur)) or float(cur.abs().max()) > DIVERGENCE_LIMIT:
            raise DivergenceAbort(f"latent coordinates left [-{DIVERGENCE_LIMIT:g}, {DIVERGENCE_LIMIT:g}] at step {t}")
        traj.append(cur)
    return traj


@dataclass
class Candidate:
    seed_rank: int
    step: int
    tokens: tuple[int, ...]
    predicted_utility: float
    measured_utility: float | None = None
    report: MetricsReport | None = None

    def to_dict(self) -> dict:
        return {
            "seed_rank": self.seed_rank,
            "step": self.step,
            "tokens": list(self.tokens),
            "predicted_utility": round(self.predicted_utility, 6),
            "measured_utility": None if self.measured_utility is None else round(self.measured_utility, 6),
        }


@dataclass
class SearchResult:
    best: tuple[int, ...]
    report: MetricsReport | None
    utility: float
    candidates: list[Candidate]
    seeds: list[tuple[int, ...]]


def _candidate_key(c: Candidate):
    f1 = c.report.f1 if c.report is not None else 0.0
    return (-c.measured_utility, -f1, len(c.tokens), c.tokens)


@torch.no_grad()
def _encode_means(model: SubsetVAE, seeds: Sequence[Sequence[int]]) -> torch.Tensor:
    enc, _, _ = pad_sequences(seeds)
    m, _ = model.encode_batch(enc)
    return m


def search_and_generate(records: Sequence[SubsetRecord], model: SubsetVAE, scorer, cfg: SearchConfig = SearchConfig()) -> SearchResult:
    """Move the top seeds uphill on the evaluator, decode, and keep the best measured subset.

    ``scorer`` maps a token sequence to its measured utility. When it also
    offers ``report(tokens)`` (as ``SubsetScorer`` does) F1 breaks utility
    ties; smaller subsets win after that. Candidates are decoded at the seed
    itself, every ``decode_every`` steps and at the trajectory end, then
    deduplicated by canonical form in (seed rank, step) order.
    """
    model.eval()
    seeds = select_seeds(records, cfg.top_k)
    start = _encode_means(model, seeds)
    traj = [start] + ascend(start, model.evaluate, cfg.eta, cfg.steps)

    candidates: list[Candidate] = []
    seen: set[tuple[int, ...]] = set()
    steps = cfg.decode_steps()
    points = torch.cat([traj[t] for t in steps])
    with torch.no_grad():
        pred = model.evaluate(points).tolist()
    raw = generate_raw(model, points)
    k = len(seeds)
    for rank in range(k):
        for j, t in enumerate(steps):
            tokens = canonicalize(raw[j * k + rank])
            if not tokens or tokens in seen:
                continue
            seen.add(tokens)
            candidates.append(Candidate(rank, t, tokens, float(pred[j * k + rank])))
    if not candidates:
        raise NoValidCandidate("every decoded candidate was empty")

    report_fn = getattr(scorer, "report", None)
    for c in candidates:
        c.measured_utility = float(scorer(c.tokens))
        c.report = report_fn(c.tokens) if report_fn is not None else None
    best = min(candidates, key=_candidate_key)
    return SearchResult(best.tokens, best.report, best.measured_utility, candidates, seeds)


def write_candidates(candidates: Sequence[Candidate], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for c in candidates:
            fh.write(json.dumps(c.to_dict()) + "\n")
