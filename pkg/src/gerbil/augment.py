"""Order-shuffling augmentation of subset records."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, SubsetRecord


@dataclass(frozen=True)
class AugmentConfig:
    shuffles: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.shuffles < 0:
            raise ConfigError("shuffles must be >= 0")


def _record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def permute_record(record: SubsetRecord, shuffles: int, rng: np.random.Generator) -> list[SubsetRecord]:
    """Up to ``shuffles`` distinct, non-identity reorderings of one record.

    Exactly ``shuffles`` permutations are drawn; repeats and the original
    order are discarded rather than redrawn.
    """
    seen = {record.tokens}
    out = []
    tokens = np.asarray(record.tokens)
    if len(tokens) < 2:
        return out
    for _ in range(shuffles):
        perm = tuple(int(t) for t in rng.permutation(tokens))
        if perm in seen:
            continue
        seen.add(perm)
        out.append(SubsetRecord(perm, record.utility))
    return out


def shuffle_augment(records: Sequence[SubsetRecord], cfg: AugmentConfig = AugmentConfig()) -> list[SubsetRecord]:
    """Each input record followed by its shuffled copies, in input order.

    Every record draws from its own stream seeded by ``(cfg.seed, index)``,
    so the output does not depend on how records are batched.
    """
    out: list[SubsetRecord] = []
    for i, rec in enumerate(records):
        out.append(rec)
        out.extend(permute_record(rec, cfg.shuffles, _record_rng(cfg.seed, i)))
    return out
