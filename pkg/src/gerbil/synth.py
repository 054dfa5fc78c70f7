"""Synthetic high-dimensional, low-sample-size classification data with planted features."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, TabularDataset, save_dataset


@dataclass(frozen=True)
class SynthConfig:
    n_features: int = 200
    n_samples: int = 100
    n_informative: int = 10
    n_copies: int = 3
    noise_sigma: float = 0.1
    flip_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_informative < 1:
            raise ConfigError("n_informative must be >= 1")
        if self.n_informative > self.n_features:
            raise ConfigError("n_informative exceeds n_features")
        if self.n_informative * (1 + self.n_copies) > self.n_features:
            raise ConfigError(
                f"{self.n_informative} informative features with {self.n_copies} copies each "
                f"need {self.n_informative * (1 + self.n_copies)} columns, only {self.n_features} available"
            )
        if self.n_samples < 10:
            raise ConfigError("n_samples must be >= 10")
        if self.n_copies < 0 or self.noise_sigma < 0:
            raise ConfigError("n_copies and noise_sigma must be non-negative")
        if not 0 <= self.flip_rate <= 0.5:
            raise ConfigError("flip_rate must lie in [0, 0.5]")


@dataclass(frozen=True)
class PlantedTruth:
    informative: tuple[int, ...]
    copies: dict[int, tuple[int, ...]]
    weights: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "informative": list(self.informative),
            "copies": {str(k): list(v) for k, v in self.copies.items()},
            "weights": list(self.weights),
        }


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[TabularDataset, PlantedTruth]:
    """Draw a dataset whose labels depend only on ``cfg.n_informative`` columns.

    Labels threshold a sparse linear score at its median, so classes are
    balanced before ``flip_rate`` noise. Each informative column gets
    ``n_copies`` near-duplicates (additive Gaussian noise); everything else
    is independent standard normal. Columns are shuffled so planted indices
    carry no positional hint.
    """
    rng = np.random.default_rng(cfg.seed)
    n, p, k = cfg.n_samples, cfg.n_features, cfg.n_informative
    signal = rng.standard_normal((n, k))
    weights = rng.uniform(1.0, 2.0, k) * rng.choice([-1.0, 1.0], k)
    score = signal @ weights
    labels = (score > np.median(score)).astype(np.int64)
    flips = rng.random(n) < cfg.flip_rate
    labels = np.where(flips, 1 - labels, labels)

    blocks = [signal]
    for _ in range(cfg.n_copies):
        blocks.append(signal + cfg.noise_sigma * rng.standard_normal((n, k)))
    n_noise = p - k * (1 + cfg.n_copies)
    blocks.append(rng.standard_normal((n, n_noise)))
    X = np.hstack(blocks)

    perm = rng.permutation(p)
    X = X[:, perm]
    where = np.empty(p, dtype=np.int64)
    where[perm] = np.arange(p)
    informative = tuple(int(where[i]) for i in range(k))
    copies = {
        informative[i]: tuple(int(where[k * (c + 1) + i]) for c in range(cfg.n_copies))
        for i in range(k)
    }
    ds = TabularDataset(X, labels, tuple(f"f{j}" for j in range(p)))
    return ds, PlantedTruth(tuple(sorted(informative)), copies, tuple(float(w) for w in weights))


def write(ds: TabularDataset, truth: PlantedTruth, out_dir, cfg: SynthConfig | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "dataset.csv"
    side_path = out_dir / "ground_truth.json"
    save_dataset(ds, csv_path)
    sidecar = truth.to_dict()
    if cfg is not None:
        sidecar["config"] = asdict(cfg)
    side_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return csv_path, side_path
