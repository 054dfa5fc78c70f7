"""End-to-end composition: collect, augment, train, search, evaluate."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .augment import AugmentConfig, shuffle_augment
from .collector import CollectorConfig, Episode, MultiAgentCollector, random_collect
from .core import ConfigError, MetricsReport, SubsetRecord, TabularDataset
from .downstream import EvalConfig, SubsetScorer, baseline_ftest
from .search import SearchConfig, SearchResult, search_and_generate
from .seqmodel import ModelConfig, TrainConfig, TrainResult, train
from .synth import SynthConfig

logger = logging.getLogger(__name__)

COLLECTOR_KINDS = ("rl", "random")
SECTIONS = {
    "synth": SynthConfig,
    "collector": CollectorConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "search": SearchConfig,
    "eval": EvalConfig,
}


def _build(cls, values: dict | None):
    values = dict(values or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    collector_kind: str = "rl"
    dataset: str | None = None
    records: str | None = None
    checkpoint: str | None = None
    out_dir: str = "out"
    synth: SynthConfig = field(default_factory=SynthConfig)
    collector: CollectorConfig = field(default_factory=CollectorConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.collector_kind not in COLLECTOR_KINDS:
            raise ConfigError(f"collector_kind must be one of {COLLECTOR_KINDS}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        kwargs: dict[str, Any] = {}
        for name, section_cls in SECTIONS.items():
            section = data.pop(name, None)
            if section is not None and not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            kwargs[name] = _build(section_cls, section)
        scalars = {f.name for f in dataclasses.fields(cls)} - set(SECTIONS)
        unknown = set(data) - scalars
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs.update(data)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        def plain(x):
            if isinstance(x, tuple):
                return [plain(v) for v in x]
            if isinstance(x, dict):
                return {k: plain(v) for k, v in x.items()}
            return x

        return plain(dataclasses.asdict(self))

    def override(self, **changes) -> "RunConfig":
        """Apply dotted overrides such as ``{"search.top_k": 10, "seed": 3}``; ``None`` values are skipped."""
        data = self.to_dict()
        for key, value in changes.items():
            if value is None:
                continue
            section, _, leaf = key.rpartition(".")
            target = data[section] if section else data
            if leaf not in target:
                raise ConfigError(f"unknown config key {key!r}")
            target[leaf] = value
        return RunConfig.from_dict(data)

    def seeded(self) -> "RunConfig":
        """Copy with every stage seed set to the global seed."""
        return dataclasses.replace(
            self,
            **{
                name: dataclasses.replace(getattr(self, name), seed=self.seed)
                for name in ("synth", "collector", "augment", "train", "eval")
            },
        )


@dataclass
class PipelineResult:
    records: list[SubsetRecord]
    augmented: list[SubsetRecord]
    trained: TrainResult
    search: SearchResult
    scorer: SubsetScorer
    episodes: list[Episode] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


class _Timer:
    def __init__(self, timings: dict, name: str):
        self.timings, self.name = timings, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.name] = round(time.perf_counter() - self.t0, 3)


def collect_records(ds: TabularDataset, cfg: RunConfig, scorer: SubsetScorer) -> tuple[list[SubsetRecord], list[Episode]]:
    if cfg.collector_kind == "random":
        return random_collect(ds, cfg.collector.epochs, cfg.collector.seed, scorer), []
    agent = MultiAgentCollector(ds, cfg.collector, scorer)
    return agent.run(), agent.episodes


def run_from_records(ds: TabularDataset, records: list[SubsetRecord], cfg: RunConfig, scorer: SubsetScorer, timings: dict | None = None):
    """Augment, train and search starting from already-collected records."""
    timings = {} if timings is None else timings
    with _Timer(timings, "augment"):
        augmented = shuffle_augment(records, cfg.augment)
    logger.info("%d records, %d after augmentation", len(records), len(augmented))
    with _Timer(timings, "train"):
        trained = train(augmented, ds.n_features, cfg.model, cfg.train)
    with _Timer(timings, "search"):
        result = search_and_generate(records, trained.model, scorer, cfg.search)
    return augmented, trained, result


def run_pipeline(ds: TabularDataset, cfg: RunConfig, scorer: SubsetScorer | None = None) -> PipelineResult:
    """Collect, augment, train and search on ``ds``.

    ``cfg`` is used as given; call ``cfg.seeded()`` first to push the global
    seed into every stage.
    """
    scorer = scorer or SubsetScorer(ds, cfg.eval)
    timings: dict[str, float] = {}
    with _Timer(timings, "collect"):
        records, episodes = collect_records(ds, cfg, scorer)
    if not records:
        raise ConfigError("the collector produced no non-empty subsets; increase collector epochs")
    augmented, trained, result = run_from_records(ds, records, cfg, scorer, timings)
    return PipelineResult(records, augmented, trained, result, scorer, episodes, timings)


@dataclass
class Comparison:
    selected: MetricsReport
    ftest: MetricsReport
    ftest_subset: tuple[int, ...]
    original: MetricsReport


def compare(ds: TabularDataset, selected: tuple[int, ...], scorer: SubsetScorer) -> Comparison:
    """Selected subset against the same-size F-test pick and the full feature set."""
    ftest = baseline_ftest(ds, len(selected))
    full = tuple(ds.vocab.tokens(range(ds.n_features)))
    return Comparison(scorer.report(selected), scorer.report(ftest), ftest, scorer.report(full))
