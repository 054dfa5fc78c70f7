"""Generative feature-subset selection in a learned continuous embedding space."""

from .augment import AugmentConfig, shuffle_augment
from .collector import CollectorConfig, collect, random_collect
from .core import (
    EOS,
    PAD,
    SOS,
    GerbilError,
    MetricsReport,
    SubsetRecord,
    TabularDataset,
    Vocabulary,
    apply_subset,
    canonicalize,
    load_dataset,
    load_records,
    save_records,
)
from .downstream import EvalConfig, SubsetScorer, evaluate_subset, utility
from .pipeline import RunConfig, run_pipeline
from .search import SearchConfig, search_and_generate
from .selector import GerbilSelector
from .seqmodel import ModelConfig, TrainConfig, train
from .synth import SynthConfig

__version__ = "0.1.0"
