"""Command-line entry point: ``gerbil <stage> [options]``.

Exit codes: 0 success, 1 internal error, 2 bad input or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema

from . import __version__
from .collector import MultiAgentCollector, random_collect, write_episode_log
from .core import (
    ConfigError,
    EmptySubset,
    GerbilError,
    MetricsReport,
    ParseError,
    SchemaError,
    TokenOutOfRange,
    canonicalize,
    load_dataset,
    load_records,
    save_records,
)
from .augment import shuffle_augment
from .downstream import DegenerateLabels, SubsetScorer
from .pipeline import RunConfig, collect_records, compare, run_from_records
from .search import search_and_generate, write_candidates
from .seqmodel import CheckpointError, SequenceTooLong, UnknownToken, load_checkpoint, save_checkpoint, train, write_curve
from . import synth

logger = logging.getLogger("gerbil")

RESULTS_SCHEMA_VERSION = 1
INPUT_ERRORS = (
    ConfigError,
    ParseError,
    SchemaError,
    EmptySubset,
    TokenOutOfRange,
    DegenerateLabels,
    CheckpointError,
    SequenceTooLong,
    UnknownToken,
)

_METRICS_BLOCK = {
    "type": "object",
    "required": ["precision", "recall", "f1", "auc", "per_fold", "subset", "subset_size"],
    "properties": {
        "precision": {"type": "number", "minimum": 0, "maximum": 1},
        "recall": {"type": "number", "minimum": 0, "maximum": 1},
        "f1": {"type": "number", "minimum": 0, "maximum": 1},
        "auc": {"type": "number", "minimum": 0, "maximum": 1},
        "per_fold": {"type": "array", "minItems": 1},
        "subset": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1},
        "subset_size": {"type": "integer", "minimum": 1},
    },
}
RESULTS_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "seed", "dataset", "selected", "ftest", "original", "utility"],
    "properties": {
        "schema_version": {"const": RESULTS_SCHEMA_VERSION},
        "seed": {"type": "integer"},
        "dataset": {
            "type": "object",
            "required": ["n_samples", "n_features"],
        },
        "selected": _METRICS_BLOCK,
        "ftest": _METRICS_BLOCK,
        "original": _METRICS_BLOCK,
        "utility": {"type": "object"},
    },
}


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _metrics_block(report: MetricsReport, tokens) -> dict:
    out = report.to_dict(tokens)
    out["accuracy"] = report.accuracy
    out["auc_undefined"] = report.auc_undefined
    return out


def _resolve_config(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        if path.suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
            # a manifest carries its config snapshot under "config"
            cfg = RunConfig.from_dict(data.get("config", data) if "command" in data else data)
        else:
            cfg = RunConfig.from_file(path)
    else:
        cfg = RunConfig()
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "dataset": getattr(args, "dataset", None),
        "records": getattr(args, "records", None),
        "checkpoint": getattr(args, "checkpoint", None),
        "augment.shuffles": getattr(args, "shuffles", None),
        "search.top_k": getattr(args, "topk", None),
        "search.eta": getattr(args, "eta", None),
        "search.steps": getattr(args, "steps", None),
        "eval.folds": getattr(args, "folds", None),
        "eval.classifier": getattr(args, "classifier", None),
        "train.epochs": getattr(args, "train_epochs", None),
    }
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        overrides["train.epochs" if args.command == "train" else "collector.epochs"] = epochs
    if getattr(args, "random", False):
        overrides["collector_kind"] = "random"
    return cfg.override(**overrides).seeded()


def _require(path_value, what: str) -> Path:
    if not path_value:
        raise ConfigError(f"no {what} given (use the flag or set it in the config file)")
    path = Path(path_value)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, command: str, cfg: RunConfig, timings: dict, outputs: list[str]) -> None:
    _write_json(
        {
            "command": command,
            "version": __version__,
            "argv": sys.argv[1:],
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "timings": timings,
            "outputs": sorted(outputs),
        },
        out / "manifest.json",
    )


def _load_dataset(cfg: RunConfig):
    return load_dataset(_require(cfg.dataset, "dataset"))


def cmd_synth(args, cfg: RunConfig) -> None:
    scfg = cfg.override(
        **{f"synth.{k}": getattr(args, k) for k in ("n_features", "n_samples", "n_informative")}
    ).seeded().synth
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    ds, truth = synth.generate(scfg)
    csv_path, side = synth.write(ds, truth, out, scfg)
    _manifest(out, "synth", cfg, {"synth": round(time.perf_counter() - t0, 3)}, [csv_path.name, side.name])
    print(csv_path)


def cmd_collect(args, cfg: RunConfig) -> None:
    ds = _load_dataset(cfg)
    out = _out_dir(cfg)
    scorer = SubsetScorer(ds, cfg.eval)
    t0 = time.perf_counter()
    outputs = ["records.jsonl"]
    if cfg.collector_kind == "random":
        records = random_collect(ds, cfg.collector.epochs, cfg.collector.seed, scorer)
    else:
        agent = MultiAgentCollector(ds, cfg.collector, scorer)
        records = agent.run()
        write_episode_log(agent.episodes, out / "episodes.csv")
        outputs.append("episodes.csv")
    save_records(records, out / "records.jsonl")
    _manifest(out, "collect", cfg, {"collect": round(time.perf_counter() - t0, 3)}, outputs)
    print(out / "records.jsonl")


def cmd_augment(args, cfg: RunConfig) -> None:
    records = load_records(_require(cfg.records, "records file"))
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    augmented = shuffle_augment(records, cfg.augment)
    save_records(augmented, out / "augmented.jsonl")
    _manifest(out, "augment", cfg, {"augment": round(time.perf_counter() - t0, 3)}, ["augmented.jsonl"])
    print(out / "augmented.jsonl")


def cmd_train(args, cfg: RunConfig) -> None:
    records = load_records(_require(cfg.records, "records file"))
    if args.n_features is not None:
        n_features = args.n_features
    else:
        n_features = _load_dataset(cfg).n_features
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    result = train(records, n_features, cfg.model, cfg.train)
    save_checkpoint(result, out / "checkpoint.pt")
    write_curve(result.curve, out / "training_curve.csv")
    _manifest(out, "train", cfg, {"train": round(time.perf_counter() - t0, 3)}, ["checkpoint.pt", "training_curve.csv"])
    print(out / "checkpoint.pt")


def cmd_search(args, cfg: RunConfig) -> None:
    ds = _load_dataset(cfg)
    records = load_records(_require(cfg.records, "records file"))
    trained = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    if trained.model.n_features != ds.n_features:
        raise CheckpointError(
            f"checkpoint was trained on {trained.model.n_features} features, dataset has {ds.n_features}"
        )
    out = _out_dir(cfg)
    scorer = SubsetScorer(ds, cfg.eval)
    t0 = time.perf_counter()
    result = search_and_generate(records, trained.model, scorer, cfg.search)
    write_candidates(result.candidates, out / "candidates.jsonl")
    best = _metrics_block(result.report, result.best)
    best["utility"] = result.utility
    best["feature_names"] = [ds.feature_names[c] for c in ds.vocab.columns(result.best)]
    _write_json(best, out / "search.json")
    _manifest(out, "search", cfg, {"search": round(time.perf_counter() - t0, 3)}, ["candidates.jsonl", "search.json"])
    print(out / "search.json")


def _parse_subset(args, ds) -> tuple[int, ...]:
    try:
        if args.tokens:
            return tuple(int(v) for v in args.tokens.split(",") if v.strip())
        if args.columns:
            return tuple(ds.vocab.tokens(int(v) for v in args.columns.split(",") if v.strip()))
    except ValueError as exc:
        raise ConfigError(f"bad subset list: {exc}") from None
    return tuple(ds.vocab.tokens(range(ds.n_features)))


def cmd_evaluate(args, cfg: RunConfig) -> None:
    ds = _load_dataset(cfg)
    tokens = canonicalize(_parse_subset(args, ds))
    if not tokens:
        raise EmptySubset("no feature tokens given")
    ds.vocab.columns(tokens)
    out = _out_dir(cfg)
    report = SubsetScorer(ds, cfg.eval).report(tokens)
    _write_json(_metrics_block(report, tokens), out / "metrics.json")
    _manifest(out, "evaluate", cfg, {}, ["metrics.json"])
    print(out / "metrics.json")


def _dataset_for_run(cfg: RunConfig, out: Path):
    if cfg.dataset:
        ds = _load_dataset(cfg)
        return ds, {"source": Path(cfg.dataset).name}
    ds, truth = synth.generate(cfg.synth)
    synth.write(ds, truth, out, cfg.synth)
    return ds, {"source": "synthetic", "planted": list(truth.informative)}


def run_all(cfg: RunConfig, out: Path) -> dict:
    """Full pipeline plus comparison rows; returns the results document and writes all artefacts."""
    timings: dict[str, float] = {}
    ds, ds_info = _dataset_for_run(cfg, out)
    scorer = SubsetScorer(ds, cfg.eval)

    t0 = time.perf_counter()
    records, episodes = collect_records(ds, cfg, scorer)
    timings["collect"] = round(time.perf_counter() - t0, 3)
    if not records:
        raise ConfigError("the collector produced no non-empty subsets; increase collector epochs")
    augmented, trained, result = run_from_records(ds, records, cfg, scorer, timings)
    t0 = time.perf_counter()
    cmp = compare(ds, result.best, scorer)
    timings["evaluate"] = round(time.perf_counter() - t0, 3)

    save_records(records, out / "records.jsonl")
    save_records(augmented, out / "augmented.jsonl")
    if episodes:
        write_episode_log(episodes, out / "episodes.csv")
    save_checkpoint(trained, out / "checkpoint.pt")
    write_curve(trained.curve, out / "training_curve.csv")
    write_candidates(result.candidates, out / "candidates.jsonl")

    full = tuple(ds.vocab.tokens(range(ds.n_features)))
    results = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "seed": cfg.seed,
        "collector": cfg.collector_kind,
        "dataset": {"n_samples": ds.n_samples, "n_features": ds.n_features, **ds_info},
        "selected": _metrics_block(cmp.selected, result.best),
        "selected_feature_names": [ds.feature_names[c] for c in ds.vocab.columns(result.best)],
        "ftest": _metrics_block(cmp.ftest, cmp.ftest_subset),
        "original": _metrics_block(cmp.original, full),
        "utility": {
            "metric": cfg.eval.metric,
            "selected": result.utility,
            "best_record": max(r.utility for r in records),
        },
        "counts": {
            "records": len(records),
            "augmented": len(augmented),
            "candidates": len(result.candidates),
        },
    }
    jsonschema.validate(results, RESULTS_SCHEMA)
    _write_json(results, out / "results.json")
    outputs = [
        "results.json", "records.jsonl", "augmented.jsonl", "checkpoint.pt",
        "training_curve.csv", "candidates.jsonl",
    ]
    if episodes:
        outputs.append("episodes.csv")
    if not cfg.dataset:
        outputs += ["dataset.csv", "ground_truth.json"]
    _manifest(out, "run-all", cfg, timings, outputs)
    return results


def cmd_run_all(args, cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    run_all(cfg, out)
    print(out / "results.json")


def cmd_ablate(args, cfg: RunConfig) -> None:
    from .ablation import run_ablation

    out = _out_dir(cfg)
    t0 = time.perf_counter()
    ds, _ = _dataset_for_run(cfg, out)
    csv_path, png_path = run_ablation(args.kind, ds, cfg, out)
    _manifest(out, f"ablate {args.kind}", cfg, {"ablate": round(time.perf_counter() - t0, 3)}, [csv_path.name, png_path.name])
    print(csv_path)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (or a manifest.json from an earlier run)")
    p.add_argument("--seed", type=int, help="global seed applied to every stage")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gerbil", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset with planted features")
    _add_common(p)
    p.add_argument("--n-features", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--n-informative", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("collect", help="collect scored subsets with the DQN agents")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int, help="collector epochs")
    p.add_argument("--random", action="store_true", help="use the random-selection collector")
    p.add_argument("--folds", type=int)
    p.add_argument("--classifier", choices=("tree_ensemble", "logistic"))
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("augment", help="add shuffled copies of each record")
    _add_common(p)
    p.add_argument("--records")
    p.add_argument("--shuffles", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the sequence model on (augmented) records")
    _add_common(p)
    p.add_argument("--records")
    p.add_argument("--dataset", help="dataset (only its feature count is used)")
    p.add_argument("--n-features", type=int)
    p.add_argument("--epochs", type=int, help="training epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="gradient search and decoding from a trained checkpoint")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--records", help="collected records used to pick seeds")
    p.add_argument("--checkpoint")
    p.add_argument("--topk", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--classifier", choices=("tree_ensemble", "logistic"))
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="cross-validated metrics for one subset")
    _add_common(p)
    p.add_argument("--dataset")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--tokens", help="comma-separated token ids (column + 3)")
    group.add_argument("--columns", help="comma-separated column indices")
    p.add_argument("--folds", type=int)
    p.add_argument("--classifier", choices=("tree_ensemble", "logistic"))
    p.set_defaults(func=cmd_evaluate)

    for name, func, helptext in (
        ("run-all", cmd_run_all, "collect, augment, train, search and evaluate"),
        ("ablate", cmd_ablate, "ablation sweep with plot and CSV"),
    ):
        p = sub.add_parser(name, help=helptext)
        if name == "ablate":
            p.add_argument("kind", choices=("shuffle", "collector", "variational"))
        _add_common(p)
        p.add_argument("--dataset", help="dataset CSV; a synthetic one is generated when omitted")
        p.add_argument("--epochs", type=int, help="collector epochs")
        p.add_argument("--train-epochs", type=int)
        p.add_argument("--shuffles", type=int)
        p.add_argument("--topk", type=int)
        p.add_argument("--eta", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--folds", type=int)
        p.add_argument("--classifier", choices=("tree_ensemble", "logistic"))
        p.add_argument("--random", action="store_true", help="use the random-selection collector")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    stage = args.command
    try:
        cfg = _resolve_config(args)
        args.func(args, cfg)
    except (FileNotFoundError, *INPUT_ERRORS) as exc:
        print(f"gerbil {stage}: error: {exc}", file=sys.stderr)
        return 2
    except GerbilError as exc:
        print(f"gerbil {stage}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"gerbil {stage}: internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
