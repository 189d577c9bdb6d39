"""Command-line entry point: ingest, build-vocab, train, eval, grad-check, dump-subgraph.

Failures print one JSON line ``{"error": <kind>, "message": <text>}`` on
stderr. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
The log level comes from ``STARGRAPH_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, describe_keys, from_dict, dump_config, parse_kv, preset_config
from .datasets import star_graph, toy_holdout, toy_kg
from .errors import ConfigError, StarGraphError
from .graph import DatasetSplits, Graph, dedup_triples, ingest, load_graph, save_graph, source_checksum
from .vocab import (
    Vocabulary,
    build_vocabulary,
    default_num_anchors,
    load_vocabulary,
    save_vocabulary,
    select_anchors,
)

LOG_ENV = "STARGRAPH_LOG_LEVEL"
REPORT_FORMAT_VERSION = 1
DATA_PRESETS = {"toy": toy_kg, "toy-holdout": toy_holdout, "star": star_graph}

logger = logging.getLogger("stargraph")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"{LOG_ENV}={level!r} is not a log level")
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _set_threads(n: int | None) -> None:
    """Cap numba and BLAS worker pools; 1 gives bit-reproducible runs."""
    if n is None:
        return
    if n < 1:
        raise ConfigError(f"--threads must be >= 1, got {n}")
    import numba
    from threadpoolctl import threadpool_limits

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    threadpool_limits(n)


# ---------------------------------------------------------------------------
# Shared loaders


def _overrides(args) -> dict:
    values = {}
    for item in args.set or []:
        values.update(parse_kv(item, "--set"))
    return values


def _config(args) -> RunConfig:
    preset = getattr(args, "preset", None)
    overrides = _overrides(args)
    if getattr(args, "config", None):
        base = PRESETS.get(preset, {}) if preset else {}
        with open(args.config, encoding="utf-8") as fh:
            values = parse_kv(fh.read(), args.config)
        return preset_config(None, {**base, **values, **overrides})
    return preset_config(preset if preset in PRESETS else None, overrides)


def _data(args) -> tuple[DatasetSplits, str]:
    if getattr(args, "graph", None):
        return load_graph(args.graph), str(args.graph)
    return DATA_PRESETS[args.preset](), f"preset:{args.preset}"


def _vocab_for(args, data: DatasetSplits, config: RunConfig, source: str) -> Vocabulary:
    if getattr(args, "vocab", None):
        return load_vocabulary(args.vocab, data.graph)
    num_anchors = config.num_anchors or default_num_anchors(data.num_entities)
    echo = {"graph": source, "num_anchors": num_anchors, "k": config.k_anchors,
            "m": config.m_neighbors, "max_hops": config.max_hops}
    return build_vocabulary(
        data.graph, select_anchors(data.graph, num_anchors), config.k_anchors,
        config.m_neighbors, config.max_hops, echo,
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    data = ingest(args.train, args.valid, args.test, args.format, args.num_entities, args.num_relations)
    if args.dedup:
        train = dedup_triples(data.train)
        data = DatasetSplits(
            Graph.from_triples(train, data.num_entities, data.num_relations),
            train, data.valid, data.test, data.entity_labels, data.relation_labels,
        )
    source = source_checksum((args.train, args.valid, args.test), args.format)
    echo = {"format": args.format, "train": str(args.train), "valid": args.valid and str(args.valid),
            "test": args.test and str(args.test), "dedup": args.dedup}
    save_graph(args.out, data, source, echo)
    g = data.graph
    print(json.dumps({"entities": g.num_entities, "relations": g.num_relations,
                      "train": len(data.train), "valid": len(data.valid), "test": len(data.test),
                      "out": str(args.out)}))
    return 0


def cmd_build_vocab(args) -> int:
    data, source = _data(args)
    preset = PRESETS.get(args.preset, {}) if args.preset else {}
    num_anchors = args.num_anchors if args.num_anchors is not None else preset.get("num_anchors", 0)
    k = args.k if args.k is not None else preset.get("k_anchors", RunConfig.k_anchors)
    m = args.m if args.m is not None else preset.get("m_neighbors", RunConfig.m_neighbors)
    num_anchors = num_anchors or default_num_anchors(data.num_entities)
    echo = {"graph": source, "num_anchors": num_anchors, "k": k, "m": m, "max_hops": args.max_hops}
    vocab = build_vocabulary(data.graph, select_anchors(data.graph, num_anchors), k, m, args.max_hops, echo)
    save_vocabulary(args.out, vocab)
    if args.dump_text:
        with open(args.dump_text, "w", encoding="utf-8") as fh:
            vocab.dump_text(fh)
    print(json.dumps({"entities": vocab.num_entities, "anchors": vocab.num_anchors, "k": k, "m": m,
                      "out": str(args.out)}))
    return 0


def cmd_train(args) -> int:
    from .trainer import Trainer

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, source = _data(args)
    if args.resume:
        from .trainer import read_checkpoint

        meta, _ = read_checkpoint(args.resume)
        config = from_dict(meta["config"])
        vocab = _vocab_for(args, data, config, source)
        trainer = Trainer.resume(args.resume, data, vocab, out)
    else:
        config = _config(args)
        vocab = _vocab_for(args, data, config, source)
        trainer = Trainer(data, vocab, config, out)
    if not args.vocab:
        save_vocabulary(out / "vocab.sgvc", vocab)
    with open(out / "config.txt", "w", encoding="utf-8") as fh:
        fh.write(f"# stargraph run config, format {REPORT_FORMAT_VERSION}, data {source}\n")
        fh.write(dump_config(trainer.config))
    result = trainer.run()
    summary = {
        "steps": result.steps,
        "final_loss": float(np.mean(result.losses[-100:])) if result.losses else None,
        "best_valid_mrr": None if np.isnan(result.best_valid_mrr) else result.best_valid_mrr,
        "best_step": result.best_step,
        "out": str(out),
    }
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    from .evaluator import KnownTriples, evaluate
    from .trainer import load_model, read_checkpoint

    data, source = _data(args)
    meta, _ = read_checkpoint(args.checkpoint)
    config = from_dict(meta["config"])
    vocab = _vocab_for(args, data, config, source)
    model, config = load_model(args.checkpoint, data, vocab)
    triples = data.split(args.split)
    if args.limit:
        triples = triples[: args.limit]
    known = KnownTriples(data.train, data.valid, data.test)
    report = evaluate(triples, model, known, args.protocol, seed=args.seed)
    text = report.to_json(
        format_version=REPORT_FORMAT_VERSION,
        split=args.split,
        seed=args.seed,
        checkpoint=str(args.checkpoint),
        data=source,
        config=config.to_dict(),
    )
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(json.dumps({"mrr": report.mrr, **{f"hits@{k}": v for k, v in report.hits.items()},
                      "queries": report.num_queries, "protocol": report.protocol}))
    return 0


def cmd_grad_check(args) -> int:
    from .selfcheck import run_checks

    ok = True
    for seed in range(args.seed, args.seed + args.seeds):
        for name, report in run_checks(seed, eps=args.eps, tolerance=args.tolerance):
            print(f"== {name} (seed {seed}): {'pass' if report.passed else 'FAIL'}")
            print(report.format())
            ok &= report.passed
    print(f"grad-check: {'pass' if ok else 'FAIL'} (tolerance {args.tolerance:g}, eps {args.eps:g})")
    return 0 if ok else 1


def cmd_dump_subgraph(args) -> int:
    data, source = _data(args)
    preset = PRESETS.get(args.preset, {}) if args.preset else {}
    if args.vocab:
        vocab = load_vocabulary(args.vocab, data.graph)
    else:
        num_anchors = args.num_anchors or preset.get("num_anchors") or default_num_anchors(data.num_entities)
        k = args.k or preset.get("k_anchors", RunConfig.k_anchors)
        m = args.m if args.m is not None else preset.get("m_neighbors", RunConfig.m_neighbors)
        vocab = build_vocabulary(data.graph, select_anchors(data.graph, num_anchors), k, m)
    entities = args.entity if args.entity else range(vocab.num_entities)
    for e in entities:
        print(vocab.format_entry(e))
    return 0


# ---------------------------------------------------------------------------
# Parser


def _data_source(p, presets=("toy", "toy-holdout", "star"), required=True) -> None:
    group = p.add_mutually_exclusive_group(required=required)
    group.add_argument("--graph", help="graph cache written by `ingest`")
    group.add_argument("--preset", choices=presets, help="use a built-in graph instead of --graph")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap worker threads (1 = bit-reproducible)")

    keys = "configuration keys (key = default [origin] description):\n" + describe_keys()
    parser = _Parser(
        prog="stargraph",
        description="Subgraph-token knowledge-graph embeddings: preprocessing, training, evaluation.",
        epilog=keys + f"\n\nlog level: ${LOG_ENV} (DEBUG, INFO, WARNING, ERROR)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="parse triple files into a graph cache")
    p.add_argument("--train", required=True)
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--format", choices=("ids", "labels"), default="ids")
    p.add_argument("--num-entities", type=int)
    p.add_argument("--num-relations", type=int)
    p.add_argument("--dedup", action="store_true", help="drop repeated train triples")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-vocab", parents=[common], help="select anchors and sample subgraph tokens")
    _data_source(p)
    p.add_argument("--num-anchors", type=int, help="anchor set size (default ceil(0.4%% of entities))")
    p.add_argument("--k", type=int, help="anchor tokens per entity (default 20)")
    p.add_argument("--m", type=int, help="neighbor tokens per entity (default 5)")
    p.add_argument("--max-hops", type=int, default=RunConfig.max_hops)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-text", help="also write one text line per entity")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser(
        "train", parents=[common], help="train a model",
        epilog=keys, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _data_source(p, presets=("toy", "toy-holdout"))
    p.add_argument("--vocab", help="vocabulary file (built from the config when omitted)")
    p.add_argument("--config", help="key = value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="filtered ranking metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _data_source(p, presets=("toy", "toy-holdout"))
    p.add_argument("--vocab")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--protocol", choices=("full", "sampled"), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=0, help="evaluate at most this many triples")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", parents=[common], help="compare analytic and numeric gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("dump-subgraph", parents=[common], help="print entity tokens: anchors | neighbors | center")
    _data_source(p)
    p.add_argument("--vocab")
    p.add_argument("--entity", type=int, action="append", help="entity id (repeatable; default all)")
    p.add_argument("--num-anchors", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.set_defaults(func=cmd_dump_subgraph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        _set_threads(args.threads)
        return args.func(args)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), 2)
    except StarGraphError as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except FileNotFoundError as exc:
        return _fail("FileNotFoundError", f"{exc.filename}: {exc.strerror}", 1)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except FloatingPointError as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
