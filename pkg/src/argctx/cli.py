"""Command-line entry point.

Subcommands: validate, featurize, synth, train, cv, sweep, report.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All errors go to stderr with an ``ERROR[code]:`` prefix.  Every run is
reproducible: randomness flows from the config seed (optionally overridden
by --seed), outputs embed the config that produced them, and the report
command writes byte-identical tables, CSVs and figures on repeated runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from argctx import report as report_mod
from argctx.corpus import parse_corpus, serialize_corpus, validate_corpus
from argctx.embeddings import load_word_vectors, save_word_vectors
from argctx.errors import DataError, NumericalError, UsageError
from argctx.experiment import (
    carve_dev,
    cross_validate,
    load_experiment_config,
    load_resources,
    load_sweep_grid,
    read_result_rows,
    sweep,
    train,
)
from argctx.features import bundled_lexicons, compute_idf, handcrafted, load_lexicons
from argctx.model import save_checkpoint
from argctx.synth import generate, generate_vectors, load_synth_config


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems as UsageError (exit 1)
    instead of calling sys.exit(2)."""

    def error(self, message):
        raise UsageError(message)


def _cmd_validate(args) -> None:
    corpus = parse_corpus(args.corpus, format=args.format,
                          require_labels=not args.unlabeled)
    print(validate_corpus(corpus).to_json())


def _cmd_featurize(args) -> None:
    corpus = parse_corpus(args.corpus, require_labels=not args.unlabeled)
    lexicons = load_lexicons(args.lexicons) if args.lexicons else bundled_lexicons()
    vectors = load_word_vectors(args.vectors)
    idf = compute_idf(corpus)
    n = 0
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header_written = False
        for disc in corpus.discussions:
            for adu in disc.adus:
                vec = handcrafted(adu, lexicons, idf, vectors)
                if not header_written:
                    writer.writerow(
                        ["discussion_id", "global_index", "speaker_id", "label"]
                        + vec.feature_names()
                    )
                    header_written = True
                writer.writerow(
                    [adu.discussion_id, adu.global_index, adu.speaker_id,
                     "" if adu.label is None else str(adu.label)]
                    + [repr(float(v)) for v in vec.values]
                )
                n += 1
    print(f"wrote {n} feature rows to {args.out}")


def _cmd_synth(args) -> None:
    config = load_synth_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate(config)
    serialize_corpus(corpus, out / "corpus.csv", format="csv")
    save_word_vectors(generate_vectors(config), out / "vectors.txt")
    (out / "synth_manifest.json").write_text(
        json.dumps({"config": config.to_dict()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {corpus.n_adus} ADUs in {len(corpus.discussions)} discussions to {out}")


def _load_config_with_seed(args):
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = replace(config, training=replace(config.training, seed=args.seed))
    return config


def _cmd_train(args) -> None:
    config = _load_config_with_seed(args)
    resources = load_resources(config)
    fit, dev = carve_dev(list(resources.corpus.discussions))
    trained = train(config, fit, dev, resources)
    meta = {
        "experiment": config.to_dict(),
        "seed": config.training.seed,
        "best_epoch": trained.best_epoch,
        "history": trained.history,
    }
    save_checkpoint(args.out, trained.model, meta=meta)
    if args.history:
        Path(args.history).write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    last = trained.history[-1] if trained.history else {}
    print(
        f"saved checkpoint to {args.out} "
        f"(best epoch {trained.best_epoch}, "
        f"dev F {last.get('dev_f_score', float('nan')):.3f})"
    )


def _cmd_cv(args) -> None:
    config = _load_config_with_seed(args)
    metrics = cross_validate(config)
    payload = json.dumps(
        {"config": config.to_dict(), "metrics": metrics.to_dict()},
        indent=2, sort_keys=True,
    )
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(
            f"kappa {metrics.kappa:.3f}  precision {metrics.precision:.3f}  "
            f"recall {metrics.recall:.3f}  f_score {metrics.f_score:.3f}  "
            f"(metrics written to {args.out})"
        )
    else:
        print(payload)


def _cmd_sweep(args) -> None:
    config = _load_config_with_seed(args)
    grid = load_sweep_grid(args.grid)
    rows = sweep(config, grid, args.out_dir, jobs=args.jobs)
    aggregates = sum(1 for r in rows if r["fold"] == -1)
    print(f"swept {aggregates} settings ({len(rows)} rows) into {args.out_dir}")


def _cmd_report(args) -> None:
    rows = read_result_rows(args.results)
    sys.stdout.write(report_mod.format_table(rows))
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.results).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report_mod.write_report_csv(out_dir / "report.csv", rows)
    report_mod.render_figures(rows, out_dir)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="argctx",
        description="Argument component classification with conversational context.",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("validate", help="check a corpus file and print statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default=None)
    p.add_argument("--unlabeled", action="store_true", help="allow missing labels")
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("featurize", help="write the handcrafted feature block as CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicons", default=None, help="lexicon directory (default: bundled)")
    p.add_argument("--vectors", required=True, help="word-vector file")
    p.add_argument("--out", required=True)
    p.add_argument("--unlabeled", action="store_true")
    p.set_defaults(handler=_cmd_featurize)

    p = sub.add_parser("synth", help="generate a synthetic corpus plus word vectors")
    p.add_argument("--config", required=True, help="synth config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train one model on the full corpus")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="write the training log JSON here")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("cv", help="run k-fold cross-validation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="metrics JSON path (default: stdout)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_cv)

    p = sub.add_parser("sweep", help="cross-validate every context setting in a grid")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="sweep grid JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("report", help="render sweep results as table, CSV and figures")
    p.add_argument("--results", required=True, help="results.csv from a sweep")
    p.add_argument("--out-dir", default=None,
                   help="where report.csv and figures go (default: alongside results)")
    p.set_defaults(handler=_cmd_report)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = getattr(args, "handler", None)
        if handler is None:
            raise UsageError("a subcommand is required")
        handler(args)
        return 0
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"ERROR[1]: {exc}\n")
        return 1
    except DataError as exc:
        sys.stderr.write(f"ERROR[2]: {exc}\n")
        return 2
    except NumericalError as exc:
        sys.stderr.write(f"ERROR[3]: {exc}\n")
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
