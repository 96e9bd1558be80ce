"""Command-line entry point.

Subcommands: train (one mode over a seed sweep), eval (checkpoint accuracy
per split), analyze (perturbation-diversity report), grid (alpha sweep),
gen-data (export the synthetic task).  Exit codes: 0 success, 1 runtime
failure, 2 configuration or usage error.

Every run writes a manifest.json first, naming its planned outputs, and
rewrites it on success with wall-clock timings; all other artifacts are
byte-reproducible from the config and seeds alone.
"""

import argparse
import json
import os
import sys
import time

from . import __version__
from .analysis import (diversity_report, export_annotation_csv,
                       render_comparison, render_report, report_to_json_dict)
from .config import (ConfigError, apply_overrides, flat_items, load_config,
                     to_task_spec, to_train_config)
from .data import LoadSchema, accuracy, encode_split, export_split, gen_spurious_task, load_examples
from .model import CheckpointError, load_checkpoint
from .trainer import alpha_grid_search, run_mode

OUT_DIR_ENV = "MASKTUNE_OUT_DIR"

DATA_FILE_FLAGS = ("train_file", "dev_file", "indist_file", "ood_file")
_FILE_SPLIT_NAMES = ("train", "dev", "test_indist", "test_ood")


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="PATH", help="TOML config file")
    parser.add_argument("--out-dir", dest="out_dir", default=None,
                        help=f"output directory (default from config or ${OUT_DIR_ENV})")
    for key, default in flat_items():
        if key == "out_dir":
            continue
        parser.add_argument("--" + key.replace("_", "-"), dest=key,
                            default=None, metavar="V",
                            help=f"override {key} (default {default})")


def _add_data_file_flags(parser):
    parser.add_argument("--train-file", help="training examples file")
    parser.add_argument("--dev-file", help="validation examples file")
    parser.add_argument("--indist-file", help="in-distribution test file")
    parser.add_argument("--ood-file", help="out-of-distribution test file")
    parser.add_argument("--file-format", choices=("tsv", "jsonl"), default="tsv")
    parser.add_argument("--text-field", default="text")
    parser.add_argument("--text2-field", default=None,
                        help="second-sentence field for pair tasks")
    parser.add_argument("--label-field", default="label")
    parser.add_argument("--label-map", default="neg=0,pos=1",
                        help="label string to class index map, e.g. neg=0,pos=1")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="masktune",
        description="Integrated masked-prediction + classification training "
                    "on a synthetic spurious-correlation benchmark.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one mode over a seed sweep")
    _add_config_flags(p_train)
    _add_data_file_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on every split")
    p_eval.add_argument("--checkpoint", required=True)
    _add_config_flags(p_eval)
    _add_data_file_flags(p_eval)

    p_analyze = sub.add_parser("analyze", help="perturbation-diversity report")
    p_analyze.add_argument("--log", required=True, help="perturbation JSONL log")
    p_analyze.add_argument("--compare", help="second log to report side by side")
    p_analyze.add_argument("--sample", type=int, default=200,
                           help="example ids to sample (default 200)")
    p_analyze.add_argument("--seed", type=int, default=0)
    p_analyze.add_argument("--json-out", help="write the report as JSON here")
    p_analyze.add_argument("--annotations-out",
                           help="write different_known records as a CSV for "
                                "manual plausibility annotation")

    p_grid = sub.add_parser("grid", help="alpha grid search")
    _add_config_flags(p_grid)
    _add_data_file_flags(p_grid)

    p_gen = sub.add_parser("gen-data", help="export the synthetic task splits")
    _add_config_flags(p_gen)
    p_gen.add_argument("--format", choices=("tsv", "jsonl", "both"),
                       default="both")
    return parser


def _layered_config(args):
    config = load_config(args.config)
    overrides = {key: getattr(args, key, None) for key, _ in flat_items()
                 if key != "out_dir"}
    apply_overrides(config, overrides)
    return config


def _resolve_out_dir(args, config):
    """Precedence: --out-dir flag, then $MASKTUNE_OUT_DIR, then config."""
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) \
        or config["output"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _parse_label_map(text):
    mapping = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not name or not value:
            raise ConfigError(f"label map entry {part!r} is not name=index")
        try:
            mapping[name.strip()] = int(value)
        except ValueError as exc:
            raise ConfigError(f"label map index {value!r} is not an integer") from exc
    if not mapping:
        raise ConfigError("label map is empty")
    return mapping


def _load_splits(args, config):
    """Examples from files when any file flag is set, else the synthetic task."""
    paths = {name: getattr(args, flag) for name, flag
             in zip(_FILE_SPLIT_NAMES, DATA_FILE_FLAGS)}
    if not any(paths.values()):
        return gen_spurious_task(to_task_spec(config))
    if not paths["train"] or not paths["dev"]:
        raise ConfigError("file-based data needs at least --train-file and --dev-file")
    schema = LoadSchema(text=args.text_field, label=args.label_field,
                        text2=args.text2_field,
                        label_map=_parse_label_map(args.label_map))
    splits = {}
    next_id = 0
    for name in _FILE_SPLIT_NAMES:
        if not paths[name]:
            continue
        report = load_examples(paths[name], args.file_format, schema, name=name)
        split = report.split
        split.ids = split.ids + next_id
        next_id += len(split)
        splits[name] = split
    return splits


def _write_manifest(out_dir, command, config, outputs, timings=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "outputs": sorted(outputs),
        "timings": timings or {},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _run_artifacts(out_dir):
    return [name for name in sorted(os.listdir(out_dir))
            if name != "manifest.json"]


def cmd_train(args):
    config = _layered_config(args)
    cfg = to_train_config(config)
    out_dir = _resolve_out_dir(args, config)
    splits = _load_splits(args, config)

    planned = ["metrics.csv", "summary.json"]
    planned += [f"checkpoint_seed{i}.json" for i in range(cfg.seeds)]
    planned += [f"predictions_seed{i}.tsv" for i in range(cfg.seeds)]
    _write_manifest(out_dir, "train", config, planned)

    started = time.time()
    metrics = run_mode(cfg, splits, out_dir=out_dir)
    timings = {"wall_seconds": round(time.time() - started, 3)}
    _write_manifest(out_dir, "train", config, _run_artifacts(out_dir), timings)

    for name in sorted(metrics.mean):
        std = metrics.std[name]
        spread = f" +/- {std:.4f}" if std is not None else ""
        print(f"{cfg.mode} {name}: {metrics.mean[name]:.4f}{spread}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args):
    config = _layered_config(args)
    params, vocab = load_checkpoint(args.checkpoint)
    splits = _load_splits(args, config)
    batch_size = config["train"]["eval_batch_size"]
    result = {}
    for name in sorted(splits):
        ids, attention, labels = encode_split(splits[name], vocab,
                                              params.config.max_len)
        result[name] = accuracy(params, ids, attention, labels,
                                batch_size=batch_size)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_analyze(args):
    report = diversity_report(args.log, sample_size=args.sample, seed=args.seed)
    if args.compare:
        other = diversity_report(args.compare, sample_size=args.sample,
                                 seed=args.seed)
        print(render_comparison(report, other, label_a=args.log,
                                label_b=args.compare))
    else:
        print(render_report(report, label=args.log))
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(report_to_json_dict(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.annotations_out:
        written = export_annotation_csv(report, args.annotations_out)
        print(f"wrote {written} records for annotation to {args.annotations_out}")
    return 0


def cmd_grid(args):
    config = _layered_config(args)
    cfg = to_train_config(config)
    out_dir = _resolve_out_dir(args, config)
    splits = _load_splits(args, config)
    _write_manifest(out_dir, "grid", config, ["alpha_grid.csv"])

    started = time.time()
    result = alpha_grid_search(cfg, splits, out_dir=out_dir)
    timings = {"wall_seconds": round(time.time() - started, 3)}
    _write_manifest(out_dir, "grid", config, _run_artifacts(out_dir), timings)

    for entry in result.table:
        cells = "  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in entry.items())
        print(cells)
    print(f"selected alpha: {result.selected_alpha}")
    return 0


def cmd_gen_data(args):
    config = _layered_config(args)
    out_dir = _resolve_out_dir(args, config)
    splits = gen_spurious_task(to_task_spec(config))
    formats = ("tsv", "jsonl") if args.format == "both" else (args.format,)
    written = []
    for name, split in splits.items():
        for fmt in formats:
            path = os.path.join(out_dir, f"{name}.{fmt}")
            export_split(split, path, fmt)
            written.append(path)
    _write_manifest(out_dir, "gen-data", config,
                    [os.path.basename(p) for p in written],
                    {"examples": sum(len(s) for s in splits.values())})
    for path in written:
        print(path)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "grid": cmd_grid,
    "gen-data": cmd_gen_data,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FloatingPointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
