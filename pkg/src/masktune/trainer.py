"""Training-loop driver: the integrated objective plus four reference regimes.

Modes
-----
fine_tune          classification loss on the original examples only.
mask_tuning        per batch: mask, predict, substitute, classify the
                   perturbed copy, optimize alpha*l_mlm + (1-alpha)*l_ft.
augmentation       perturb the whole train set once up front, merge with the
                   originals (2x data), then plain fine-tuning.
no_integrated_loss the full mask/predict/substitute pipeline every batch,
                   but only the classification loss is optimized.
sequential         masked-prediction training first, then plain fine-tuning
                   on perturbed examples generated by the phase-1 model.

Every random draw descends from one root seed through named streams, so two
runs with the same config and seed produce byte-identical metrics, and modes
that share streams (e.g. mask_tuning at alpha=0 vs no_integrated_loss) can
be compared parameter-for-parameter.
"""

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data import accuracy, encode_split
from .masking import MaskPolicy, build_perturbed, perturbation_records, select_and_mask
from .model import ModelConfig, cls_logits, encode, init_params, mlm_logits, save_checkpoint
from .objectives import LossBreakdown, ft_loss, integrated_loss, mlm_loss, scenario_bucket
from .optim import AdamW, linear_decay_lr
from .seeding import rng_for, seed_for
from .tokenizer import build_vocab

MODES = ("fine_tune", "mask_tuning", "augmentation", "no_integrated_loss", "sequential")

CSV_COLUMNS = ("mode", "seed", "epoch", "alpha", "l_mlm", "l_ft",
               "l_masktuning", "split", "accuracy")

DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(11))

# Learning-rate presets: "paper" is the conventional grid for pretrained
# encoders; "toy" suits the from-scratch model trained here, whose random
# init needs a far larger step size.
LR_PRESETS = {
    "toy": (3e-4,),
    "paper": (2e-5, 3e-5, 4e-5, 5e-5),
}


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on, minus the data itself."""

    mode: str = "mask_tuning"
    alpha: float = 0.3
    epochs: int = 3
    batch_size: int = 16
    eval_batch_size: int = 64
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    seeds: int = 5
    root_seed: int = 0
    mask_rate: float = 0.05
    min_masks_per_example: int = 1
    dropout: float = 0.0
    max_len: int = 32
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    num_classes: int = 2
    alpha_grid: tuple = DEFAULT_ALPHA_GRID

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.seeds < 1:
            raise ValueError(f"seeds must be >= 1, got {self.seeds}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.alpha_grid:
            raise ValueError("alpha_grid must be non-empty")
        for a in self.alpha_grid:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha_grid entry {a} outside [0, 1]")

    def model_config(self, vocab_size):
        return ModelConfig(vocab_size=vocab_size, d_model=self.d_model,
                           n_layers=self.n_layers, n_heads=self.n_heads,
                           d_ff=self.d_ff, max_len=self.max_len,
                           num_classes=self.num_classes,
                           dropout_rate=self.dropout)


@dataclass
class RunMetrics:
    """Aggregated outcome of run_mode across its seed sweep."""

    mode: str
    alpha: float
    rows: list
    accuracies: dict
    mean: dict
    std: dict
    scenario_counts: dict
    counters: dict


@dataclass
class GridResult:
    table: list
    selected_alpha: float


@dataclass
class SeedRun:
    """Mutable state for one seed of one mode."""

    cfg: TrainConfig
    vocab: object
    seed_index: int
    params: object
    optimizer: AdamW
    rows: list = field(default_factory=list)
    log: list = field(default_factory=list)
    counters: dict = field(default_factory=lambda: {
        "train_forward": 0, "eval_forward": 0, "train_steps": 0,
        "mlm_skipped_examples": 0, "train_examples": 0,
    })
    scenario_counts: dict = field(default_factory=dict)


def _int_seed(root, purpose, *indices):
    """Collapse a derived stream to a plain int usable as another root."""
    return int(seed_for(root, purpose, *indices).generate_state(1)[0])


def new_seed_run(cfg, vocab, seed_index):
    params = init_params(cfg.model_config(len(vocab)),
                         seed_for(cfg.root_seed, "init", seed_index))
    optimizer = AdamW(params, lr=cfg.learning_rate,
                      weight_decay=cfg.weight_decay)
    return SeedRun(cfg=cfg, vocab=vocab, seed_index=seed_index,
                   params=params, optimizer=optimizer)


def _dropout_rng(run, epoch, batch_index):
    if run.cfg.dropout <= 0.0:
        return None
    return rng_for(run.cfg.root_seed, "dropout", run.seed_index, epoch, batch_index)


def _check_finite(breakdown_values, epoch, batch_index):
    for name, value in breakdown_values.items():
        if not np.isfinite(value):
            raise FloatingPointError(
                f"non-finite loss at epoch {epoch} step {batch_index}: "
                + ", ".join(f"{k}={v}" for k, v in breakdown_values.items()))


def train_step_masktuning(run, ids, attention, labels, policy, alpha, *,
                          epoch, batch_index, lr, optimize="masktuning",
                          example_ids=None):
    """One integrated step: mask, predict, substitute, classify, update.

    optimize selects which scalar backward() runs from: the integrated loss
    ("masktuning"), the classification loss alone ("ft", the
    no_integrated_loss regime), or the prediction loss alone ("mlm", the
    first phase of sequential training).  All three variants execute the
    identical forward pipeline and random draws, so their trajectories are
    comparable step for step.
    """
    if optimize not in ("masktuning", "ft", "mlm"):
        raise ValueError(f"unknown optimize target {optimize!r}")
    masked = select_and_mask(ids, policy, epoch, batch_index)
    run.counters["mlm_skipped_examples"] += masked.skipped
    drop = _dropout_rng(run, epoch, batch_index)

    hidden_m = encode(run.params, masked.input_ids, attention, train=True,
                      dropout_rng=drop)
    run.counters["train_forward"] += 1
    logits_m = mlm_logits(run.params, hidden_m, masked.mask_rows, masked.mask_cols)
    l_mlm = mlm_loss(logits_m, masked.original_ids)
    _check_finite({"l_mlm": l_mlm.item()}, epoch, batch_index)

    predictions = np.argmax(logits_m.data, axis=-1) if masked.n_masks else \
        np.zeros(0, dtype=np.int64)
    if example_ids is not None:
        run.log.extend(perturbation_records(masked, predictions, run.vocab,
                                            example_ids, epoch))

    perturbed = build_perturbed(masked, predictions, labels)
    if optimize == "mlm":
        # Phase-1 style training never consumes the perturbed copy; no
        # classifier pass happens and no scenario is counted.
        run.optimizer.zero_grad()
        l_mlm.backward()
        run.optimizer.step(lr=lr)
        run.counters["train_steps"] += 1
        value = l_mlm.item()
        return LossBreakdown(l_mlm=value, l_ft=0.0, l_masktuning=value, alpha=1.0)

    hidden_p = encode(run.params, perturbed.token_ids, attention,
                      train=True, dropout_rng=drop)
    run.counters["train_forward"] += 1
    l_ft = ft_loss(cls_logits(run.params, hidden_p), perturbed.labels)
    _check_finite({"l_mlm": l_mlm.item(), "l_ft": l_ft.item()},
                  epoch, batch_index)
    combined, breakdown = integrated_loss(l_mlm, l_ft, alpha)

    run.optimizer.zero_grad()
    if optimize == "masktuning":
        combined.backward()
    else:
        l_ft.backward()
    run.optimizer.step(lr=lr)
    run.counters["train_steps"] += 1

    bucket = scenario_bucket(breakdown)
    run.scenario_counts[bucket] = run.scenario_counts.get(bucket, 0) + 1
    return breakdown


def train_step_classify(run, ids, attention, labels, *, epoch, batch_index, lr):
    """One plain classification step on the given (possibly perturbed) batch."""
    drop = _dropout_rng(run, epoch, batch_index)
    hidden = encode(run.params, ids, attention, train=True, dropout_rng=drop)
    run.counters["train_forward"] += 1
    l_ft = ft_loss(cls_logits(run.params, hidden), labels)
    _check_finite({"l_ft": l_ft.item()}, epoch, batch_index)
    run.optimizer.zero_grad()
    l_ft.backward()
    run.optimizer.step(lr=lr)
    run.counters["train_steps"] += 1
    return l_ft.item()


def _batch_slices(n, batch_size, rng):
    """Index arrays for one shuffled epoch."""
    perm = rng.permutation(n)
    return [perm[start:start + batch_size] for start in range(0, n, batch_size)]


def _trim(ids, attention, index):
    """Batch rows with trailing all-[PAD] columns dropped."""
    rows_ids = ids[index]
    rows_attn = attention[index]
    width = int(rows_attn.sum(axis=1).max())
    return rows_ids[:, :width], rows_attn[:, :width]


def _train_row(run, epoch, breakdown=None, l_ft=None, l_mlm=None):
    row = {c: "" for c in CSV_COLUMNS}
    row.update(mode=run.cfg.mode, seed=run.seed_index, epoch=epoch,
               alpha=run.cfg.alpha, split="train")
    if breakdown is not None:
        row.update(l_mlm=breakdown.l_mlm, l_ft=breakdown.l_ft,
                   l_masktuning=breakdown.l_masktuning)
    if l_ft is not None:
        row["l_ft"] = l_ft
    if l_mlm is not None:
        row["l_mlm"] = l_mlm
    return row


def _eval_epoch(run, encoded, epoch):
    """Accuracy rows for every non-train split; returns {split: accuracy}."""
    out = {}
    for name, (ids, attention, labels) in encoded.items():
        if name == "train":
            continue
        acc = accuracy(run.params, ids, attention, labels,
                       batch_size=run.cfg.eval_batch_size)
        run.counters["eval_forward"] += -(-ids.shape[0] // run.cfg.eval_batch_size)
        row = {c: "" for c in CSV_COLUMNS}
        row.update(mode=run.cfg.mode, seed=run.seed_index, epoch=epoch,
                   alpha=run.cfg.alpha, split=name, accuracy=acc)
        run.rows.append(row)
        out[name] = acc
    return out


def _generate_perturbed_dataset(run, ids, attention, labels, example_ids,
                                log_epoch):
    """Perturb every example once with the current model (inference only)."""
    cfg = run.cfg
    policy = MaskPolicy(mask_rate=cfg.mask_rate,
                        rng_seed=_int_seed(cfg.root_seed, "augment", run.seed_index),
                        min_masks_per_example=cfg.min_masks_per_example)
    out = ids.copy()
    for batch_index, start in enumerate(range(0, ids.shape[0], cfg.eval_batch_size)):
        stop = min(start + cfg.eval_batch_size, ids.shape[0])
        index = np.arange(start, stop)
        batch_ids, batch_attn = _trim(ids, attention, index)
        masked = select_and_mask(batch_ids, policy, 0, batch_index)
        run.counters["mlm_skipped_examples"] += masked.skipped
        hidden = encode(run.params, masked.input_ids, batch_attn, train=False)
        run.counters["eval_forward"] += 1
        logits = mlm_logits(run.params, hidden, masked.mask_rows, masked.mask_cols)
        predictions = np.argmax(logits.data, axis=-1) if masked.n_masks else \
            np.zeros(0, dtype=np.int64)
        run.log.extend(perturbation_records(masked, predictions, run.vocab,
                                            example_ids[index], log_epoch))
        perturbed = build_perturbed(masked, predictions, labels[index])
        out[index, : perturbed.token_ids.shape[1]] = perturbed.token_ids
    return out


def _run_seed(cfg, encoded, example_ids, vocab, seed_index):
    """Train one seed of cfg.mode end to end; returns the SeedRun and the
    final-epoch accuracies."""
    run = new_seed_run(cfg, vocab, seed_index)
    ids, attention, labels = encoded["train"]
    run.counters["train_examples"] = ids.shape[0]
    policy = MaskPolicy(mask_rate=cfg.mask_rate,
                        rng_seed=_int_seed(cfg.root_seed, "masking", seed_index),
                        min_masks_per_example=cfg.min_masks_per_example)

    n_batches = -(-ids.shape[0] // cfg.batch_size)
    final_acc = {}

    if cfg.mode in ("mask_tuning", "no_integrated_loss"):
        optimize = "masktuning" if cfg.mode == "mask_tuning" else "ft"
        total = cfg.epochs * n_batches
        step = 0
        for epoch in range(cfg.epochs):
            shuffle = rng_for(cfg.root_seed, "shuffle", seed_index, epoch)
            for batch_index, index in enumerate(
                    _batch_slices(ids.shape[0], cfg.batch_size, shuffle)):
                batch_ids, batch_attn = _trim(ids, attention, index)
                lr = linear_decay_lr(cfg.learning_rate, step, total)
                breakdown = train_step_masktuning(
                    run, batch_ids, batch_attn, labels[index], policy,
                    cfg.alpha, epoch=epoch, batch_index=batch_index, lr=lr,
                    optimize=optimize, example_ids=example_ids[index])
                run.rows.append(_train_row(run, epoch, breakdown=breakdown))
                step += 1
            final_acc = _eval_epoch(run, encoded, epoch)

    elif cfg.mode == "fine_tune":
        total = cfg.epochs * n_batches
        step = 0
        for epoch in range(cfg.epochs):
            shuffle = rng_for(cfg.root_seed, "shuffle", seed_index, epoch)
            for batch_index, index in enumerate(
                    _batch_slices(ids.shape[0], cfg.batch_size, shuffle)):
                batch_ids, batch_attn = _trim(ids, attention, index)
                lr = linear_decay_lr(cfg.learning_rate, step, total)
                l_ft = train_step_classify(run, batch_ids, batch_attn,
                                           labels[index], epoch=epoch,
                                           batch_index=batch_index, lr=lr)
                run.rows.append(_train_row(run, epoch, l_ft=l_ft))
                step += 1
            final_acc = _eval_epoch(run, encoded, epoch)

    elif cfg.mode == "augmentation":
        perturbed_ids = _generate_perturbed_dataset(
            run, ids, attention, labels, example_ids, log_epoch=0)
        merged_ids = np.concatenate([ids, perturbed_ids])
        merged_attn = np.concatenate([attention, attention])
        merged_labels = np.concatenate([labels, labels])
        run.counters["train_examples"] = merged_ids.shape[0]
        merged_batches = -(-merged_ids.shape[0] // cfg.batch_size)
        total = cfg.epochs * merged_batches
        step = 0
        for epoch in range(cfg.epochs):
            shuffle = rng_for(cfg.root_seed, "shuffle", seed_index, epoch)
            for batch_index, index in enumerate(
                    _batch_slices(merged_ids.shape[0], cfg.batch_size, shuffle)):
                batch_ids, batch_attn = _trim(merged_ids, merged_attn, index)
                lr = linear_decay_lr(cfg.learning_rate, step, total)
                l_ft = train_step_classify(run, batch_ids, batch_attn,
                                           merged_labels[index], epoch=epoch,
                                           batch_index=batch_index, lr=lr)
                run.rows.append(_train_row(run, epoch, l_ft=l_ft))
                step += 1
            final_acc = _eval_epoch(run, encoded, epoch)

    elif cfg.mode == "sequential":
        run = train_mlm_only(cfg, encoded, example_ids, vocab, seed_index, run=run)
        perturbed_ids = _generate_perturbed_dataset(
            run, ids, attention, labels, example_ids, log_epoch=cfg.epochs)
        run.optimizer = AdamW(run.params, lr=cfg.learning_rate,
                              weight_decay=cfg.weight_decay)
        total = cfg.epochs * n_batches
        step = 0
        for phase_epoch in range(cfg.epochs):
            epoch = cfg.epochs + phase_epoch
            shuffle = rng_for(cfg.root_seed, "shuffle", seed_index, epoch)
            for batch_index, index in enumerate(
                    _batch_slices(ids.shape[0], cfg.batch_size, shuffle)):
                batch_ids, batch_attn = _trim(perturbed_ids, attention, index)
                lr = linear_decay_lr(cfg.learning_rate, step, total)
                l_ft = train_step_classify(run, batch_ids, batch_attn,
                                           labels[index], epoch=epoch,
                                           batch_index=batch_index, lr=lr)
                run.rows.append(_train_row(run, epoch, l_ft=l_ft))
                step += 1
            final_acc = _eval_epoch(run, encoded, epoch)

    else:
        raise ValueError(f"mode must be one of {MODES}, got {cfg.mode!r}")

    return run, final_acc


def train_mlm_only(cfg, encoded, example_ids, vocab, seed_index, run=None):
    """Masked-token prediction training alone (phase 1 of sequential).

    With a shared root seed this consumes exactly the random streams of a
    mask_tuning run over the same epochs, so an alpha=1 mask_tuning run and
    this routine produce bitwise-identical parameter trajectories (at the
    default dropout of 0).
    """
    run = run or new_seed_run(cfg, vocab, seed_index)
    ids, attention, labels = encoded["train"]
    run.counters["train_examples"] = ids.shape[0]
    policy = MaskPolicy(mask_rate=cfg.mask_rate,
                        rng_seed=_int_seed(cfg.root_seed, "masking", seed_index),
                        min_masks_per_example=cfg.min_masks_per_example)
    n_batches = -(-ids.shape[0] // cfg.batch_size)
    total = cfg.epochs * n_batches
    step = 0
    for epoch in range(cfg.epochs):
        shuffle = rng_for(cfg.root_seed, "shuffle", seed_index, epoch)
        for batch_index, index in enumerate(
                _batch_slices(ids.shape[0], cfg.batch_size, shuffle)):
            batch_ids, batch_attn = _trim(ids, attention, index)
            lr = linear_decay_lr(cfg.learning_rate, step, total)
            breakdown = train_step_masktuning(
                run, batch_ids, batch_attn, labels[index], policy, cfg.alpha,
                epoch=epoch, batch_index=batch_index, lr=lr, optimize="mlm",
                example_ids=example_ids[index])
            run.rows.append(_train_row(run, epoch, l_mlm=breakdown.l_mlm))
            step += 1
        _eval_epoch(run, encoded, epoch)
    return run


def prepare_data(cfg, splits):
    """Shared preprocessing: vocabulary from train text, padded id arrays."""
    if "train" not in splits:
        raise ValueError("splits must include 'train'")
    vocab = build_vocab(splits["train"].texts())
    encoded = {name: encode_split(split, vocab, cfg.max_len)
               for name, split in splits.items()}
    return vocab, encoded


def run_mode(cfg, splits, out_dir=None):
    """Run cfg.mode over the seed sweep; optionally persist all artifacts.

    Returns RunMetrics with final-epoch accuracies per seed per split and
    their mean and (for >= 2 seeds) sample standard deviation.
    """
    if cfg.mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    vocab, encoded = prepare_data(cfg, splits)
    example_ids = splits["train"].ids

    rows = []
    accuracies = {}
    scenario_counts = {}
    counters = {}
    for seed_index in range(cfg.seeds):
        run, final_acc = _run_seed(cfg, encoded, example_ids, vocab, seed_index)
        rows.extend(run.rows)
        for name, acc in final_acc.items():
            accuracies.setdefault(name, []).append(acc)
        for key, count in run.scenario_counts.items():
            scenario_counts[key] = scenario_counts.get(key, 0) + count
        for key, count in run.counters.items():
            if key == "train_examples":
                counters[key] = count
            else:
                counters[key] = counters.get(key, 0) + count
        if out_dir is not None:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_seed{seed_index}.json"),
                            run.params, vocab)
            if run.log:
                write_perturbation_log(
                    run.log, os.path.join(out_dir, f"perturbations_seed{seed_index}.jsonl"))
            _write_predictions(run, encoded,
                               os.path.join(out_dir, f"predictions_seed{seed_index}.tsv"),
                               splits)

    mean = {name: float(np.mean(vals)) for name, vals in accuracies.items()}
    std = {name: (float(np.std(vals, ddof=1)) if len(vals) >= 2 else None)
           for name, vals in accuracies.items()}
    metrics = RunMetrics(mode=cfg.mode, alpha=cfg.alpha, rows=rows,
                         accuracies=accuracies, mean=mean, std=std,
                         scenario_counts=scenario_counts, counters=counters)
    if out_dir is not None:
        write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
        write_summary(metrics, os.path.join(out_dir, "summary.json"))
    return metrics


def alpha_grid_search(cfg, splits, out_dir=None):
    """Evaluate every alpha in cfg.alpha_grid with full mask_tuning runs.

    Selection: highest mean dev accuracy, ties resolved toward the larger
    alpha.  The full table is always produced.
    """
    table = []
    for alpha in cfg.alpha_grid:
        sub = replace(cfg, mode="mask_tuning", alpha=float(alpha))
        metrics = run_mode(sub, splits)
        entry = {"alpha": float(alpha)}
        for name, value in sorted(metrics.mean.items()):
            entry[f"mean_acc_{name}"] = value
        table.append(entry)
    selected = max(table, key=lambda e: (e.get("mean_acc_dev", 0.0), e["alpha"]))
    result = GridResult(table=table, selected_alpha=selected["alpha"])
    if out_dir is not None:
        write_grid_csv(result, os.path.join(out_dir, "alpha_grid.csv"))
    return result


# -- artifact writers ----------------------------------------------------------


def _format_cell(value):
    # repr(float) is the shortest round-trip form, so reruns of the same
    # config produce byte-identical files.
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in CSV_COLUMNS])


def write_summary(metrics, path):
    doc = {
        "mode": metrics.mode,
        "alpha": metrics.alpha,
        "splits": {
            name: {"mean": metrics.mean[name], "std": metrics.std[name],
                   "per_seed": metrics.accuracies[name]}
            for name in sorted(metrics.accuracies)
        },
        "scenario_counts": metrics.scenario_counts,
        "counters": metrics.counters,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_perturbation_log(records, path):
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_grid_csv(result, path):
    columns = list(result.table[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns + ["selected"])
        for entry in result.table:
            selected = "1" if entry["alpha"] == result.selected_alpha else "0"
            writer.writerow([_format_cell(entry[c]) for c in columns] + [selected])


def _write_predictions(run, encoded, path, splits):
    """Final-model argmax predictions for every evaluation split, one row per
    example, so reported accuracies can be re-counted independently."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["split", "example_id", "label", "prediction"])
        for name, (ids, attention, labels) in encoded.items():
            if name == "train":
                continue
            _, preds = accuracy(run.params, ids, attention, labels,
                                batch_size=run.cfg.eval_batch_size,
                                return_predictions=True)
            for example_id, label, pred in zip(splits[name].ids, labels, preds):
                writer.writerow([name, example_id, label, pred])
