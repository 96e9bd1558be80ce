"""Perturbation-diversity study over recorded masked-token predictions.

Reads the JSONL log the training loop writes (one record per masked
position) and reports, per epoch and pooled, how often the model predicted
the original token back, a different known token, or [UNK].  The
plausible/implausible split inside different_known needs human judgment, so
the tool exports those records as a CSV with an empty annotation column
instead of guessing.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .seeding import rng_for

CATEGORIES = ("identical", "different_known", "unk")
UNK_TOKEN = "[UNK]"

# Published BERT-scale comparison of the same two regimes, shown beside our
# toy-scale numbers for orientation.  Never asserted: model size and data
# differ by orders of magnitude.  The source merged plausible and
# implausible human judgments are folded into different_known here.
REFERENCE_FRACTIONS = {
    "masked-prediction only": {"identical": 0.76, "different_known": 0.23, "unk": 0.01},
    "integrated training": {"identical": 0.37, "different_known": 0.62, "unk": 0.01},
}


def categorize(record):
    """identical if the prediction restored the original token, unk if it
    predicted [UNK], different_known otherwise."""
    if record["predicted_token"] == record["original_token"]:
        return "identical"
    if record["predicted_token"] == UNK_TOKEN:
        return "unk"
    return "different_known"


@dataclass
class CategoryStats:
    counts: dict
    total: int

    @property
    def fractions(self):
        if self.total == 0:
            return {c: 0.0 for c in CATEGORIES}
        return {c: self.counts[c] / self.total for c in CATEGORIES}


@dataclass
class DiversityReport:
    per_epoch: dict
    overall: CategoryStats
    records: list
    n_examples_sampled: int
    sample_size: int
    seed: int


def read_log(path):
    """Parse a perturbation log; malformed lines are an error, not skipped,
    because the log is machine-written."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: unreadable record: {exc}") from exc
            for key in ("epoch", "example_id", "position",
                        "original_token", "predicted_token"):
                if key not in record:
                    raise ValueError(f"{path}:{line_no}: record missing {key!r}")
            records.append(record)
    return records


def _stats(records):
    counts = {c: 0 for c in CATEGORIES}
    for record in records:
        counts[categorize(record)] += 1
    return CategoryStats(counts=counts, total=len(records))


def diversity_report(path, sample_size=200, seed=0):
    """Sample example ids without replacement and categorize their records.

    Deterministic under (path contents, sample_size, seed); a sample_size at
    or above the number of distinct example ids keeps everything.
    """
    records = read_log(path)
    if not records:
        raise ValueError(f"perturbation log {path} is empty")
    example_ids = sorted({r["example_id"] for r in records})
    if sample_size < len(example_ids):
        rng = rng_for(seed, "analysis")
        chosen = set(rng.choice(np.array(example_ids), size=sample_size,
                                replace=False).tolist())
    else:
        chosen = set(example_ids)
    sampled = [r for r in records if r["example_id"] in chosen]

    per_epoch = {}
    for epoch in sorted({r["epoch"] for r in sampled}):
        per_epoch[epoch] = _stats([r for r in sampled if r["epoch"] == epoch])
    return DiversityReport(per_epoch=per_epoch, overall=_stats(sampled),
                           records=sampled, n_examples_sampled=len(chosen),
                           sample_size=sample_size, seed=seed)


def bootstrap_ci(records, category, n_boot=1000, seed=0):
    """Percentile 95% confidence interval for one category's fraction."""
    if not records:
        raise ValueError("cannot bootstrap an empty record list")
    hits = np.array([categorize(r) == category for r in records], dtype=np.float64)
    rng = rng_for(seed, "analysis", 1)
    draws = rng.integers(0, len(hits), size=(n_boot, len(hits)))
    fractions = hits[draws].mean(axis=1)
    lo, hi = np.percentile(fractions, [2.5, 97.5])
    return float(lo), float(hi)


# -- rendering and export --------------------------------------------------


def report_to_json_dict(report):
    return {
        "sample_size": report.sample_size,
        "seed": report.seed,
        "n_examples_sampled": report.n_examples_sampled,
        "n_records": report.overall.total,
        "overall": {"counts": report.overall.counts,
                    "fractions": report.overall.fractions},
        "per_epoch": {str(epoch): {"counts": s.counts, "fractions": s.fractions}
                      for epoch, s in report.per_epoch.items()},
    }


def _fraction_line(label, stats, width=26):
    parts = "  ".join(f"{c} {stats.fractions[c]:.3f}" for c in CATEGORIES)
    return f"{label:<{width}} {parts}  (n={stats.total})"


def render_report(report, label="log"):
    lines = [f"perturbation diversity: {label}",
             f"sampled {report.n_examples_sampled} example ids "
             f"(requested {report.sample_size}, seed {report.seed})",
             _fraction_line("overall", report.overall)]
    for epoch, stats in report.per_epoch.items():
        lines.append(_fraction_line(f"epoch {epoch}", stats))
    lo, hi = bootstrap_ci(report.records, "different_known", seed=report.seed)
    lines.append(f"different_known 95% bootstrap CI [{lo:.3f}, {hi:.3f}]")
    return "\n".join(lines)


def render_comparison(report_a, report_b, label_a="log A", label_b="log B"):
    """Two reports side by side plus the published reference fractions."""
    lines = [render_report(report_a, label_a), "", render_report(report_b, label_b), ""]
    lines.append("reference fractions from a published BERT-scale comparison "
                 "(orientation only, never asserted):")
    for name, fractions in REFERENCE_FRACTIONS.items():
        parts = "  ".join(f"{c} {fractions[c]:.2f}" for c in CATEGORIES)
        lines.append(f"{name:<26} {parts}")
    return "\n".join(lines)


def export_annotation_csv(report, path):
    """different_known records with an empty column for human plausibility
    labels; returns the number of rows written."""
    rows = [r for r in report.records if categorize(r) == "different_known"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "example_id", "position",
                         "original_token", "predicted_token", "annotation"])
        for r in rows:
            writer.writerow([r["epoch"], r["example_id"], r["position"],
                             r["original_token"], r["predicted_token"], ""])
    return len(rows)
