"""Synthetic spurious-correlation benchmark plus file loaders.

The generated task plants two signals in every sentence: k odd "signal"
tokens whose majority class IS the label (always sufficient), and a single
shortcut token whose presence correlates with label 1 at strength rho.  A
model that keys on the shortcut scores exactly rho in expectation, so
train/test splits built with different rho values expose shortcut reliance
as an in-distribution vs out-of-distribution accuracy gap.

The default knobs make the two features asymmetrically learnable, which is
what induces shortcut reliance in a plainly fine-tuned model: signal tokens
are drawn from a large per-class lexicon so each type is rare (~15 train
occurrences), while the shortcut is one frequent token.  Classifying sparse
types from label supervision alone underfits in three epochs; the masked
prediction objective clusters same-class types through their shared
contexts, which is the channel the integrated loss exploits.
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import cls_logits, encode
from .seeding import rng_for
from .tokenizer import PAD
from .tokenizer import encode as encode_text

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "dev", "test_indist", "test_ood")

# Sentence-pair texts are stored as one string joined on a tab; TSV fields
# cannot contain tabs, so the separator never collides with data.
PAIR_JOIN = "\t"


@dataclass(frozen=True)
class SpuriousTaskSpec:
    """Construction parameters for the synthetic task."""

    n_signal_tokens: int = 200
    signal_tokens_per_sentence: int = 1
    shortcut_token: str = "shortcut"
    rho_train: float = 0.95
    rho_ood: float = 0.05
    min_sentence_len: int = 12
    max_sentence_len: int = 18
    filler_vocab_size: int = 40
    n_train: int = 6000
    n_dev: int = 1000
    n_test_indist: int = 1000
    n_test_ood: int = 1000
    seed: int = 0

    def __post_init__(self):
        k = self.signal_tokens_per_sentence
        if k < 1 or k % 2 == 0:
            raise ValueError(f"signal_tokens_per_sentence must be odd and >= 1, got {k}")
        for name in ("rho_train", "rho_ood"):
            rho = getattr(self, name)
            if not 0.0 <= rho <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rho}")
        if self.n_signal_tokens < 1:
            raise ValueError("n_signal_tokens must be >= 1")
        if self.min_sentence_len < k + 1:
            raise ValueError(
                f"min_sentence_len must be >= {k + 1} to fit the signal tokens "
                "plus a shortcut slot")
        if self.max_sentence_len < self.min_sentence_len:
            raise ValueError("max_sentence_len must be >= min_sentence_len")
        if self.filler_vocab_size < 1:
            raise ValueError("filler_vocab_size must be >= 1")
        for name in ("n_train", "n_dev", "n_test_indist", "n_test_ood"):
            n = getattr(self, name)
            if n < 2 or n % 2:
                raise ValueError(f"{name} must be even and >= 2 for exact class balance")

    def signal_tokens(self, label):
        stem = "pos" if label == 1 else "neg"
        return [f"{stem}{i:03d}" for i in range(self.n_signal_tokens)]

    def filler_tokens(self):
        return [f"filler{i:03d}" for i in range(self.filler_vocab_size)]


@dataclass
class DatasetSplit:
    """Named list of (text, label) pairs with globally unique example ids."""

    name: str
    examples: list
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.examples), dtype=np.int64)
        if len(self.ids) != len(self.examples):
            raise ValueError("ids and examples must have equal length")

    def __len__(self):
        return len(self.examples)

    def texts(self):
        return [text for text, _ in self.examples]

    def labels(self):
        return np.array([label for _, label in self.examples], dtype=np.int64)


def _gen_sentence(spec, label, rho, rng):
    """One sentence: k signal tokens (majority = label), maybe the shortcut,
    fillers everywhere else, order shuffled."""
    k = spec.signal_tokens_per_sentence
    own = spec.signal_tokens(label)
    other = spec.signal_tokens(1 - label)
    majority = int(rng.integers(k // 2 + 1, k + 1))
    tokens = [own[i] for i in rng.integers(0, len(own), size=majority)]
    tokens += [other[i] for i in rng.integers(0, len(other), size=k - majority)]

    p_shortcut = rho if label == 1 else 1.0 - rho
    with_shortcut = bool(rng.random() < p_shortcut)
    if with_shortcut:
        tokens.append(spec.shortcut_token)

    length = int(rng.integers(spec.min_sentence_len, spec.max_sentence_len + 1))
    fillers = spec.filler_tokens()
    n_fill = max(0, length - len(tokens))
    tokens += [fillers[i] for i in rng.integers(0, len(fillers), size=n_fill)]
    rng.shuffle(tokens)
    return " ".join(tokens)


def _gen_split(spec, name, size, rho, rng, id_start):
    labels = np.array([0, 1] * (size // 2), dtype=np.int64)
    rng.shuffle(labels)
    examples = [(_gen_sentence(spec, int(y), rho, rng), int(y)) for y in labels]
    ids = np.arange(id_start, id_start + size, dtype=np.int64)
    return DatasetSplit(name=name, examples=examples, ids=ids)


def gen_spurious_task(spec):
    """Generate all four splits; deterministic and bitwise-stable under seed.

    train/dev/test_indist share rho_train; test_ood uses rho_ood.  Each
    split draws from its own child stream, so splits are independent and
    example ids never overlap.
    """
    sizes = {
        "train": spec.n_train,
        "dev": spec.n_dev,
        "test_indist": spec.n_test_indist,
        "test_ood": spec.n_test_ood,
    }
    splits = {}
    id_start = 0
    for index, name in enumerate(SPLIT_NAMES):
        rho = spec.rho_ood if name == "test_ood" else spec.rho_train
        rng = rng_for(spec.seed, "data", index)
        splits[name] = _gen_split(spec, name, sizes[name], rho, rng, id_start)
        id_start += sizes[name]
    return splits


# -- file loaders --------------------------------------------------------------


@dataclass(frozen=True)
class LoadSchema:
    """Field/column names mapping a file onto (text, label) examples."""

    text: str = "text"
    label: str = "label"
    text2: str = None
    label_map: dict = field(default_factory=lambda: {"neg": 0, "pos": 1})


@dataclass
class LoadReport:
    split: DatasetSplit
    skipped: int


def _to_example(record, schema):
    """One parsed record to (text, label); None marks a malformed record."""
    text = record.get(schema.text)
    raw_label = record.get(schema.label)
    if text is None or raw_label is None or not str(text).strip():
        return None
    raw_label = str(raw_label).strip()
    if raw_label not in schema.label_map:
        raise ValueError(
            f"unknown label {raw_label!r}; label map is {schema.label_map}")
    text = str(text).strip()
    if schema.text2 is not None:
        second = record.get(schema.text2)
        if second is None or not str(second).strip():
            return None
        text = text + PAIR_JOIN + str(second).strip()
    return (text, schema.label_map[raw_label])


def load_examples(path, format, schema=None, name="loaded"):
    """Read a TSV (header row) or JSONL classification file.

    Malformed records are skipped and counted in the returned report;
    unknown label strings are an error because silently dropping them would
    bias the class balance.
    """
    schema = schema or LoadSchema()
    if format not in ("tsv", "jsonl"):
        raise ValueError(f"format must be 'tsv' or 'jsonl', got {format!r}")
    examples = []
    skipped = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        if format == "tsv":
            reader = csv.DictReader(fh, delimiter="\t")
            rows = (dict(r) for r in reader)
        else:
            rows = []
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError:
                    rows.append(None)
        for record in rows:
            if not isinstance(record, dict):
                skipped += 1
                continue
            example = _to_example(record, schema)
            if example is None:
                skipped += 1
                continue
            examples.append(example)
    if not examples:
        raise ValueError(f"no valid records in {path}")
    if skipped:
        log.warning("skipped %d malformed records while loading %s", skipped, path)
    return LoadReport(split=DatasetSplit(name=name, examples=examples), skipped=skipped)


def export_split(split, path, format, schema=None):
    """Write a split in the same shape load_examples reads back."""
    schema = schema or LoadSchema()
    inverse = {v: k for k, v in schema.label_map.items()}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if format == "tsv":
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            header = [schema.text, schema.label]
            if schema.text2 is not None:
                header = [schema.text, schema.text2, schema.label]
            writer.writerow(header)
            for text, label in split.examples:
                if schema.text2 is not None:
                    first, _, second = text.partition(PAIR_JOIN)
                    writer.writerow([first, second, inverse[label]])
                else:
                    writer.writerow([text, inverse[label]])
        elif format == "jsonl":
            for text, label in split.examples:
                record = {schema.text: text, schema.label: inverse[label]}
                if schema.text2 is not None:
                    first, _, second = text.partition(PAIR_JOIN)
                    record = {schema.text: first, schema.text2: second,
                              schema.label: inverse[label]}
                fh.write(json.dumps(record) + "\n")
        else:
            raise ValueError(f"format must be 'tsv' or 'jsonl', got {format!r}")


# -- encoding and evaluation ---------------------------------------------------


def encode_split(split, vocab, max_len):
    """Pad a split to rectangular id and attention arrays."""
    encoded = []
    for text, label in split.examples:
        first, _, second = text.partition(PAIR_JOIN)
        encoded.append(encode_text(vocab, first, max_len, label=label,
                                   text_pair=second or None))
    width = max(len(e.token_ids) for e in encoded)
    ids = np.full((len(encoded), width), PAD, dtype=np.int64)
    for i, e in enumerate(encoded):
        ids[i, : len(e.token_ids)] = e.token_ids
    attention = (ids != PAD).astype(np.float64)
    return ids, attention, split.labels()


def predict(params, ids, attention, batch_size=64):
    """Class predictions with dropout off; number of encoder calls returned."""
    preds = np.empty(ids.shape[0], dtype=np.int64)
    n_batches = 0
    for start in range(0, ids.shape[0], batch_size):
        stop = min(start + batch_size, ids.shape[0])
        width = int(attention[start:stop].sum(axis=1).max())
        hidden = encode(params, ids[start:stop, :width],
                        attention[start:stop, :width], train=False)
        logits = cls_logits(params, hidden)
        preds[start:stop] = np.argmax(logits.data, axis=-1)
        n_batches += 1
    return preds, n_batches


def accuracy(params, ids, attention, labels, batch_size=64,
             return_predictions=False):
    """Fraction of argmax class predictions matching the labels."""
    if ids.shape[0] == 0:
        raise ValueError("cannot evaluate an empty split")
    preds, _ = predict(params, ids, attention, batch_size)
    acc = float(np.mean(preds == labels))
    if return_predictions:
        return acc, preds
    return acc
