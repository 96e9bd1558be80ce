"""Synthetic task oracles and file-loader round trips.

Two bag-of-words oracles never touch the model: majority vote over signal
tokens must score exactly 1.0 on every split, and a shortcut-only detector
must land within 0.02 of rho on n=1000 splits.
"""

import numpy as np
import pytest

from masktune.data import (LoadSchema, SPLIT_NAMES, SpuriousTaskSpec,
                           accuracy, encode_split, export_split,
                           gen_spurious_task, load_examples, predict)
from masktune.model import ModelConfig, init_params
from masktune.tokenizer import build_vocab


DEFAULT = SpuriousTaskSpec()


@pytest.fixture(scope="module")
def default_task():
    return gen_spurious_task(DEFAULT)


def signal_vote(spec, text):
    pos = set(spec.signal_tokens(1))
    neg = set(spec.signal_tokens(0))
    toks = text.split()
    n_pos = sum(t in pos for t in toks)
    n_neg = sum(t in neg for t in toks)
    return 1 if n_pos > n_neg else 0


# ------------------------------------------------------------- spec checks

def test_spec_validation():
    with pytest.raises(ValueError):
        SpuriousTaskSpec(signal_tokens_per_sentence=2)  # even k
    with pytest.raises(ValueError):
        SpuriousTaskSpec(rho_train=1.2)
    with pytest.raises(ValueError):
        SpuriousTaskSpec(signal_tokens_per_sentence=3,
                         min_sentence_len=3)  # cannot fit k+1
    with pytest.raises(ValueError):
        SpuriousTaskSpec(max_sentence_len=5, min_sentence_len=8)
    with pytest.raises(ValueError):
        SpuriousTaskSpec(n_dev=999)  # odd size breaks balance


def test_token_inventories_disjoint():
    spec = DEFAULT
    pos = set(spec.signal_tokens(1))
    neg = set(spec.signal_tokens(0))
    fill = set(spec.filler_tokens())
    assert not pos & neg
    assert not (pos | neg) & fill
    assert spec.shortcut_token not in pos | neg | fill


# -------------------------------------------------------------- generation

def test_all_splits_present_with_sizes(default_task):
    assert set(default_task) == set(SPLIT_NAMES)
    assert len(default_task["train"]) == DEFAULT.n_train
    assert len(default_task["dev"]) == DEFAULT.n_dev
    assert len(default_task["test_indist"]) == DEFAULT.n_test_indist
    assert len(default_task["test_ood"]) == DEFAULT.n_test_ood


def test_splits_are_class_balanced(default_task):
    for split in default_task.values():
        labels = split.labels()
        assert labels.sum() * 2 == len(labels), split.name


def test_example_ids_globally_unique(default_task):
    all_ids = np.concatenate([s.ids for s in default_task.values()])
    assert len(np.unique(all_ids)) == len(all_ids)


def test_generation_bitwise_reproducible(default_task):
    again = gen_spurious_task(SpuriousTaskSpec())
    for name in SPLIT_NAMES:
        assert again[name].examples == default_task[name].examples
        assert np.array_equal(again[name].ids, default_task[name].ids)


def test_different_seed_changes_data():
    a = gen_spurious_task(SpuriousTaskSpec(n_train=50, n_dev=10,
                                           n_test_indist=10, n_test_ood=10))
    b = gen_spurious_task(SpuriousTaskSpec(n_train=50, n_dev=10,
                                           n_test_indist=10, n_test_ood=10,
                                           seed=1))
    assert a["train"].examples != b["train"].examples


def test_sentence_lengths_within_bounds(default_task):
    # The shortcut token may exceed the drawn length by design, never by
    # more than one token.
    for split in default_task.values():
        for text, _ in split.examples:
            n = len(text.split())
            assert DEFAULT.min_sentence_len <= n <= DEFAULT.max_sentence_len + 1


def test_signal_oracle_scores_exactly_one(default_task):
    # The signal majority is drawn from {k//2+1 .. k}, so majority vote
    # over signal tokens recovers every label on every split.
    for split in default_task.values():
        labels = split.labels()
        votes = np.array([signal_vote(DEFAULT, text)
                          for text in split.texts()])
        assert np.array_equal(votes, labels), split.name


def test_shortcut_oracle_scores_rho(default_task):
    # Predicting from shortcut presence alone scores rho in expectation.
    for name, rho in (("test_indist", DEFAULT.rho_train),
                      ("test_ood", DEFAULT.rho_ood)):
        split = default_task[name]
        labels = split.labels()
        votes = np.array([1 if DEFAULT.shortcut_token in text.split() else 0
                          for text in split.texts()])
        acc = float(np.mean(votes == labels))
        assert abs(acc - rho) < 0.02, (name, acc, rho)


def test_rho_one_forces_shortcut_alignment():
    spec = SpuriousTaskSpec(rho_train=1.0, n_train=200, n_dev=10,
                            n_test_indist=10, n_test_ood=10)
    split = gen_spurious_task(spec)["train"]
    for text, label in split.examples:
        has = spec.shortcut_token in text.split()
        assert has == (label == 1)


# ------------------------------------------------------------ file loaders

def small_split():
    spec = SpuriousTaskSpec(n_train=40, n_dev=10, n_test_indist=10,
                            n_test_ood=10)
    return gen_spurious_task(spec)["train"]


def test_export_load_round_trip_tsv(tmp_path):
    split = small_split()
    path = tmp_path / "train.tsv"
    export_split(split, path, "tsv")
    report = load_examples(path, "tsv", name="train")
    assert report.skipped == 0
    assert report.split.examples == split.examples


def test_export_load_round_trip_jsonl(tmp_path):
    split = small_split()
    path = tmp_path / "train.jsonl"
    export_split(split, path, "jsonl")
    report = load_examples(path, "jsonl", name="train")
    assert report.skipped == 0
    assert report.split.examples == split.examples


def test_load_skips_malformed_jsonl(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text": "good one", "label": "pos"}\n'
                    'not json at all\n'
                    '{"text": "", "label": "neg"}\n'
                    '{"label": "neg"}\n'
                    '{"text": "another fine row", "label": "neg"}\n')
    report = load_examples(path, "jsonl")
    assert report.skipped == 3
    assert len(report.split) == 2


def test_load_skips_malformed_tsv(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("text\tlabel\n"
                    "good one\tpos\n"
                    "\tneg\n"
                    "another fine row\tneg\n")
    report = load_examples(path, "tsv")
    assert report.skipped == 1
    assert len(report.split) == 2


def test_load_unknown_label_is_an_error(tmp_path):
    path = tmp_path / "labels.tsv"
    path.write_text("text\tlabel\nhello there\tmaybe\n")
    with pytest.raises(ValueError) as exc:
        load_examples(path, "tsv")
    assert "maybe" in str(exc.value)
    assert "neg" in str(exc.value)  # the message shows the accepted map


def test_load_all_malformed_is_an_error(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("garbage\nmore garbage\n")
    with pytest.raises(ValueError):
        load_examples(path, "jsonl")


def test_load_rejects_unknown_format(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("text,label\n")
    with pytest.raises(ValueError):
        load_examples(path, "csv")


def test_pair_schema_round_trip(tmp_path):
    schema = LoadSchema(text="premise", text2="hypothesis", label="gold",
                        label_map={"no": 0, "yes": 1})
    from masktune.data import DatasetSplit, PAIR_JOIN
    examples = [(f"first part{PAIR_JOIN}second part", 1),
                (f"one more{PAIR_JOIN}and another", 0)]
    split = DatasetSplit(name="pairs", examples=examples)
    for fmt in ("tsv", "jsonl"):
        path = tmp_path / f"pairs.{fmt}"
        export_split(split, path, fmt, schema=schema)
        report = load_examples(path, fmt, schema=schema, name="pairs")
        assert report.split.examples == examples, fmt


def test_custom_label_map(tmp_path):
    path = tmp_path / "nums.jsonl"
    path.write_text('{"text": "alpha", "label": "0"}\n'
                    '{"text": "beta", "label": "1"}\n')
    schema = LoadSchema(label_map={"0": 0, "1": 1})
    report = load_examples(path, "jsonl", schema=schema)
    assert [label for _, label in report.split.examples] == [0, 1]


# --------------------------------------------------- encoding and accuracy

def test_encode_split_shapes_and_padding():
    split = small_split()
    vocab = build_vocab(split.texts())
    ids, attention, labels = encode_split(split, vocab, max_len=16)
    assert ids.shape == attention.shape
    assert ids.shape[0] == len(split)
    assert labels.shape[0] == len(split)
    # attention is exactly the non-PAD map
    assert np.array_equal(attention, (ids != 0).astype(np.float64))
    # row 0 starts with [CLS]
    assert np.all(ids[:, 0] == 2)


def test_constant_classifier_scores_half_on_balanced_split():
    split = small_split()
    vocab = build_vocab(split.texts())
    ids, attention, labels = encode_split(split, vocab, max_len=16)
    cfg = ModelConfig(vocab_size=len(vocab), d_model=8, n_layers=1,
                      n_heads=2, d_ff=16, max_len=16)
    params = init_params(cfg, 0)
    # Zero the classifier and bias toward class 0: every prediction is 0.
    params["cls_w"].data[:] = 0.0
    params["cls_bias"].data[:] = np.array([1.0, 0.0])
    acc, preds = accuracy(params, ids, attention, labels,
                          return_predictions=True)
    assert np.all(preds == 0)
    assert acc == 0.5


def test_accuracy_recount_matches_returned_predictions():
    split = small_split()
    vocab = build_vocab(split.texts())
    ids, attention, labels = encode_split(split, vocab, max_len=16)
    cfg = ModelConfig(vocab_size=len(vocab), d_model=8, n_layers=1,
                      n_heads=2, d_ff=16, max_len=16)
    params = init_params(cfg, 1)
    acc, preds = accuracy(params, ids, attention, labels,
                          return_predictions=True)
    assert acc == float(np.mean(preds == labels))
    assert 0.0 <= acc <= 1.0


def test_predict_batching_invariant():
    # Predictions must not depend on the evaluation batch size.
    split = small_split()
    vocab = build_vocab(split.texts())
    ids, attention, labels = encode_split(split, vocab, max_len=16)
    cfg = ModelConfig(vocab_size=len(vocab), d_model=8, n_layers=1,
                      n_heads=2, d_ff=16, max_len=16)
    params = init_params(cfg, 2)
    p1, n1 = predict(params, ids, attention, batch_size=7)
    p2, n2 = predict(params, ids, attention, batch_size=40)
    assert np.array_equal(p1, p2)
    assert n1 == int(np.ceil(len(split) / 7))
    assert n2 == 1


def test_accuracy_empty_split_errors():
    cfg = ModelConfig(vocab_size=8, d_model=8, n_layers=1, n_heads=2,
                      d_ff=16, max_len=8)
    params = init_params(cfg, 0)
    with pytest.raises(ValueError):
        accuracy(params, np.zeros((0, 4), dtype=np.int64),
                 np.zeros((0, 4)), np.zeros(0, dtype=np.int64))
