"""Model tests: initialization statistics, encoder invariants, head
semantics, weight tying, checkpoint io, and a full-model gradient check."""

import json

import numpy as np
import pytest
from scipy import stats

from masktune import tensor as T
from masktune.model import (CheckpointError, ModelConfig, cls_logits, encode,
                            init_params, load_checkpoint, mlm_logits,
                            parameter_shapes, save_checkpoint)
from masktune.tensor import Tensor
from masktune.tokenizer import CLS, MASK, build_vocab


def small_cfg(**kw):
    base = dict(vocab_size=12, d_model=8, n_layers=1, n_heads=2, d_ff=16,
                max_len=6, num_classes=2)
    base.update(kw)
    return ModelConfig(**base)


def batch(cfg, rng, b=3, t=None):
    t = t or cfg.max_len
    ids = rng.integers(5, cfg.vocab_size, size=(b, t))
    ids[:, 0] = CLS
    attn = np.ones((b, t))
    return ids, attn


# ------------------------------------------------------------------ config

def test_config_validation():
    with pytest.raises(ValueError):
        small_cfg(d_model=9)  # not divisible by n_heads
    with pytest.raises(ValueError):
        small_cfg(vocab_size=0)
    with pytest.raises(ValueError):
        small_cfg(dropout_rate=1.0)


# -------------------------------------------------------------------- init

def test_init_same_seed_bitwise_identical():
    cfg = small_cfg()
    a = init_params(cfg, 7)
    b = init_params(cfg, 7)
    for name, t in a.named():
        assert np.array_equal(t.data, b[name].data), name


def test_init_different_seeds_differ():
    cfg = small_cfg()
    a = init_params(cfg, 0)
    b = init_params(cfg, 1)
    assert not np.array_equal(a["tok_emb"].data, b["tok_emb"].data)


def test_init_weight_statistics():
    # >10k entries in one matrix: sample std within 0.02 +/- 0.002.
    cfg = ModelConfig(vocab_size=200, d_model=64, n_layers=1, n_heads=2,
                      d_ff=64, max_len=8)
    params = init_params(cfg, 3)
    emb = params["tok_emb"].data
    assert emb.size >= 10000
    assert abs(emb.std() - 0.02) < 0.002
    assert abs(emb.mean()) < 0.002


def test_init_gains_ones_biases_zeros():
    params = init_params(small_cfg(), 0)
    for name, t in params.named():
        if name.endswith("_gain"):
            assert np.all(t.data == 1.0), name
        elif name.endswith("bias"):
            assert np.all(t.data == 0.0), name


def test_parameter_shapes_cover_all_tensors():
    cfg = small_cfg(n_layers=2)
    shapes = parameter_shapes(cfg)
    params = init_params(cfg, 0)
    assert set(shapes) == {name for name, _ in params.named()}
    for name, t in params.named():
        assert t.data.shape == shapes[name], name


# ------------------------------------------------------------------ encode

def test_encode_output_shape():
    cfg = small_cfg()
    params = init_params(cfg, 0)
    ids, attn = batch(cfg, np.random.default_rng(0), b=4, t=5)
    h = encode(params, ids, attn)
    assert h.data.shape == (4, 5, cfg.d_model)


def test_encode_rejects_long_sequences():
    cfg = small_cfg(max_len=4)
    params = init_params(cfg, 0)
    ids = np.full((1, 5), CLS)
    with pytest.raises(ValueError):
        encode(params, ids, np.ones((1, 5)))


def test_encode_rejects_out_of_range_ids():
    cfg = small_cfg()
    params = init_params(cfg, 0)
    ids = np.array([[CLS, cfg.vocab_size]])
    with pytest.raises(ValueError):
        encode(params, ids, np.ones((1, 2)))


def test_encode_deterministic_double_forward():
    # dropout_rate 0: two forwards are bitwise identical.
    cfg = small_cfg()
    params = init_params(cfg, 1)
    ids, attn = batch(cfg, np.random.default_rng(1))
    a = encode(params, ids, attn, train=True)
    b = encode(params, ids, attn, train=True)
    assert np.array_equal(a.data, b.data)


def test_encode_batch_permutation_equivariance():
    cfg = small_cfg()
    params = init_params(cfg, 2)
    ids, attn = batch(cfg, np.random.default_rng(2), b=5)
    h = encode(params, ids, attn)
    perm = np.array([3, 0, 4, 1, 2])
    h_perm = encode(params, ids[perm], attn[perm])
    assert np.array_equal(h_perm.data, h.data[perm])


def test_encode_pad_content_does_not_leak():
    # Changing the token id at an attention-masked position must not change
    # any unmasked position's hidden state (keys are excluded exactly).
    cfg = small_cfg()
    params = init_params(cfg, 3)
    rng = np.random.default_rng(3)
    ids, attn = batch(cfg, rng, b=2, t=5)
    attn[:, 4] = 0.0
    h1 = encode(params, ids, attn)
    ids2 = ids.copy()
    ids2[:, 4] = 5  # different content behind the pad mask
    h2 = encode(params, ids2, attn)
    assert np.array_equal(h1.data[:, :4], h2.data[:, :4])
    logits1 = cls_logits(params, h1)
    logits2 = cls_logits(params, h2)
    assert np.array_equal(logits1.data, logits2.data)


def test_encode_dropout_requires_rng():
    cfg = small_cfg(dropout_rate=0.5)
    params = init_params(cfg, 0)
    ids, attn = batch(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        encode(params, ids, attn, train=True, dropout_rng=None)
    # Eval mode never needs one.
    encode(params, ids, attn, train=False)


# ------------------------------------------------------------------- heads

def test_mlm_logits_zero_hidden_gives_bias():
    cfg = small_cfg()
    params = init_params(cfg, 4)
    params["mlm_bias"].data[:] = np.random.default_rng(4).normal(
        size=cfg.vocab_size)
    hidden = Tensor(np.zeros((2, 3, cfg.d_model)))
    out = mlm_logits(params, hidden, np.array([0, 1]), np.array([2, 0]))
    assert out.data.shape == (2, cfg.vocab_size)
    for row in out.data:
        assert np.array_equal(row, params["mlm_bias"].data)


def test_cls_logits_zero_hidden_gives_bias():
    cfg = small_cfg()
    params = init_params(cfg, 5)
    params["cls_bias"].data[:] = np.array([0.3, -0.8])
    hidden = Tensor(np.zeros((3, 4, cfg.d_model)))
    out = cls_logits(params, hidden)
    assert out.data.shape == (3, cfg.num_classes)
    for row in out.data:
        assert np.array_equal(row, params["cls_bias"].data)


def test_mlm_logits_position_validation():
    cfg = small_cfg()
    params = init_params(cfg, 0)
    hidden = Tensor(np.zeros((2, 3, cfg.d_model)))
    with pytest.raises(ValueError):
        mlm_logits(params, hidden, np.array([0, 1]), np.array([0]))
    with pytest.raises(IndexError):
        mlm_logits(params, hidden, np.array([2]), np.array([0]))
    with pytest.raises(IndexError):
        mlm_logits(params, hidden, np.array([0]), np.array([3]))


def test_weight_tying_row_to_column():
    # Perturbing embedding row v shifts logit column v by h . delta and
    # leaves every other column untouched: rows and columns are the same
    # storage.
    cfg = small_cfg()
    params = init_params(cfg, 6)
    rng = np.random.default_rng(6)
    hidden = Tensor(rng.normal(size=(1, 2, cfg.d_model)))
    rows, cols = np.array([0]), np.array([1])
    before = mlm_logits(params, hidden, rows, cols).data.copy()
    v = 7
    delta = rng.normal(size=cfg.d_model)
    params["tok_emb"].data[v] += delta
    after = mlm_logits(params, hidden, rows, cols).data
    expect_shift = float(hidden.data[0, 1] @ delta)
    assert abs((after[0, v] - before[0, v]) - expect_shift) < 1e-12
    others = np.arange(cfg.vocab_size) != v
    assert np.array_equal(after[0, others], before[0, others])


def test_weight_tying_gradient_reaches_embeddings():
    cfg = small_cfg()
    params = init_params(cfg, 7)
    hidden = Tensor(np.random.default_rng(7).normal(size=(1, 2, cfg.d_model)))
    logits = mlm_logits(params, hidden, np.array([0]), np.array([0]))
    loss = T.cross_entropy(logits, np.array([5]))
    params.zero_grad()
    loss.backward()
    assert params["tok_emb"].grad is not None
    assert np.any(params["tok_emb"].grad != 0.0)


def test_untrained_argmax_approximately_uniform():
    # Uniformity is a property of the init distribution, so predictions are
    # pooled over fresh untrained models; any single fixed projection has a
    # small but detectable row-norm bias at this sample size.
    V, d = 30, 64
    counts = np.zeros(V)
    for k in range(40):
        cfg = ModelConfig(vocab_size=V, d_model=d, n_layers=1, n_heads=2,
                          d_ff=64, max_len=16)
        params = init_params(cfg, k)
        rng = np.random.default_rng(7000 + k)
        h = rng.normal(size=(25, 1, d))
        logits = mlm_logits(params, Tensor(h), np.arange(25),
                            np.zeros(25, dtype=np.int64))
        counts += np.bincount(logits.data.argmax(axis=1), minlength=V)
    assert counts.sum() == 1000
    _, p = stats.chisquare(counts)
    assert p > 0.001


# ------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bitwise(tmp_path):
    cfg = small_cfg()
    params = init_params(cfg, 8)
    vocab = build_vocab(["alpha beta gamma delta epsilon zeta eta"])
    assert len(vocab) == cfg.vocab_size
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, vocab)
    loaded, vocab2 = load_checkpoint(path)
    assert loaded.config == cfg
    assert vocab2.id_to_token == vocab.id_to_token
    for name, t in params.named():
        assert np.array_equal(loaded[name].data, t.data), name


def test_checkpoint_truncated_file(tmp_path):
    cfg = small_cfg()
    params = init_params(cfg, 9)
    vocab = build_vocab(["alpha beta gamma delta epsilon zeta eta"])
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, vocab)
    raw = path.read_text()
    path.write_text(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_names_tensor(tmp_path):
    cfg = small_cfg()
    params = init_params(cfg, 10)
    vocab = build_vocab(["alpha beta gamma delta epsilon zeta eta"])
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, vocab)
    doc = json.loads(path.read_text())
    doc["params"]["cls_w"] = doc["params"]["cls_w"][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path)
    assert "cls_w" in str(exc.value)


def test_checkpoint_missing_tensor(tmp_path):
    cfg = small_cfg()
    params = init_params(cfg, 11)
    vocab = build_vocab(["alpha beta gamma delta epsilon zeta eta"])
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, vocab)
    doc = json.loads(path.read_text())
    del doc["params"]["mlm_bias"]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path)
    assert "mlm_bias" in str(exc.value)


def test_checkpoint_missing_section(tmp_path):
    path = tmp_path / "ckpt.json"
    path.write_text(json.dumps({"config": {}, "vocab": {}}))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# -------------------------------------------------------- full-model grads

def test_full_model_gradient_check():
    # Every parameter tensor of a tiny model against finite differences on
    # a 2-example batch with both loss heads active.
    cfg = ModelConfig(vocab_size=10, d_model=8, n_layers=1, n_heads=2,
                      d_ff=12, max_len=4, num_classes=2)
    params = init_params(cfg, 12)
    rng = np.random.default_rng(12)
    ids = np.array([[CLS, 5, MASK, 6], [CLS, MASK, 7, 0]])
    attn = np.array([[1.0, 1, 1, 1], [1, 1, 1, 0]])
    rows, cols = np.array([0, 1]), np.array([2, 1])
    targets = np.array([8, 9])
    labels = np.array([0, 1])

    def loss_fn(_t):
        h = encode(params, ids, attn)
        l_mlm = T.cross_entropy(mlm_logits(params, h, rows, cols), targets)
        l_ft = T.cross_entropy(cls_logits(params, h), labels)
        return l_mlm * 0.6 + l_ft * 0.4

    worst = 0.0
    for name, t in params.named():
        params.zero_grad()
        err = T.grad_check(loss_fn, t)
        worst = max(worst, err)
        assert err < 1e-4, f"{name}: {err}"
    assert worst < 1e-4
