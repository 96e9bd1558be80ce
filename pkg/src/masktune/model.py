"""Micro transformer encoder with a weight-tied MLM head and a [CLS] classifier.

Pre-activation (pre-LN) stack: each sublayer normalizes its input, the
residual stream stays unnormalized until a final layer norm. The MLM output
projection reuses the token-embedding matrix (transposed) plus its own bias,
so embedding rows and output logit columns are the same parameters.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from masktune import tensor as T
from masktune.tensor import Tensor
from masktune.tokenizer import Vocab


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 32
    num_classes: int = 2
    dropout_rate: float = 0.0

    def __post_init__(self):
        if min(self.vocab_size, self.d_model, self.n_layers, self.n_heads,
               self.d_ff, self.max_len, self.num_classes) <= 0:
            raise ValueError("all model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by "
                             f"n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


INIT_STD = 0.02


class ModelParameters:
    """Named parameter tensors for one model instance."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = tensors  # name -> Tensor, insertion order fixed

    def __getitem__(self, name):
        return self.tensors[name]

    def named(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy_values(self):
        return {name: t.data.copy() for name, t in self.named()}


def parameter_shapes(cfg):
    """The full parameter map; checkpoint loading validates against this."""
    shapes = {
        "tok_emb": (cfg.vocab_size, cfg.d_model),
        "pos_emb": (cfg.max_len, cfg.d_model),
    }
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        shapes[p + "ln1_gain"] = (cfg.d_model,)
        shapes[p + "ln1_bias"] = (cfg.d_model,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[p + w] = (cfg.d_model, cfg.d_model)
            shapes[p + w + "_bias"] = (cfg.d_model,)
        shapes[p + "ln2_gain"] = (cfg.d_model,)
        shapes[p + "ln2_bias"] = (cfg.d_model,)
        shapes[p + "ff1"] = (cfg.d_model, cfg.d_ff)
        shapes[p + "ff1_bias"] = (cfg.d_ff,)
        shapes[p + "ff2"] = (cfg.d_ff, cfg.d_model)
        shapes[p + "ff2_bias"] = (cfg.d_model,)
    shapes["ln_final_gain"] = (cfg.d_model,)
    shapes["ln_final_bias"] = (cfg.d_model,)
    shapes["mlm_bias"] = (cfg.vocab_size,)
    shapes["cls_w"] = (cfg.d_model, cfg.num_classes)
    shapes["cls_bias"] = (cfg.num_classes,)
    return shapes


def init_params(cfg, seed):
    """Weight matrices ~ N(0, 0.02); biases 0; layer-norm gain 1, bias 0."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith("_gain"):
            data = np.ones(shape)
        elif name.endswith("bias"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, INIT_STD, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParameters(cfg, tensors)


def _linear(x, w, b):
    """Affine map over the last axis; leading axes are flattened for matmul."""
    shape = x.data.shape
    d_in, d_out = w.data.shape
    flat = x if len(shape) == 2 else x.reshape(-1, d_in)
    out = T.matmul(flat, w) + b
    if len(shape) == 2:
        return out
    return out.reshape(*shape[:-1], d_out)


def _attention(params, prefix, x, additive_mask, cfg):
    b, t, d = x.data.shape
    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    q = _linear(x, params[prefix + "wq"], params[prefix + "wq_bias"])
    k = _linear(x, params[prefix + "wk"], params[prefix + "wk_bias"])
    v = _linear(x, params[prefix + "wv"], params[prefix + "wv_bias"])
    q = q.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
    k = k.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
    v = v.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
    scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    scores = scores + additive_mask
    weights = T.softmax(scores, axis=-1)
    mixed = T.matmul(weights, v)  # [b, h, t, dh]
    mixed = mixed.transpose(0, 2, 1, 3).reshape(b, t, d)
    return _linear(mixed, params[prefix + "wo"], params[prefix + "wo_bias"])


def encode(params, token_ids, attention_mask, train=False, dropout_rng=None):
    """Run the encoder stack.

    token_ids: int array [b, t]; attention_mask: 1 for real tokens, 0 for
    [PAD] (those keys are excluded from attention via a -inf additive mask).
    Dropout fires only with train=True and a positive configured rate.
    """
    cfg = params.config
    ids = np.asarray(token_ids, dtype=np.int64)
    b, t = ids.shape
    if t > cfg.max_len:
        raise ValueError(f"sequence length {t} exceeds max_len {cfg.max_len}")
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise ValueError("token id out of range for the model vocabulary")
    amask = np.asarray(attention_mask, dtype=np.float64).reshape(b, t)

    emb = T.take_rows(params["tok_emb"], ids.reshape(-1)).reshape(b, t, cfg.d_model)
    pos = T.take_rows(params["pos_emb"], np.arange(t)).reshape(1, t, cfg.d_model)
    x = emb + pos

    additive = np.where(amask > 0, 0.0, -np.inf).reshape(b, 1, 1, t)
    additive = Tensor(additive)

    use_dropout = train and cfg.dropout_rate > 0.0
    if use_dropout and dropout_rng is None:
        raise ValueError("training with dropout requires a dropout_rng")

    for i in range(cfg.n_layers):
        p = f"layer{i}."
        a = T.layer_norm(x, params[p + "ln1_gain"], params[p + "ln1_bias"])
        a = _attention(params, p, a, additive, cfg)
        if use_dropout:
            a = T.dropout(a, cfg.dropout_rate, dropout_rng)
        x = x + a
        m = T.layer_norm(x, params[p + "ln2_gain"], params[p + "ln2_bias"])
        m = _linear(m, params[p + "ff1"], params[p + "ff1_bias"])
        m = T.gelu(m)
        m = _linear(m, params[p + "ff2"], params[p + "ff2_bias"])
        if use_dropout:
            m = T.dropout(m, cfg.dropout_rate, dropout_rng)
        x = x + m

    return T.layer_norm(x, params["ln_final_gain"], params["ln_final_bias"])


def mlm_logits(params, hidden, rows, cols):
    """Tied-embedding vocabulary logits at the given (row, col) positions.

    rows/cols index the batch and sequence axes of ``hidden``; one entry per
    masked position.
    """
    b, t, d = hidden.data.shape
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape:
        raise ValueError("rows and cols must have equal length")
    if rows.size and (rows.min() < 0 or rows.max() >= b
                      or cols.min() < 0 or cols.max() >= t):
        raise IndexError("masked position out of range for hidden states")
    flat = T.reshape(hidden, (b * t, d))
    picked = T.take_rows(flat, rows * t + cols)  # [n_pos, d]
    emb_t = T.transpose(params["tok_emb"], (1, 0))
    return T.matmul(picked, emb_t) + params["mlm_bias"]


def cls_logits(params, hidden):
    """Classifier logits from the position-0 ([CLS]) hidden state."""
    b, t, d = hidden.data.shape
    flat = T.reshape(hidden, (b * t, d))
    pooled = T.take_rows(flat, np.arange(b) * t)
    return T.matmul(pooled, params["cls_w"]) + params["cls_bias"]


# -- checkpoint io ------------------------------------------------------------


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params, vocab):
    doc = {
        "config": asdict(params.config),
        "vocab": vocab.to_json_dict(),
        "params": {name: t.data.reshape(-1).tolist() for name, t in params.named()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Load a checkpoint; shape validation names the offending tensor."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    for key in ("config", "vocab", "params"):
        if key not in doc:
            raise CheckpointError(f"checkpoint missing {key!r} section")
    cfg = ModelConfig(**doc["config"])
    vocab = Vocab.from_json_dict(doc["vocab"])
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(f"vocab size {len(vocab)} does not match "
                              f"config vocab_size {cfg.vocab_size}")
    expected = parameter_shapes(cfg)
    tensors = {}
    for name, shape in expected.items():
        if name not in doc["params"]:
            raise CheckpointError(f"checkpoint missing tensor {name!r}")
        flat = np.asarray(doc["params"][name], dtype=np.float64)
        want = int(np.prod(shape))
        if flat.size != want:
            raise CheckpointError(
                f"tensor {name!r} has {flat.size} values, expected {want} "
                f"for shape {shape}")
        tensors[name] = Tensor(flat.reshape(shape), requires_grad=True)
    return ModelParameters(cfg, tensors), vocab
