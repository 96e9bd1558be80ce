"""Whitespace tokenizer with a fixed vocabulary and reserved special tokens.

Tokenization is deliberately word-level: the masking pipeline perturbs whole
tokens, and the diversity analysis reads them back as words. Text is always
lowercased (uncased convention).
"""

from collections import Counter
from dataclasses import dataclass

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")


class Vocab:
    """Immutable token <-> id mapping; ids 0..4 are reserved."""

    def __init__(self, tokens):
        """tokens: non-reserved vocabulary entries, already ordered by id."""
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id_of(self, token):
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx):
        if not 0 <= idx < len(self.id_to_token):
            raise IndexError(f"token id {idx} out of range for vocab of {len(self)}")
        return self.id_to_token[idx]

    def to_json_dict(self):
        return dict(self.token_to_id)

    @classmethod
    def from_json_dict(cls, mapping):
        items = sorted(mapping.items(), key=lambda kv: kv[1])
        for i, (tok, idx) in enumerate(items):
            if idx != i:
                raise ValueError("vocab ids must be contiguous from 0")
        for i, name in enumerate(RESERVED):
            if items[i][0] != name:
                raise ValueError(f"reserved id {i} must be {name}")
        return cls([tok for tok, _ in items[len(RESERVED):]])


@dataclass
class TokenizedExample:
    """An encoded input: ids start with [CLS]; label is a class index."""

    token_ids: list
    label: int
    text: str = ""

    def __post_init__(self):
        if not self.token_ids or self.token_ids[0] != CLS:
            raise ValueError("token_ids must start with [CLS]")


def tokenize(text):
    return text.lower().split()


def build_vocab(corpus, min_count=1):
    """Build a Vocab from an iterable of strings.

    Tokens with count >= min_count enter the vocabulary, ordered by
    descending frequency then lexicographically, so construction is
    deterministic for a given corpus.
    """
    counts = Counter()
    empty = True
    for line in corpus:
        empty = False
        counts.update(tokenize(line))
    if empty:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocab(kept)


def encode(vocab, text, max_len, label=0, text_pair=None):
    """Encode one or two sentences: [CLS] a ... ([SEP] b ...), truncated."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    ids = [CLS]
    ids += [vocab.id_of(t) for t in tokenize(text)]
    if text_pair is not None:
        ids.append(SEP)
        ids += [vocab.id_of(t) for t in tokenize(text_pair)]
    full_text = text if text_pair is None else f"{text}\t{text_pair}"
    return TokenizedExample(token_ids=ids[:max_len], label=label, text=full_text)


def decode(vocab, ids):
    """Render ids as a space-joined string; reserved ids keep bracketed names."""
    return " ".join(vocab.token_of(i) for i in ids)
