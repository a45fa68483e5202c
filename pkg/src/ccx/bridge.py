"""Image-to-text bridge: projector, tokenizer, prompt assembly, and a
small causal transformer decoder with greedy generation.

The fixed prompt carries one placeholder token per temporal image; at
assembly time each placeholder is replaced by the N projected feature
rows, and caption tokens (when training) are appended after the prompt
with the loss restricted to exactly those positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T

PROMPT = ("This is Image1 <image1>. This is Image2 <image2>. "
          "What difference happened from Image1 to Image2?")

SPECIALS = ("<pad>", "<bos>", "<eos>", "<image1>", "<image2>")
PAD, BOS, EOS, IMG1, IMG2 = range(5)

_PUNCT = str.maketrans("", "", ".,;:!?")


def normalize(text):
    return " ".join(text.lower().translate(_PUNCT).split())


def word_tokens(text):
    return normalize(text).split()


class OOVError(KeyError):
    """Raised for out-of-vocabulary words while building training data."""


class Vocabulary:
    def __init__(self, words):
        self.tokens = list(SPECIALS)
        seen = set(self.tokens)
        for w in words:
            if w not in seen:
                seen.add(w)
                self.tokens.append(w)
        if len(self.tokens) > 512:
            raise ValueError(f"vocabulary size {len(self.tokens)} exceeds 512")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def encode(self, text, strict=True):
        ids = []
        for w in word_tokens(text):
            if w in self.index:
                ids.append(self.index[w])
            elif strict:
                raise OOVError(f"out-of-vocabulary word {w!r}")
            else:
                ids.append(PAD)
        return ids

    def decode(self, ids):
        return " ".join(self.tokens[i] for i in ids
                        if self.tokens[i] not in SPECIALS)

    def save(self, path):
        Path(path).write_text("CCVOCAB 1\n" + "\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != "CCVOCAB 1":
            raise ValueError(f"{path}: missing CCVOCAB 1 header")
        toks = lines[1:]
        if tuple(toks[:5]) != SPECIALS:
            raise ValueError(f"{path}: specials out of place")
        return cls(toks[5:])

    @classmethod
    def from_texts(cls, texts):
        words = []
        for t in texts:
            words.extend(word_tokens(t))
        return cls(words)


@dataclass
class DecoderConfig:
    c_model: int = 48
    depth: int = 4
    heads: int = 4
    max_len: int = 48

    def __post_init__(self):
        if self.c_model % self.heads:
            raise ValueError("c_model must be divisible by heads")


@dataclass
class PromptLayout:
    """Prompt template ids plus where the image features get spliced.

    ``span1`` / ``span2`` are (start, length) in the expanded sequence,
    i.e. after each placeholder id is replaced by ``n_tokens`` rows.
    """

    template_ids: list
    n_tokens: int
    span1: tuple
    span2: tuple
    expanded_len: int

    @classmethod
    def build(cls, vocab: Vocabulary, n_tokens, prompt=PROMPT):
        ids = [vocab.index[w] for w in word_tokens(prompt)]
        i1 = ids.index(IMG1)
        i2 = ids.index(IMG2)
        span1 = (i1, n_tokens)
        span2 = (i2 - 1 + n_tokens, n_tokens)
        expanded = len(ids) - 2 + 2 * n_tokens
        return cls(ids, n_tokens, span1, span2, expanded)


def project(store, f1p, f2p, d, c):
    """Shared two-layer MLP (d->c, GELU, c->c) on both streams."""
    if f1p.shape[-1] != d or f2p.shape[-1] != d:
        raise T.ShapeError(f"projector expects width {d}, got {f1p.shape}/{f2p.shape}")

    def one(x):
        h = T.gelu(nn.linear(store, "projector.fc1", x, d, c))
        return nn.linear(store, "projector.fc2", h, c, c)

    return one(f1p), one(f2p)


def _embed_ids(store, ids, vocab_size, c):
    table = store.param("decoder.tok_emb", (vocab_size, c), init="embed")
    return T.embed(table, np.asarray(ids, dtype=np.int64))


def assemble_sequence(store, f1h, f2h, layout: PromptLayout, vocab, cfg: DecoderConfig,
                      caption_ids=None):
    """Build the embedded input sequence.

    Returns (seq [T,c], loss_positions, targets). With ``caption_ids``
    (caption word ids, <eos> included), the inputs <bos> w1..w_{M-1}
    are appended and position prompt_len+j is scored against
    caption_ids[j]; without, only the prompt part is returned.
    """
    n = layout.n_tokens
    if f1h.shape[0] != n or f2h.shape[0] != n:
        raise T.ShapeError(f"feature token count {f1h.shape[0]} != layout span {n}")
    ids = layout.template_ids
    i1 = ids.index(IMG1)
    i2 = ids.index(IMG2)
    c = cfg.c_model
    v = len(vocab)
    parts = [
        _embed_ids(store, ids[:i1], v, c),
        f1h,
        _embed_ids(store, ids[i1 + 1:i2], v, c),
        f2h,
        _embed_ids(store, ids[i2 + 1:], v, c),
    ]
    positions = None
    targets = None
    if caption_ids is not None:
        m = len(caption_ids)
        if m == 0:
            raise ValueError("empty caption")
        if m > cfg.max_len:
            raise ValueError(f"caption length {m} exceeds max_len {cfg.max_len}")
        inputs = [BOS] + list(caption_ids[:-1])
        parts.append(_embed_ids(store, inputs, v, c))
        positions = layout.expanded_len + np.arange(m)
        targets = np.asarray(caption_ids, dtype=np.int64)
    return T.concat(parts, axis=0), positions, targets


def _causal_mask(t):
    return np.triu(np.full((t, t), -1e30), k=1)


def decoder_forward(store, seq, vocab_size, layout, cfg: DecoderConfig):
    """Causal pre-norm transformer over the embedded sequence -> logits."""
    t, c = seq.shape
    cap = layout.expanded_len + 1 + cfg.max_len
    pos = store.param("decoder.pos", (cap, c), init="embed")
    x = seq + _slice_rows(pos, t)
    mask = _causal_mask(t)
    for i in range(cfg.depth):
        x = _decoder_block(store, f"decoder.block{i}", x, c, cfg.heads, mask)
    x = nn.layer_norm(store, "decoder.ln_f", x, c)
    return nn.linear(store, "decoder.head", x, c, vocab_size)


def _slice_rows(t2d, n):
    idx = np.arange(n, dtype=np.int64)
    return T.embed(t2d, idx)


def _decoder_block(store, name, x, c, heads, mask):
    h = nn.layer_norm(store, f"{name}.ln1", x, c)
    a, _ = nn.attention(store, f"{name}.attn", h, h, c, heads, mask=mask)
    x = x + a
    x = x + nn.mlp(store, f"{name}.mlp", nn.layer_norm(store, f"{name}.ln2", x, c),
                   c, 4 * c, c)
    return x


def decode_loss(logits, positions, targets):
    """Mean negative log-likelihood of the caption tokens (one-hot CE)."""
    if positions is None or len(positions) == 0:
        raise ValueError("decode_loss needs a non-empty caption mask")
    logp = T.log_softmax(logits, axis=-1)
    picked = T.take_pairs(logp, positions, targets)
    return -T.tmean(picked)


def generate(store, f1h, f2h, layout, vocab, cfg: DecoderConfig):
    """Deterministic greedy decoding from <bos> until <eos> or max_len.

    Returns (text, token_ids, truncated).
    """
    out_ids = []
    truncated = False
    v = len(vocab)
    c = cfg.c_model
    prompt, _, _ = assemble_sequence(store, f1h, f2h, layout, vocab, cfg)
    while True:
        tail = _embed_ids(store, [BOS] + out_ids, v, c)
        seq = T.concat([prompt, tail], axis=0)
        logits = decoder_forward(store, seq, v, layout, cfg)
        nxt = int(np.argmax(logits.data[-1]))
        if nxt == EOS:
            break
        out_ids.append(nxt)
        if len(out_ids) >= cfg.max_len:
            truncated = True
            break
    return vocab.decode(out_ids), out_ids, truncated
