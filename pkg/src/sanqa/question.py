"""Question encoders: token vocabulary, LSTM encoder, convolutional encoder.

Both encoders map a token-id sequence to a fixed question vector v_Q. The
LSTM reads the sequence and takes the hidden state at the last real token;
the convolutional encoder applies unigram/bigram/trigram filters over word
embeddings, max-pools each feature map over time and concatenates the pools.

Single-sample functions mirror the update equations one-to-one and are the
reference semantics; the *_batch variants vectorize over a padded batch and
must agree with them (masked positions carry state through unchanged).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, VocabError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

WINDOW_SIZES = (1, 2, 3)

# large negative pad for masked window positions; never survives a max
# against real tanh activations in (-1, 1)
_NEG_INF = -1e30


class Vocab:
    """Dense token <-> id mapping with reserved PAD=0 and UNK=1."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
            raise VocabError(f"vocab must start with {PAD_TOKEN}, {UNK_TOKEN}")
        if len(set(tokens)) != len(tokens):
            raise VocabError("duplicate tokens in vocab")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @classmethod
    def from_words(cls, words):
        """Build a vocab from raw words (sorted for determinism)."""
        extra = sorted(set(words) - {PAD_TOKEN, UNK_TOKEN})
        return cls([PAD_TOKEN, UNK_TOKEN] + extra)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    def encode(self, words):
        return [self.index.get(w, UNK_ID) for w in words]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]


@dataclass
class LstmParams:
    W_e: Tensor  # (|V|, e) embedding rows
    W_xi: Tensor
    W_hi: Tensor
    b_i: Tensor
    W_xf: Tensor
    W_hf: Tensor
    b_f: Tensor
    W_xo: Tensor
    W_ho: Tensor
    b_o: Tensor
    W_xc: Tensor
    W_hc: Tensor
    b_c: Tensor

    @property
    def embed_dim(self):
        return self.W_e.shape[1]

    @property
    def hidden_dim(self):
        return self.W_xi.shape[0]

    @property
    def output_dim(self):
        return self.hidden_dim


@dataclass
class TextCnnParams:
    W_e: Tensor                 # (|V|, e)
    conv_W: tuple               # per window size c: (filters_c, c*e)
    conv_b: tuple               # per window size c: (filters_c,)

    @property
    def embed_dim(self):
        return self.W_e.shape[1]

    @property
    def filter_counts(self):
        return tuple(w.shape[0] for w in self.conv_W)

    @property
    def output_dim(self):
        return sum(self.filter_counts)


def glorot_uniform(rng, shape):
    """Uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_lstm_params(rng, vocab_size, embed_dim, hidden_dim, forget_bias=0.0):
    """Glorot-uniform weights, zero biases; optional positive forget bias."""
    def w(shape):
        return Tensor(glorot_uniform(rng, shape), requires_grad=True)

    def b(n, fill=0.0):
        return Tensor(np.full(n, fill), requires_grad=True)

    d, e = hidden_dim, embed_dim
    return LstmParams(
        W_e=w((vocab_size, e)),
        W_xi=w((d, e)), W_hi=w((d, d)), b_i=b(d),
        W_xf=w((d, e)), W_hf=w((d, d)), b_f=b(d, forget_bias),
        W_xo=w((d, e)), W_ho=w((d, d)), b_o=b(d),
        W_xc=w((d, e)), W_hc=w((d, d)), b_c=b(d),
    )


def init_cnn_params(rng, vocab_size, embed_dim, filter_counts=(128, 256, 256)):
    if len(filter_counts) != len(WINDOW_SIZES):
        raise ContractError(f"need one filter count per window size {WINDOW_SIZES}")
    W_e = Tensor(glorot_uniform(rng, (vocab_size, embed_dim)), requires_grad=True)
    conv_W, conv_b = [], []
    for c, n in zip(WINDOW_SIZES, filter_counts):
        conv_W.append(Tensor(glorot_uniform(rng, (n, c * embed_dim)), requires_grad=True))
        conv_b.append(Tensor(np.zeros(n), requires_grad=True))
    return TextCnnParams(W_e=W_e, conv_W=tuple(conv_W), conv_b=tuple(conv_b))


def embed_tokens(tokens, W_e):
    """Columns of the result are embedding rows: column t = W_e[tokens[t]]."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 1:
        raise ContractError("embed_tokens: need at least one token id")
    if tokens.min() < 0 or tokens.max() >= W_e.shape[0]:
        raise VocabError(f"token id out of range 0..{W_e.shape[0] - 1}")
    return ad.transpose(ad.lookup(W_e, tokens))  # (e, T)


def _embed_one(token_id, p):
    return ad.reshape(ad.lookup(p.W_e, [int(token_id)]), (p.embed_dim,))


def lstm_step(x_t, h_prev, c_prev, p):
    """One LSTM update; returns (h_t, c_t).

    i = sigmoid(W_xi x + W_hi h + b_i)      input gate
    f = sigmoid(W_xf x + W_hf h + b_f)      forget gate
    o = sigmoid(W_xo x + W_ho h + b_o)      output gate
    c = f * c_prev + i * tanh(W_xc x + W_hc h + b_c)
    h = o * tanh(c)
    """
    i = ad.sigmoid(ad.matmul(p.W_xi, x_t) + ad.matmul(p.W_hi, h_prev) + p.b_i)
    f = ad.sigmoid(ad.matmul(p.W_xf, x_t) + ad.matmul(p.W_hf, h_prev) + p.b_f)
    o = ad.sigmoid(ad.matmul(p.W_xo, x_t) + ad.matmul(p.W_ho, h_prev) + p.b_o)
    cand = ad.tanh(ad.matmul(p.W_xc, x_t) + ad.matmul(p.W_hc, h_prev) + p.b_c)
    c = f * c_prev + i * cand
    h = o * ad.tanh(c)
    return h, c


def encode_lstm(tokens, mask, p):
    """v_Q = hidden state after the last real token (position mask-1)."""
    tokens = list(tokens)
    if len(tokens) == 0 or mask < 1:
        raise ContractError("encode_lstm: empty question")
    if mask > len(tokens):
        raise ContractError(f"mask {mask} exceeds sequence length {len(tokens)}")
    d = p.hidden_dim
    h = Tensor(np.zeros(d))
    c = Tensor(np.zeros(d))
    for t in range(mask):
        h, c = lstm_step(_embed_one(tokens[t], p), h, c, p)
    return h


def encode_cnn(tokens, mask, p):
    """Concatenated max-pooled n-gram features, order (unigram, bigram, trigram).

    Sequences shorter than the largest window are padded with PAD up to
    length 3 so the trigram map is defined; PAD embedding columns are zeroed
    before convolution. Each window-size-c map has mask-c+1 positions.
    """
    tokens = list(tokens)
    if mask < 1:
        raise ContractError("encode_cnn: empty question")
    if mask > len(tokens):
        raise ContractError(f"mask {mask} exceeds sequence length {len(tokens)}")
    tokens = tokens[:mask]
    while len(tokens) < max(WINDOW_SIZES):
        tokens.append(PAD_ID)
    mask = len(tokens)

    cols = []
    for t in range(mask):
        x = _embed_one(tokens[t], p)
        if tokens[t] == PAD_ID:
            x = ad.scale(x, 0.0)
        cols.append(x)

    pooled = []
    for c, W_c, b_c in zip(WINDOW_SIZES, p.conv_W, p.conv_b):
        feats = []
        for t in range(mask - c + 1):
            window = cols[t] if c == 1 else ad.concat(cols[t:t + c], axis=0)
            h = ad.tanh(ad.matmul(W_c, window) + b_c)
            feats.append(ad.reshape(h, (W_c.shape[0], 1)))
        fmap = ad.concat(feats, axis=1)                      # (filters_c, mask-c+1)
        pooled.append(ad.reduce_max(fmap, axis=1))
    return ad.concat(pooled, axis=0)


# ---------------------------------------------------------------------------
# batched variants: (B, T) padded token matrix + per-sample mask lengths
# ---------------------------------------------------------------------------

def _check_batch(tokens, masks, p):
    tokens = np.asarray(tokens, dtype=np.int64)
    masks = np.asarray(masks, dtype=np.int64)
    if tokens.ndim != 2 or masks.shape != (tokens.shape[0],):
        raise DimensionError(f"batch tokens {tokens.shape} vs masks {masks.shape}")
    if masks.min() < 1 or masks.max() > tokens.shape[1]:
        raise ContractError("batch masks out of range")
    if tokens.min() < 0 or tokens.max() >= p.W_e.shape[0]:
        raise VocabError("token id out of range")
    return tokens, masks


def encode_lstm_batch(tokens, masks, p):
    """Batched LSTM encoding -> (B, d, 1); equals per-sample encode_lstm.

    States are carried unchanged past each sample's last real token, so the
    final state is the state at position mask-1 regardless of padding.
    """
    tokens, masks = _check_batch(tokens, masks, p)
    B = tokens.shape[0]
    d, e = p.hidden_dim, p.embed_dim
    h = Tensor(np.zeros((B, d, 1)))
    c = Tensor(np.zeros((B, d, 1)))
    b_i = ad.reshape(p.b_i, (d, 1))
    b_f = ad.reshape(p.b_f, (d, 1))
    b_o = ad.reshape(p.b_o, (d, 1))
    b_c = ad.reshape(p.b_c, (d, 1))
    for t in range(int(masks.max())):
        x = ad.reshape(ad.lookup(p.W_e, tokens[:, t]), (B, e, 1))
        i = ad.sigmoid(ad.matmul(p.W_xi, x) + ad.matmul(p.W_hi, h) + b_i)
        f = ad.sigmoid(ad.matmul(p.W_xf, x) + ad.matmul(p.W_hf, h) + b_f)
        o = ad.sigmoid(ad.matmul(p.W_xo, x) + ad.matmul(p.W_ho, h) + b_o)
        cand = ad.tanh(ad.matmul(p.W_xc, x) + ad.matmul(p.W_hc, h) + b_c)
        c_new = f * c + i * cand
        h_new = o * ad.tanh(c_new)
        live = Tensor((t < masks).astype(float).reshape(B, 1, 1))
        dead = Tensor((t >= masks).astype(float).reshape(B, 1, 1))
        h = live * h_new + dead * h
        c = live * c_new + dead * c
    return h


def encode_cnn_batch(tokens, masks, p):
    """Batched convolutional encoding -> (B, sum(filters), 1)."""
    tokens, masks = _check_batch(tokens, masks, p)
    B, T = tokens.shape
    need = max(WINDOW_SIZES)
    if T < need:
        tokens = np.concatenate(
            [tokens, np.full((B, need - T), PAD_ID, dtype=np.int64)], axis=1)
        T = need
    masks = np.maximum(masks, need)
    e = p.embed_dim

    cols = []
    for t in range(T):
        x = ad.reshape(ad.lookup(p.W_e, tokens[:, t]), (B, e, 1))
        keep = Tensor((tokens[:, t] != PAD_ID).astype(float).reshape(B, 1, 1))
        cols.append(x * keep)

    pooled = []
    for c, W_c, b_c in zip(WINDOW_SIZES, p.conv_W, p.conv_b):
        n = W_c.shape[0]
        bias = ad.reshape(b_c, (n, 1))
        feats = []
        for t in range(T - c + 1):
            window = cols[t] if c == 1 else ad.concat(cols[t:t + c], axis=1)
            h = ad.tanh(ad.matmul(W_c, window) + bias)     # (B, n, 1)
            # windows not fully inside the mask are excluded from the max
            gate = np.where(t <= masks - c, 0.0, _NEG_INF).reshape(B, 1, 1)
            feats.append(h + Tensor(gate))
        fmap = ad.concat(feats, axis=2)                    # (B, n, T-c+1)
        pooled.append(ad.reduce_max(fmap, axis=2, keepdims=True))
    return ad.concat(pooled, axis=1)
