"""Stacked visual attention over region features, plus the answer classifier.

Each attention layer scores every image region against the current query
vector, softmaxes the scores into a distribution p over regions, aggregates
the region columns into a visual summary, and refines the query:

    h   = tanh(W_IA v_I  (+)  (W_QA u_prev + b_A))
    p   = softmax(W_P h + b_P)          over the m regions
    vt  = sum_i p_i v_i
    u   = vt + u_prev

The query starts at the question vector (u_0 = v_Q) and after K layers the
final query feeds a softmax classifier over the answer vocabulary.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import question as qst
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .image import ImageProjection, project_regions, project_regions_batch
from .question import glorot_uniform

MAX_LAYERS = 4


@dataclass
class ModelConfig:
    encoder: str = "lstm"            # "lstm" | "cnn"
    vocab_size: int = 2
    answer_size: int = 2
    embed_dim: int = 64
    hidden_dim: int = 64             # question-vector dim d (cnn: sum of filters)
    attn_hidden: int = 0             # k; 0 means "same as hidden_dim"
    layers: int = 2                  # K
    d_raw: int = 12
    cnn_filters: tuple = (16, 24, 24)

    def __post_init__(self):
        if isinstance(self.cnn_filters, str):
            self.cnn_filters = tuple(int(x) for x in self.cnn_filters.split(",") if x)
        else:
            self.cnn_filters = tuple(int(x) for x in self.cnn_filters)
        if self.encoder not in ("lstm", "cnn"):
            raise ContractError(f"unknown encoder '{self.encoder}'")
        if not 1 <= self.layers <= MAX_LAYERS:
            raise ContractError(f"attention layers must be in 1..{MAX_LAYERS}")
        if self.answer_size < 2:
            raise ContractError("answer vocabulary must have at least 2 entries")
        if self.encoder == "cnn":
            self.hidden_dim = sum(self.cnn_filters)

    @property
    def attn_dim(self):
        return self.attn_hidden if self.attn_hidden > 0 else self.hidden_dim

    def to_kv(self):
        lines = []
        for key in ("encoder", "vocab_size", "answer_size", "embed_dim", "hidden_dim",
                    "attn_hidden", "layers", "d_raw"):
            lines.append(f"{key}={getattr(self, key)}")
        lines.append("cnn_filters=" + ",".join(str(n) for n in self.cnn_filters))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text):
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            kv[key] = value
        ints = ("vocab_size", "answer_size", "embed_dim", "hidden_dim",
                "attn_hidden", "layers", "d_raw")
        args = {k: int(kv[k]) for k in ints}
        return cls(encoder=kv["encoder"], cnn_filters=kv["cnn_filters"], **args)

    def tag(self):
        return f"SAN({self.layers}, {self.encoder.upper()})"


@dataclass
class AttentionLayerParams:
    W_IA: Tensor  # (k, d) image side
    W_QA: Tensor  # (k, d) query side
    b_A: Tensor   # (k,)
    W_P: Tensor   # (1, k)
    b_P: Tensor   # (1,) scalar bias; constant shift, cancels in the softmax


@dataclass
class ClassifierParams:
    W_u: Tensor   # (|A|, d)
    b_u: Tensor   # (|A|,)


@dataclass
class AttentionTrace:
    """Per-layer attention record of one forward pass."""

    u0: np.ndarray                       # question vector v_Q
    p: list = field(default_factory=list)        # per layer: (m,) distribution
    v_tilde: list = field(default_factory=list)  # per layer: (d,) visual summary
    u: list = field(default_factory=list)        # per layer: (d,) refined query
    logits: np.ndarray = None
    p_ans: np.ndarray = None


class SanModel:
    """All learnable parameters of one stacked attention network."""

    def __init__(self, config, encoder_params, projection, attn_layers, classifier):
        self.config = config
        self.encoder_params = encoder_params
        self.projection = projection
        self.attn_layers = attn_layers
        self.classifier = classifier

    def named_parameters(self):
        out = {}
        enc = self.encoder_params
        out["embed.W_e"] = enc.W_e
        if self.config.encoder == "lstm":
            for gate in ("i", "f", "o", "c"):
                out[f"lstm.W_x{gate}"] = getattr(enc, f"W_x{gate}")
                out[f"lstm.W_h{gate}"] = getattr(enc, f"W_h{gate}")
                out[f"lstm.b_{gate}"] = getattr(enc, f"b_{gate}")
        else:
            for c, (w, b) in enumerate(zip(enc.conv_W, enc.conv_b)):
                out[f"cnn.W_conv{c + 1}"] = w
                out[f"cnn.b_conv{c + 1}"] = b
        out["proj.W_I"] = self.projection.W_I
        out["proj.b_I"] = self.projection.b_I
        for k, layer in enumerate(self.attn_layers):
            for name in ("W_IA", "W_QA", "b_A", "W_P", "b_P"):
                out[f"attn{k}.{name}"] = getattr(layer, name)
        out["cls.W_u"] = self.classifier.W_u
        out["cls.b_u"] = self.classifier.b_u
        return out

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()


def build_model(config, seed=0):
    """Initialize a model: Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    if config.encoder == "lstm":
        enc = qst.init_lstm_params(rng, config.vocab_size, config.embed_dim,
                                   config.hidden_dim)
    else:
        enc = qst.init_cnn_params(rng, config.vocab_size, config.embed_dim,
                                  config.cnn_filters)
    d, k = config.hidden_dim, config.attn_dim

    def w(shape):
        return Tensor(glorot_uniform(rng, shape), requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n), requires_grad=True)

    projection = ImageProjection(W_I=w((d, config.d_raw)), b_I=b(d))
    layers = [
        AttentionLayerParams(W_IA=w((k, d)), W_QA=w((k, d)), b_A=b(k),
                             W_P=w((1, k)), b_P=b(1))
        for _ in range(config.layers)
    ]
    classifier = ClassifierParams(W_u=w((config.answer_size, d)), b_u=b(config.answer_size))
    return SanModel(config, enc, projection, layers, classifier)


def attention_step(v_I, u_prev, layer):
    """Attention distribution over the m regions given the current query."""
    if v_I.ndim != 2 or u_prev.ndim != 1 or v_I.shape[0] != u_prev.shape[0]:
        raise DimensionError(f"attention_step: v_I {v_I.shape} vs query {u_prev.shape}")
    query = ad.matmul(layer.W_QA, u_prev) + layer.b_A
    h = ad.tanh(ad.oplus(ad.matmul(layer.W_IA, v_I), query))
    logits = ad.matmul(layer.W_P, h) + layer.b_P          # (1, m)
    return ad.reshape(ad.softmax(logits, axis=1), (v_I.shape[1],))


def aggregate_and_refine(v_I, p, u_prev):
    """Visual summary vt = sum_i p_i v_i and refined query u = vt + u_prev."""
    total = float(np.sum(p.values if isinstance(p, Tensor) else p))
    if abs(total - 1.0) > 1e-6:
        raise ContractError(f"attention weights sum to {total}, not 1")
    v_tilde = ad.matmul(v_I, p)
    return v_tilde, v_tilde + u_prev


def predict_answer(p_ans):
    """Most probable answer id; exact ties go to the lowest index."""
    values = p_ans.values if isinstance(p_ans, Tensor) else np.asarray(p_ans)
    if values.size == 0:
        raise ContractError("predict_answer: empty distribution")
    return int(np.argmax(values))


def encode_question(tokens, mask, model):
    if model.config.encoder == "lstm":
        return qst.encode_lstm(tokens, mask, model.encoder_params)
    return qst.encode_cnn(tokens, mask, model.encoder_params)


def forward(model, fmap, tokens, mask):
    """Single-sample forward pass; returns (p_ans tensor, AttentionTrace)."""
    v_Q = encode_question(tokens, mask, model)
    v_I = project_regions(fmap, model.projection)
    trace = AttentionTrace(u0=v_Q.values.copy())
    u = v_Q
    for layer in model.attn_layers:
        p = attention_step(v_I, u, layer)
        v_tilde, u = aggregate_and_refine(v_I, p, u)
        trace.p.append(p.values.copy())
        trace.v_tilde.append(v_tilde.values.copy())
        trace.u.append(u.values.copy())
    logits = ad.matmul(model.classifier.W_u, u) + model.classifier.b_u
    p_ans = ad.softmax(logits, axis=0)
    trace.logits = logits.values.copy()
    trace.p_ans = p_ans.values.copy()
    return p_ans, trace


def forward_batch(model, features, tokens, masks, dropout=None):
    """Batched forward pass to answer logits (B, |A|).

    features: (B, m, d_raw) raw region features; tokens: (B, T) padded ids;
    masks: (B,) real lengths. `dropout` is an optional Tensor -> Tensor map
    applied to v_Q and to the final query (training-time regularization).
    """
    cfg = model.config
    if cfg.encoder == "lstm":
        v_Q = qst.encode_lstm_batch(tokens, masks, model.encoder_params)
    else:
        v_Q = qst.encode_cnn_batch(tokens, masks, model.encoder_params)
    if dropout is not None:
        v_Q = dropout(v_Q)
    v_I = project_regions_batch(features, model.projection)   # (B, d, m)
    d, k = cfg.hidden_dim, cfg.attn_dim
    u = v_Q                                                    # (B, d, 1)
    for layer in model.attn_layers:
        hi = ad.matmul(layer.W_IA, v_I)                        # (B, k, m)
        hq = ad.matmul(layer.W_QA, u) + ad.reshape(layer.b_A, (k, 1))
        h = ad.tanh(hi + hq)
        logits = ad.matmul(layer.W_P, h) + ad.reshape(layer.b_P, (1, 1))
        p = ad.softmax(logits, axis=2)                         # (B, 1, m)
        v_tilde = ad.reduce_sum(v_I * p, axis=2, keepdims=True)
        u = v_tilde + u
    if dropout is not None:
        u = dropout(u)
    out = ad.matmul(model.classifier.W_u, u) + ad.reshape(model.classifier.b_u,
                                                          (cfg.answer_size, 1))
    return ad.reshape(out, (features.shape[0], cfg.answer_size))
