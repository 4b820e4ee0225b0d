"""Attention temporal graph convolutional network.

Per frame, a graph convolution mixes the node features, and a GRU-style cell
with update gate ``u``, reset gate ``r`` and candidate state ``c`` folds the
result into the per-node hidden state::

    u   = sigmoid([GC(A, X_t), h_prev] W_u + b_u)
    r   = sigmoid([GC(A, X_t), h_prev] W_r + b_r)
    c   = tanh([GC(A, X_t), r * h_prev] W_c + b_c)
    h_t = u * h_prev + (1 - u) * c

Each node then pools its own hidden-state sequence with soft attention
(scores ``w_2 (w_1 h_i + b_1) + b_2``, softmax over frames, weighted sum) and
a two-way linear head plus softmax gives P(alive), P(dead).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .exceptions import ShapeError, ValidationError
from .graph import NormalizedAdjacency, STGraphSequence, isolate_padded, normalize_adjacency

PARAM_NAMES = (
    "w_g", "w_s", "w_g2", "w_s2",
    "w_u", "b_u", "w_r", "b_r", "w_c", "b_c",
    "w_1", "b_1", "w_2", "b_2",
    "w_o", "b_o",
)


@dataclass(frozen=True)
class ModelConfig:
    f: int = 16
    g: int = 64
    h: int = 64
    d_a: int = 32
    n: int = 3
    t: int = 15
    gc_layers: int = 1
    isolate_padded: bool = False
    attention_tanh: bool = False
    gc_root_weight: bool = False

    def __post_init__(self):
        for name in ("f", "g", "h", "d_a", "n", "t"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ValidationError(f"model config {name} must be a positive integer, got {value!r}")
        if self.gc_layers not in (1, 2):
            raise ValidationError(f"gc_layers must be 1 or 2, got {self.gc_layers!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {fl.name for fl in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    f, g, h, d_a = config.f, config.g, config.h, config.d_a
    shapes = {"w_g": (f, g)}
    if config.gc_root_weight:
        shapes["w_s"] = (f, g)
    if config.gc_layers == 2:
        shapes["w_g2"] = (g, g)
        if config.gc_root_weight:
            shapes["w_s2"] = (g, g)
    for gate in "urc":
        shapes[f"w_{gate}"] = (g + h, h)
        shapes[f"b_{gate}"] = (h,)
    shapes.update(w_1=(d_a, h), b_1=(d_a,), w_2=(1, d_a), b_2=(), w_o=(2, h), b_o=(2,))
    return shapes


@dataclass
class ModelParams:
    """All learnable tensors, keyed by name, with their config."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in self.tensors.items()}
        expected = param_shapes(self.config)
        if set(self.tensors) != set(expected):
            raise ValidationError(
                f"parameter names {sorted(self.tensors)} do not match config {sorted(expected)}"
            )
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {self.tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValidationError(f"parameter {name} has non-finite entries")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return [k for k in PARAM_NAMES if k in self.tensors]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def replace(self, **tensors) -> "ModelParams":
        new = {k: v.copy() for k, v in self.tensors.items()}
        new.update(tensors)
        return ModelParams(self.config, new)

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of config and every tensor."""
        return self.config == other.config and all(
            np.array_equal(self.tensors[k], other.tensors[k]) and self.tensors[k].dtype == other.tensors[k].dtype
            for k in self.tensors
        )


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic per ``seed``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("b_"):
            tensors[name] = np.zeros(shape)
        else:
            # every weight is 2-D, so fan_in + fan_out is the sum of its dims
            limit = np.sqrt(6.0 / sum(shape))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(config, tensors)


def zero_params(config: ModelConfig) -> ModelParams:
    return ModelParams(config, {k: np.zeros(s) for k, s in param_shapes(config).items()})


@dataclass
class Prediction:
    probs: np.ndarray  # (n, 2)
    attention_weights: np.ndarray  # (n, t)
    contexts: np.ndarray  # (n, h)
    hidden: np.ndarray | None = None  # (t, n, h)


# --- tape-level building blocks ----------------------------------------------


def _leaves(tape: ad.Tape, params: ModelParams) -> dict[str, ad.Var]:
    return {name: tape.leaf(params[name], name=name) for name in params.names()}


def _gc_layer(a_hat: ad.Var, x: ad.Var, w: ad.Var, w_root: ad.Var | None) -> ad.Var:
    z = ad.matmul(ad.matmul(a_hat, x), w)
    if w_root is not None:
        z = ad.add(z, ad.matmul(x, w_root))
    return z


def _graph_conv(a_hat: ad.Var, x: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    z = _gc_layer(a_hat, x, p["w_g"], p.get("w_s"))
    if "w_g2" in p:
        z = _gc_layer(a_hat, ad.relu(z), p["w_g2"], p.get("w_s2"))
    return z


def _tgcn_step(a_hat: ad.Var, x_t: ad.Var, h_prev: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    z = _graph_conv(a_hat, x_t, p)
    zh = ad.concat_cols(z, h_prev)
    u = ad.sigmoid(ad.add_row(ad.matmul(zh, p["w_u"]), p["b_u"]))
    r = ad.sigmoid(ad.add_row(ad.matmul(zh, p["w_r"]), p["b_r"]))
    zrh = ad.concat_cols(z, ad.multiply(r, h_prev))
    c = ad.tanh(ad.add_row(ad.matmul(zrh, p["w_c"]), p["b_c"]))
    return ad.add(ad.multiply(u, h_prev), ad.multiply(ad.one_minus(u), c))


def _encode(a_hat: ad.Var, frames: list[ad.Var], h0: ad.Var, p) -> list[ad.Var]:
    states = []
    h = h0
    for x_t in frames:
        h = _tgcn_step(a_hat, x_t, h, p)
        states.append(h)
    return states


def _attend(states: list[ad.Var], p, attention_tanh: bool = False) -> tuple[ad.Var, ad.Var]:
    """Per-node soft attention over frames; returns (contexts n x h, weights n x t)."""
    t = len(states)
    n = states[0].value.shape[0]
    stacked = ad.concat_rows(states)  # row index = frame * n + node
    hidden = ad.add_row(ad.matmul(stacked, ad.transpose(p["w_1"])), p["b_1"])
    if attention_tanh:
        hidden = ad.tanh(hidden)
    scores = ad.add_row(ad.matmul(hidden, ad.transpose(p["w_2"])), p["b_2"])
    scores = ad.transpose(ad.reshape(scores, t, n))  # n x t
    alpha = ad.softmax_rows(scores)
    context = ad.mul_col(states[0], ad.column(alpha, 0))
    for i in range(1, t):
        context = ad.add(context, ad.mul_col(states[i], ad.column(alpha, i)))
    return context, alpha


def _classify(contexts: ad.Var, p) -> ad.Var:
    logits = ad.add_row(ad.matmul(contexts, ad.transpose(p["w_o"])), p["b_o"])
    return ad.softmax_rows(logits)


def _check_sequence(seq: STGraphSequence, config: ModelConfig) -> None:
    if seq.features.ndim != 3:
        raise ShapeError(f"sequence {seq.id!r}: features must be (t, n, f), got {seq.features.shape}")
    _, n, f = seq.features.shape
    if n != config.n or f != config.f:
        raise ShapeError(
            f"sequence {seq.id!r} has (n, f)=({n}, {f}) but the model expects ({config.n}, {config.f})"
        )


def sequence_adjacency(seq: STGraphSequence, config: ModelConfig) -> NormalizedAdjacency:
    a = seq.adjacency
    if config.isolate_padded:
        a = isolate_padded(a, seq.mask)
    return normalize_adjacency(a)


def record_forward(tape: ad.Tape, seq: STGraphSequence, params: ModelParams):
    """Record the full forward pass on ``tape``.

    Returns ``(leaves, probs, alpha, contexts, states)``, all tape variables.
    """
    config = params.config
    _check_sequence(seq, config)
    p = _leaves(tape, params)
    a_hat = tape.constant(sequence_adjacency(seq, config).matrix)
    frames = [tape.constant(seq.features[i]) for i in range(seq.t)]
    h0 = tape.constant(np.zeros((seq.n, config.h)))
    states = _encode(a_hat, frames, h0, p)
    contexts, alpha = _attend(states, p, config.attention_tanh)
    probs = _classify(contexts, p)
    return p, probs, alpha, contexts, states


# --- array-level API ---------------------------------------------------------


def _a_hat_matrix(a_hat) -> np.ndarray:
    return a_hat.matrix if isinstance(a_hat, NormalizedAdjacency) else np.asarray(a_hat, dtype=np.float64)


def _check_dims(x: np.ndarray, rows: int, cols: int, what: str) -> None:
    if x.shape != (rows, cols):
        raise ShapeError(f"{what} has shape {x.shape}, expected ({rows}, {cols})")


def graph_conv(a_hat, x, params: ModelParams) -> np.ndarray:
    """``A_hat X W_g`` (one layer) or ``A_hat relu(A_hat X W_g) W_g2`` (two).

    With ``gc_root_weight`` each layer adds ``X W_s``, a per-node term that
    survives the uniform averaging of a complete graph.
    """
    a = _a_hat_matrix(a_hat)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(x, a.shape[0], params.config.f, "node features")
    tape = ad.Tape()
    p = _leaves(tape, params)
    return _graph_conv(tape.constant(a), tape.constant(x), p).value


def tgcn_step(a_hat, x_t, h_prev, params: ModelParams) -> np.ndarray:
    a = _a_hat_matrix(a_hat)
    n = a.shape[0]
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check_dims(x_t, n, params.config.f, "node features")
    _check_dims(h_prev, n, params.config.h, "previous hidden state")
    tape = ad.Tape()
    p = _leaves(tape, params)
    return _tgcn_step(tape.constant(a), tape.constant(x_t), tape.constant(h_prev), p).value


def encode_sequence(seq: STGraphSequence, params: ModelParams) -> np.ndarray:
    """Hidden states for every frame, shape (t, n, h), starting from zeros."""
    config = params.config
    _check_sequence(seq, config)
    tape = ad.Tape()
    p = _leaves(tape, params)
    a_hat = tape.constant(sequence_adjacency(seq, config).matrix)
    frames = [tape.constant(seq.features[i]) for i in range(seq.t)]
    h0 = tape.constant(np.zeros((seq.n, config.h)))
    return np.stack([s.value for s in _encode(a_hat, frames, h0, p)])


def attend(hidden, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Contexts (n, h) and attention weights (n, t) from hidden states (t, n, h)."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 3 or hidden.shape[2] != params.config.h:
        raise ShapeError(f"hidden states must be (t, n, {params.config.h}), got {hidden.shape}")
    tape = ad.Tape()
    p = _leaves(tape, params)
    states = [tape.constant(hidden[i]) for i in range(hidden.shape[0])]
    contexts, alpha = _attend(states, p, params.config.attention_tanh)
    return contexts.value, alpha.value


def classify(contexts, params: ModelParams) -> np.ndarray:
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2 or contexts.shape[1] != params.config.h:
        raise ShapeError(f"contexts must be (n, {params.config.h}), got {contexts.shape}")
    tape = ad.Tape()
    p = _leaves(tape, params)
    return _classify(tape.constant(contexts), p).value


def forward(seq: STGraphSequence, params: ModelParams) -> Prediction:
    tape = ad.Tape()
    _, probs, alpha, contexts, states = record_forward(tape, seq, params)
    return Prediction(
        probs=probs.value,
        attention_weights=alpha.value,
        contexts=contexts.value,
        hidden=np.stack([s.value for s in states]),
    )
