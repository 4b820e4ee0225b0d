"""Objective, optimizer, training loop and the end-to-end gradient check."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import DomainError, NumericError, ValidationError
from .graph import DEAD, STGraphSequence, build_fully_connected, validate_sequence
from .model import ModelConfig, ModelParams, Prediction, init_params, record_forward
from .reference import reference_loss

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 1
    seed: int = 0
    include_padded_in_loss: bool = True
    death_class_weight: float = 1.0
    shuffle: bool = True

    def __post_init__(self):
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ValidationError(f"epochs must be a nonnegative integer, got {self.epochs!r}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not isinstance(self.batch, (int, np.integer)) or self.batch < 1:
            raise ValidationError(f"batch must be a positive integer, got {self.batch!r}")
        if not self.death_class_weight >= 0:
            raise ValidationError(f"death_class_weight must be >= 0, got {self.death_class_weight!r}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValidationError("adam betas must lie in [0, 1) and adam_eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {fl.name for fl in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


# --- objective ---------------------------------------------------------------


def node_cross_entropy(probs, label: int, weight_dead: float = 1.0) -> float:
    """``-w * log(max(p[label], 1e-12))``, with ``w = weight_dead`` for dead labels."""
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label!r}")
    probs = np.asarray(probs, dtype=np.float64)
    if abs(probs.sum() - 1.0) > 1e-6:
        raise DomainError(f"probabilities sum to {probs.sum()}, not 1")
    w = weight_dead if label == DEAD else 1.0
    return -w * math.log(max(probs[label], PROB_FLOOR))


def node_weights(seq: STGraphSequence, cfg: TrainConfig) -> np.ndarray:
    """(n, 2) matrix: the loss weight of each node placed in its label column."""
    w = np.zeros((seq.n, 2))
    for v in range(seq.n):
        if not cfg.include_padded_in_loss and seq.mask[v] == 0:
            continue
        label = int(seq.labels[v])
        w[v, label] = cfg.death_class_weight if label == DEAD else 1.0
    return w


def sequence_loss(pred: Prediction, seq: STGraphSequence, cfg: TrainConfig) -> float:
    """Summed per-node cross entropy."""
    if pred.probs.shape[0] != seq.n:
        raise ValidationError(f"prediction has {pred.probs.shape[0]} nodes, sequence has {seq.n}")
    total = 0.0
    for v in range(seq.n):
        if not cfg.include_padded_in_loss and seq.mask[v] == 0:
            continue
        total += node_cross_entropy(pred.probs[v], int(seq.labels[v]), cfg.death_class_weight)
    return total


def record_loss(tape: ad.Tape, seq: STGraphSequence, params: ModelParams, cfg: TrainConfig):
    """Forward pass plus loss on ``tape``; returns ``(loss_var, probs_var)``."""
    _, probs, _, _, _ = record_forward(tape, seq, params)
    weights = tape.constant(node_weights(seq, cfg))
    loss = ad.scale(ad.sum_all(ad.multiply(weights, ad.log_clamped(probs, PROB_FLOOR))), -1.0)
    return loss, probs


def loss_and_grad(seq: STGraphSequence, params: ModelParams, cfg: TrainConfig) -> tuple[float, dict]:
    tape = ad.Tape()
    loss, _ = record_loss(tape, seq, params, cfg)
    grads = tape.backward(loss)
    return float(loss.value[0, 0]), {k: g.reshape(params[k].shape) for k, g in grads.items()}


def loss_value(seq: STGraphSequence, params: ModelParams, cfg: TrainConfig) -> float:
    tape = ad.Tape()
    loss, _ = record_loss(tape, seq, params, cfg)
    return float(loss.value[0, 0])


# --- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.tensors.items()},
            v={k: np.zeros_like(a) for k, a in params.tensors.items()},
        )


def adam_step(params: ModelParams, grads: dict, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValidationError(f"gradient {name} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    step = state.step + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_t, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_t[name] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        new_m[name], new_v[name] = m, v
    return ModelParams(params.config, new_t), AdamState(new_m, new_v, step)


# --- loop --------------------------------------------------------------------


def check_dataset(dataset: Sequence[STGraphSequence], config: ModelConfig) -> None:
    """Raise :class:`ValidationError` unless every sequence fits ``config``."""
    for seq in dataset:
        if seq.features.ndim != 3:
            raise ValidationError(f"sequence {seq.id!r}: features must be (t, n, f)")
        _, n, f = seq.features.shape
        if (n, f) != (config.n, config.f):
            raise ValidationError(
                f"sequence {seq.id!r} has (n, f)=({n}, {f}); model config expects ({config.n}, {config.f})"
            )
        problems = validate_sequence(seq)
        if problems:
            raise ValidationError(f"sequence {seq.id!r}: {problems[0]}")


def train(
    dataset: Sequence[STGraphSequence],
    model_config: ModelConfig,
    train_config: TrainConfig,
    validation: Sequence[STGraphSequence] | None = None,
    evaluate: Callable | None = None,
    log: Callable[[str], None] | None = None,
    init: ModelParams | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Fit parameters with per-sequence (or mini-batch) Adam.

    Sequences are first put in id order, so the result does not depend on the
    order of ``dataset``; each epoch then visits them in a permutation drawn
    from a generator seeded by ``train_config.seed``.

    ``evaluate(params, sequences) -> dict`` is called on ``validation`` after
    each epoch when both are given.  ``log`` receives one tab-separated line
    per epoch: ``epoch``, mean loss, and validation accuracy when available.
    """
    if len(dataset) == 0:
        raise ValidationError("training dataset is empty")
    check_dataset(dataset, model_config)
    if validation is not None:
        check_dataset(validation, model_config)

    ordered = sorted(dataset, key=lambda s: s.id)
    params = init if init is not None else init_params(model_config, train_config.seed)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(train_config.seed)
    history = TrainHistory()

    for epoch in range(train_config.epochs):
        started = time.perf_counter()
        order = rng.permutation(len(ordered)) if train_config.shuffle else np.arange(len(ordered))
        losses = []
        for start in range(0, len(order), train_config.batch):
            batch = order[start : start + train_config.batch]
            total = None
            for i in batch:
                loss, grads = loss_and_grad(ordered[i], params, train_config)
                losses.append(loss)
                if total is None:
                    total = grads
                else:
                    total = {k: total[k] + grads[k] for k in total}
            params, state = adam_step(params, total, state, train_config)
        mean_loss = float(np.mean(losses))
        history.loss.append(mean_loss)

        fields_out = [str(epoch), repr(mean_loss)]
        if validation is not None and evaluate is not None:
            report = evaluate(params, validation)
            history.validation.append(report)
            fields_out.append(repr(report["average_accuracy"]))
        line = "\t".join(fields_out)
        if log is not None:
            log(line)
        logger.debug("epoch %d took %.2fs", epoch, time.perf_counter() - started)
    return params, history


# --- gradient check ----------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_parameter: str
    worst_index: tuple
    passed: bool
    per_parameter: dict[str, float]


def random_sequence(config: ModelConfig, rng: np.random.Generator, id: str = "gradcheck") -> STGraphSequence:
    """All-real-cell sequence with uniform features and random labels."""
    return STGraphSequence(
        id=id,
        features=rng.uniform(-2.0, 2.0, size=(config.t, config.n, config.f)),
        labels=rng.integers(0, 2, size=config.n),
        mask=np.ones(config.n, dtype=np.int64),
        adjacency=build_fully_connected(config.n),
    )


def random_params(config: ModelConfig, rng: np.random.Generator, scale: float = 0.5) -> ModelParams:
    """Glorot weights plus small random biases, so every bias path is exercised."""
    params = init_params(config, int(rng.integers(2**31)))
    tensors = {}
    for name, arr in params.tensors.items():
        if name.startswith("b_"):
            tensors[name] = rng.uniform(-scale, scale, size=arr.shape)
        else:
            tensors[name] = arr
    return ModelParams(config, tensors)


def grad_check_model(
    model_config: ModelConfig | None = None,
    seed: int = 0,
    eps: float = 1e-5,
    tol: float = 1e-4,
    only: Sequence[str] | None = None,
    train_config: TrainConfig | None = None,
    oracle_dtype=np.longdouble,
) -> GradCheckReport:
    """Compare reverse-mode gradients of the sequence loss to central differences.

    The finite differences are taken on the tape-free reference loss evaluated
    in ``oracle_dtype``.  ``only`` restricts the check to the named
    parameters; the others stay frozen at their random values.
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    if model_config is None:
        model_config = ModelConfig(t=4, n=3, f=5, g=6, h=6, d_a=4)
    train_config = train_config or TrainConfig()
    rng = np.random.default_rng(seed)
    seq = random_sequence(model_config, rng)
    params = random_params(model_config, rng)

    names = list(only) if only is not None else params.names()
    _, analytic = loss_and_grad(seq, params, train_config)

    base = {k: np.asarray(v, dtype=oracle_dtype) for k, v in params.tensors.items()}

    def objective(sub):
        return reference_loss(seq, {**base, **sub}, model_config, train_config, oracle_dtype)

    numeric = ad.finite_diff_grad(objective, {k: params[k] for k in names}, eps, dtype=oracle_dtype)

    worst, worst_name, worst_idx = 0.0, names[0], ()
    per_param = {}
    for name in names:
        err = ad.relative_error(analytic[name], numeric[name])
        per_param[name] = float(err.max()) if err.size else 0.0
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_name = name
            worst_idx = tuple(int(i) for i in np.unravel_index(int(err.argmax()), err.shape))
    return GradCheckReport(worst, worst_name, worst_idx, worst <= tol, per_param)
