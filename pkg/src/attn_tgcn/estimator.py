"""scikit-learn compatible wrapper around the attention T-GCN.

``X`` is either a list of :class:`~attn_tgcn.graph.STGraphSequence` or an array
of shape ``(n_samples, t, n_nodes, n_features)``; in the array case ``y`` has
shape ``(n_samples, n_nodes)`` and an optional ``mask`` marks the real cells.
Predictions are per node: ``predict`` returns ``(n_samples, n_nodes)`` and
``predict_proba`` returns ``(n_samples, n_nodes, 2)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ValidationError
from .graph import STGraphSequence, build_fully_connected, validate_sequence
from .metrics import evaluate, hard_decision
from .model import ModelConfig, forward
from .training import TrainConfig, train


def check_sequences(X, y=None, mask=None, require_labels=True) -> list[STGraphSequence]:
    """Coerce ``X`` (and ``y``, ``mask``) into validated sequences.

    Raises
    ------
    ValidationError
        If shapes disagree, labels are missing when required, or any sequence
        breaks an invariant (e.g. a padded slot with nonzero features).
    """
    if isinstance(X, STGraphSequence):
        X = [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(s, STGraphSequence) for s in X):
        if y is not None or mask is not None:
            raise ValidationError("pass labels and masks inside the sequences, not as y/mask")
        seqs = list(X)
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 4:
            raise ValidationError(f"X must have shape (n_samples, t, n_nodes, n_features), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("X contains NaN or infinity")
        n_samples, _, n, _ = arr.shape
        if y is None:
            if require_labels:
                raise ValidationError("y is required")
            labels = np.zeros((n_samples, n), dtype=np.int64)
        else:
            labels = np.asarray(y)
            if labels.shape != (n_samples, n):
                raise ValidationError(f"y must have shape {(n_samples, n)}, got {labels.shape}")
            if np.any((labels != 0) & (labels != 1)):
                raise ValidationError("y must contain only 0 (alive) and 1 (dead)")
        if mask is None:
            mask = np.ones((n_samples, n), dtype=np.int64)
        mask = np.asarray(mask)
        if mask.shape != (n_samples, n):
            raise ValidationError(f"mask must have shape {(n_samples, n)}, got {mask.shape}")
        adjacency = build_fully_connected(n)
        seqs = [
            STGraphSequence(f"{i:06d}", arr[i], labels[i], mask[i], adjacency=adjacency)
            for i in range(n_samples)
        ]
    if not seqs:
        raise ValidationError("X is empty")
    dims = (seqs[0].t, seqs[0].n, seqs[0].f)
    for s in seqs:
        if (s.t, s.n, s.f) != dims:
            raise ValidationError(f"sequence {s.id!r} has (t, n, f)={(s.t, s.n, s.f)}, expected {dims}")
        problems = validate_sequence(s)
        if problems:
            raise ValidationError(f"sequence {s.id!r}: {problems[0]}")
    return seqs


class AttentionTGCNClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Per-node dead/alive classifier over graph sequences.

    Hyperparameters mirror :class:`ModelConfig` and :class:`TrainConfig`;
    ``random_state`` seeds both initialization and shuffling.  ``transform``
    returns the attention context vectors, shape ``(n_samples, n_nodes, h)``.
    """

    def __init__(
        self,
        hidden_dim=64,
        graph_dim=64,
        attention_dim=32,
        gc_layers=1,
        gc_root_weight=True,
        isolate_padded=False,
        attention_tanh=False,
        epochs=50,
        learning_rate=1e-3,
        batch_size=1,
        include_padded_in_loss=True,
        death_class_weight=1.0,
        shuffle=True,
        random_state=0,
    ):
        self.hidden_dim = hidden_dim
        self.graph_dim = graph_dim
        self.attention_dim = attention_dim
        self.gc_layers = gc_layers
        self.gc_root_weight = gc_root_weight
        self.isolate_padded = isolate_padded
        self.attention_tanh = attention_tanh
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.include_padded_in_loss = include_padded_in_loss
        self.death_class_weight = death_class_weight
        self.shuffle = shuffle
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch=self.batch_size,
            seed=self.random_state,
            include_padded_in_loss=self.include_padded_in_loss,
            death_class_weight=self.death_class_weight,
            shuffle=self.shuffle,
        )

    def fit(self, X, y=None, mask=None):
        seqs = check_sequences(X, y, mask)
        first = seqs[0]
        self.model_config_ = ModelConfig(
            f=first.f,
            g=self.graph_dim,
            h=self.hidden_dim,
            d_a=self.attention_dim,
            n=first.n,
            t=first.t,
            gc_layers=self.gc_layers,
            isolate_padded=self.isolate_padded,
            attention_tanh=self.attention_tanh,
            gc_root_weight=self.gc_root_weight,
        )
        self.params_, self.history_ = train(seqs, self.model_config_, self._train_config())
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = first.f
        self.n_nodes_ = first.n
        return self

    def _predict_all(self, X, mask=None):
        check_is_fitted(self, "params_")
        seqs = check_sequences(X, None, mask, require_labels=False)
        if seqs[0].n != self.n_nodes_ or seqs[0].f != self.n_features_in_:
            raise ValidationError(
                f"X has (n_nodes, n_features)=({seqs[0].n}, {seqs[0].f}), "
                f"fitted on ({self.n_nodes_}, {self.n_features_in_})"
            )
        return [forward(s, self.params_) for s in seqs]

    def predict_proba(self, X, mask=None):
        return np.stack([p.probs for p in self._predict_all(X, mask)])

    def predict(self, X, mask=None):
        preds = self._predict_all(X, mask)
        return np.array([[hard_decision(row) for row in p.probs] for p in preds], dtype=np.int64)

    def transform(self, X, mask=None):
        return np.stack([p.contexts for p in self._predict_all(X, mask)])

    def attention_weights(self, X, mask=None):
        return np.stack([p.attention_weights for p in self._predict_all(X, mask)])

    def score(self, X, y=None, mask=None):
        """Average per-node accuracy."""
        check_is_fitted(self, "params_")
        seqs = check_sequences(X, y, mask)
        return evaluate(self.params_, seqs, self._train_config()).average_accuracy
