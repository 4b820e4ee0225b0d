"""Per-node confusion counts and nan-aware summary metrics.

Dead is the positive class.  Precision with no predicted deaths, or recall
with no actual deaths, is :data:`UNDEFINED` rather than a float NaN, and the
node averages skip undefined entries.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DomainError
from .graph import ALIVE, DEAD


class _Undefined:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "undefined"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Undefined, ())


UNDEFINED = _Undefined()


def is_defined(value) -> bool:
    return value is not UNDEFINED


@dataclass
class NodeConfusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "NodeConfusion") -> "NodeConfusion":
        return NodeConfusion(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else UNDEFINED

    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else UNDEFINED

    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else UNDEFINED


def hard_decision(probs) -> int:
    """Dead iff P(dead) > 0.5; an exact tie goes to alive."""
    return DEAD if probs[DEAD] > 0.5 else ALIVE


def new_confusions(n: int) -> list[NodeConfusion]:
    return [NodeConfusion() for _ in range(n)]


def accumulate(confusions: list[NodeConfusion], node: int, predicted: int, actual: int) -> list[NodeConfusion]:
    c = confusions[node]
    if predicted == DEAD:
        if actual == DEAD:
            c.tp += 1
        else:
            c.fp += 1
    elif actual == DEAD:
        c.fn += 1
    else:
        c.tn += 1
    return confusions


def merge(a: list[NodeConfusion], b: list[NodeConfusion]) -> list[NodeConfusion]:
    return [x + y for x, y in zip(a, b)]


def _defined_mean(values):
    kept = [v for v in values if is_defined(v)]
    return float(np.mean(kept)) if kept else UNDEFINED


@dataclass
class MetricsReport:
    confusions: list[NodeConfusion]
    accuracy: list
    precision: list
    recall: list
    average_accuracy: float
    average_precision: object
    average_recall: object
    mean_loss: float
    n_sequences: int

    def __getitem__(self, key):
        return getattr(self, key)

    def to_dict(self) -> dict:
        def enc(v):
            return "undefined" if v is UNDEFINED else v

        return {
            "n_sequences": self.n_sequences,
            "mean_loss": self.mean_loss,
            "average_accuracy": enc(self.average_accuracy),
            "average_precision": enc(self.average_precision),
            "average_recall": enc(self.average_recall),
            "nodes": [
                {
                    "node": i,
                    "tp": c.tp,
                    "fp": c.fp,
                    "tn": c.tn,
                    "fn": c.fn,
                    "accuracy": enc(self.accuracy[i]),
                    "precision": enc(self.precision[i]),
                    "recall": enc(self.recall[i]),
                }
                for i, c in enumerate(self.confusions)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def summary_row(self) -> str:
        """Tab-separated average accuracy, mean loss, average precision, average recall."""
        d = self.to_dict()
        keys = ("average_accuracy", "mean_loss", "average_precision", "average_recall")
        return "\t".join(repr(d[k]) if d[k] != "undefined" else "undefined" for k in keys)


def finalize(confusions: Sequence[NodeConfusion], losses: Sequence[float]) -> MetricsReport:
    if len(losses) == 0:
        raise DomainError("cannot summarize zero sequences")
    acc = [c.accuracy() for c in confusions]
    prec = [c.precision() for c in confusions]
    rec = [c.recall() for c in confusions]
    return MetricsReport(
        confusions=list(confusions),
        accuracy=acc,
        precision=prec,
        recall=rec,
        average_accuracy=_defined_mean(acc),
        average_precision=_defined_mean(prec),
        average_recall=_defined_mean(rec),
        mean_loss=float(np.mean(losses)),
        n_sequences=len(losses),
    )


def evaluate(params, dataset, train_config=None, workers: int = 1) -> MetricsReport:
    """Forward every sequence and tally per-node outcomes.

    Passes may run on ``workers`` threads; results are folded in sequence-id
    order so the report does not depend on the thread count.
    """
    from .model import forward
    from .training import TrainConfig, sequence_loss

    train_config = train_config or TrainConfig()
    ordered = sorted(dataset, key=lambda s: s.id)
    if not ordered:
        raise DomainError("cannot evaluate an empty dataset")

    def run(seq):
        return forward(seq, params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(run, ordered))
    else:
        preds = [run(s) for s in ordered]

    confusions = new_confusions(ordered[0].n)
    losses = []
    for seq, pred in zip(ordered, preds):
        losses.append(sequence_loss(pred, seq, train_config))
        for v in range(seq.n):
            accumulate(confusions, v, hard_decision(pred.probs[v]), int(seq.labels[v]))
    return finalize(confusions, losses)
