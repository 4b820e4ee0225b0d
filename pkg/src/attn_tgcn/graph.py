"""Video-as-graph data model.

One video becomes ``t`` graphs over a fixed set of ``n`` node slots.  Slots
beyond the number of tracked cells hold zero feature vectors, carry the alive
label, and are flagged in ``mask``.  The topology is static for the whole
video.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CapacityError, DomainError, ValidationError

ALIVE = 0
DEAD = 1


def build_fully_connected(n: int) -> np.ndarray:
    """Unit-weight complete graph on ``n`` nodes, zero diagonal."""
    if n < 1:
        raise DomainError(f"a graph needs at least one node, got n={n}")
    return np.ones((n, n)) - np.eye(n)


def _adjacency_problems(a: np.ndarray) -> list[str]:
    problems = []
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return [f"adjacency must be square, got shape {a.shape}"]
    if not np.all(np.isfinite(a)):
        problems.append("adjacency has non-finite entries")
    if not np.array_equal(a, a.T):
        problems.append("adjacency is not symmetric")
    if np.any(a < 0):
        problems.append("adjacency has negative weights")
    if np.any(np.diag(a) != 0):
        problems.append("adjacency has a nonzero diagonal")
    return problems


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: np.ndarray
    source_hash: str


def normalize_adjacency(a) -> NormalizedAdjacency:
    """Symmetric renormalization ``D^-1/2 (A + I) D^-1/2``.

    ``D`` is the degree matrix of ``A + I``, so every degree is at least one.
    """
    a = np.asarray(a, dtype=np.float64)
    problems = _adjacency_problems(a)
    if problems:
        raise ValidationError("; ".join(problems))
    a_tilde = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    m = inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]
    # entrywise product is symmetric up to commutativity of the two scalings
    m = 0.5 * (m + m.T)
    digest = hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()
    m.setflags(write=False)
    return NormalizedAdjacency(matrix=m, source_hash=digest)


def isolate_padded(a: np.ndarray, mask) -> np.ndarray:
    """Drop every edge touching a padded slot."""
    keep = np.asarray(mask, dtype=np.float64)
    return a * keep[:, None] * keep[None, :]


@dataclass
class STGraphSequence:
    """One video: ``features[t][n][f]``, shared adjacency, node mask, labels."""

    id: str
    features: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    adjacency: np.ndarray | None = None
    markers: np.ndarray | None = None
    _explicit_adjacency: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=np.int64)
        if self.adjacency is None:
            n = self.features.shape[1] if self.features.ndim == 3 else len(self.labels)
            self.adjacency = build_fully_connected(max(n, 1))
        else:
            self._explicit_adjacency = True
            self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.markers is not None:
            self.markers = np.asarray(self.markers, dtype=np.float64)

    @property
    def t(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def f(self) -> int:
        return self.features.shape[2]

    @property
    def has_explicit_adjacency(self) -> bool:
        return self._explicit_adjacency

    def permute_nodes(self, perm) -> "STGraphSequence":
        """Relabel node slots so new slot ``i`` is old slot ``perm[i]``."""
        perm = np.asarray(perm)
        adj = self.adjacency[np.ix_(perm, perm)]
        return STGraphSequence(
            id=self.id,
            features=self.features[:, perm, :],
            labels=self.labels[perm],
            mask=self.mask[perm],
            adjacency=adj if self._explicit_adjacency else None,
            markers=None if self.markers is None else self.markers[perm],
        )


def pad_sequence(features, labels, n_slots: int = 3, id: str = "", markers=None) -> STGraphSequence:
    """Place ``k`` tracked cells into ``n_slots`` slots, zero-filling the rest.

    Parameters
    ----------
    features : array-like, shape (t, k, f)
        Per-frame embeddings of the real cells, in slot order.
    labels : array-like, shape (k,)
        Class of each real cell (0 alive, 1 dead).
    n_slots : int
        Fixed number of node slots.
    markers : array-like, shape (k, t), optional
        Death-marker traces, padded with zeros alongside the features.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3:
        raise DomainError(f"features must be (t, k, f), got shape {x.shape}")
    t, k, f = x.shape
    if k == 0:
        raise DomainError("a sequence needs at least one real cell")
    if k > n_slots:
        raise CapacityError(f"{k} cells do not fit in {n_slots} node slots")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (k,):
        raise DomainError(f"expected {k} labels, got shape {labels.shape}")

    padded = np.zeros((t, n_slots, f))
    padded[:, :k, :] = x
    full_labels = np.full(n_slots, ALIVE, dtype=np.int64)
    full_labels[:k] = labels
    mask = np.zeros(n_slots, dtype=np.int64)
    mask[:k] = 1
    full_markers = None
    if markers is not None:
        markers = np.asarray(markers, dtype=np.float64)
        full_markers = np.zeros((n_slots, t))
        full_markers[:k] = markers
    return STGraphSequence(id=id, features=padded, labels=full_labels, mask=mask, markers=full_markers)


def validate_sequence(s: STGraphSequence) -> list[str]:
    """Return every invariant violation of ``s``; empty means well formed."""
    out = []
    x = s.features
    if x.ndim != 3:
        return [f"features must be 3-D (t, n, f), got shape {x.shape}"]
    t, n, f = x.shape
    if t < 1:
        out.append("t must be at least 1")
    if n < 1:
        out.append("n must be at least 1")
    if f < 1:
        out.append("f must be at least 1")
    if not np.all(np.isfinite(x)):
        out.append("features contain non-finite values")
    if s.labels.shape != (n,):
        out.append(f"labels length {s.labels.shape} does not match n={n}")
    elif np.any((s.labels != ALIVE) & (s.labels != DEAD)):
        out.append("labels must be 0 (alive) or 1 (dead)")
    if s.mask.shape != (n,):
        out.append(f"mask length {s.mask.shape} does not match n={n}")
    elif np.any((s.mask != 0) & (s.mask != 1)):
        out.append("mask entries must be 0 or 1")
    if s.adjacency.shape != (n, n):
        out.append(f"adjacency shape {s.adjacency.shape} does not match n={n}")
    else:
        out.extend(_adjacency_problems(s.adjacency))
    if s.markers is not None and s.markers.shape != (n, t):
        out.append(f"markers shape {s.markers.shape} does not match (n, t)=({n}, {t})")

    if s.mask.shape == (n,) and s.labels.shape == (n,):
        for v in np.flatnonzero(s.mask == 0):
            for frame in range(t):
                if np.any(x[frame, v] != 0):
                    out.append(f"padded node {v} has nonzero features at frame {frame}")
            if s.labels[v] != ALIVE:
                out.append(f"padded node {v} is labeled dead")
    return out
