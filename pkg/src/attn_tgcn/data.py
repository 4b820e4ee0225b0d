"""Labeling rule, synthetic videos, and on-disk formats.

Datasets are JSON Lines, one video per line, fields in the fixed order
``id, t, n, f, features, labels, mask[, adjacency][, markers]``.  Python's
``repr`` of a float is the shortest string that parses back to the same
double, so ``json`` output round-trips bitwise.

Model archives are a single JSON document::

    {"version": 1, "model_config": {...},
     "params": {"w_g": {"shape": [f, g], "data": [...]}, ...}}
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DomainError, IncompatibleVersionError, ParseError, ValidationError
from .graph import ALIVE, DEAD, STGraphSequence, pad_sequence, validate_sequence
from .model import ModelConfig, ModelParams, param_shapes

logger = logging.getLogger(__name__)

ARCHIVE_VERSION = 1

# Per-cell death probability of 14/122 with 13 admissible onset frames, and a
# cell-count mix that puts roughly 14 / 10 / 7 deaths on slots 1 / 2 / 3.
DEFAULT_ONSET_PROB = 1.0 - (1.0 - 14 / 122) ** (1 / 13)
DEFAULT_CELL_WEIGHTS = (4 / 14, 3 / 14, 7 / 14)


def label_from_markers(markers, threshold: float, k: int = 3) -> int:
    """Dead (1) iff ``k`` consecutive frames have marker strictly above ``threshold``."""
    m = np.asarray(markers, dtype=np.float64)
    if m.ndim != 1 or m.size == 0:
        raise DomainError("marker trace must be a nonempty vector")
    if k < 1:
        raise DomainError(f"k must be at least 1, got {k}")
    if k > m.size:
        raise DomainError(f"k={k} exceeds trace length {m.size}")
    run = 0
    for above in m > threshold:
        run = run + 1 if above else 0
        if run >= k:
            return DEAD
    return ALIVE


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic video generator.

    ``threshold`` has no fixed default: leave it ``None`` to use the midpoint
    ``marker_base + marker_jump / 2``, which is logged.
    """

    videos: int = 122
    t: int = 15
    max_cells: int = 3
    f: int = 16
    death_onset_prob: float = DEFAULT_ONSET_PROB
    marker_base: float = 0.0
    marker_jump: float = 1.0
    marker_noise: float = 0.1
    feature_sep: float = 3.0
    feature_noise: float = 1.0
    threshold: float | None = None
    k_consecutive: int = 3
    cell_count_weights: tuple[float, ...] | None = None
    cluster_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("t", "max_cells", "f", "k_consecutive"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"synth config {name} must be at least 1")
        if self.videos < 0:
            raise ValidationError("synth config videos must be nonnegative")
        if not 0.0 <= self.death_onset_prob <= 1.0:
            raise ValidationError("death_onset_prob must lie in [0, 1]")
        if self.feature_sep < 0 or self.feature_noise < 0 or self.marker_noise < 0:
            raise ValidationError("feature_sep, feature_noise and marker_noise must be nonnegative")
        if self.k_consecutive > self.t:
            raise ValidationError(f"k_consecutive={self.k_consecutive} exceeds t={self.t}")
        if self.cell_count_weights is not None:
            w = np.asarray(self.cell_count_weights, dtype=np.float64)
            if w.shape != (self.max_cells,) or np.any(w < 0) or w.sum() <= 0:
                raise ValidationError(
                    f"cell_count_weights must be {self.max_cells} nonnegative weights with positive sum"
                )
            object.__setattr__(self, "cell_count_weights", tuple(float(x) for x in w))

    @property
    def resolved_threshold(self) -> float:
        if self.threshold is not None:
            return float(self.threshold)
        return self.marker_base + self.marker_jump / 2.0

    @property
    def resolved_weights(self) -> np.ndarray:
        if self.cell_count_weights is not None:
            w = np.asarray(self.cell_count_weights)
        elif self.max_cells == 3:
            w = np.asarray(DEFAULT_CELL_WEIGHTS)
        else:
            w = np.ones(self.max_cells)
        return w / w.sum()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - {fl.name for fl in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


def cluster_means(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Alive and dead feature means, ``feature_sep * feature_noise`` apart.

    They depend only on ``cluster_seed`` and ``f`` so train and test sets drawn
    with different seeds share one feature space.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.cluster_seed, cfg.f]))
    alive = rng.normal(size=cfg.f)
    direction = rng.normal(size=cfg.f)
    direction /= np.linalg.norm(direction)
    return alive, alive + cfg.feature_sep * cfg.feature_noise * direction


def _video(cfg: SynthConfig, index: int, means, threshold: float, weights) -> STGraphSequence:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    alive_mean, dead_mean = means
    k = int(rng.choice(cfg.max_cells, p=weights)) + 1
    features = np.empty((cfg.t, k, cfg.f))
    markers = np.empty((k, cfg.t))
    labels = np.empty(k, dtype=np.int64)
    for cell in range(k):
        # first frame of the dying process, or t when the cell survives
        hits = rng.random(cfg.t) < cfg.death_onset_prob
        onset = int(np.argmax(hits)) if hits.any() else cfg.t
        trace = cfg.marker_base + cfg.marker_noise * rng.normal(size=cfg.t)
        trace[onset:] += cfg.marker_jump
        markers[cell] = trace
        labels[cell] = label_from_markers(trace, threshold, cfg.k_consecutive)
        dying = trace > threshold
        noise = cfg.feature_noise * rng.normal(size=(cfg.t, cfg.f))
        features[:, cell, :] = np.where(dying[:, None], dead_mean, alive_mean) + noise
    return pad_sequence(features, labels, cfg.max_cells, id=f"s{cfg.seed}-v{index:05d}", markers=markers)


def generate_synthetic(cfg: SynthConfig, workers: int = 1) -> list[STGraphSequence]:
    """Draw ``cfg.videos`` padded sequences.

    Each video seeds its own generator from ``(cfg.seed, index)``, so the
    output is identical for any ``workers``.
    """
    threshold = cfg.resolved_threshold
    if cfg.threshold is None:
        logger.info("synthetic threshold not set; using midpoint %r", threshold)
    means = cluster_means(cfg)
    weights = cfg.resolved_weights

    def make(i):
        return _video(cfg, i, means, threshold, weights)

    if workers <= 1:
        return [make(i) for i in range(cfg.videos)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(make, range(cfg.videos)))


def label_counts(dataset: Sequence[STGraphSequence]) -> np.ndarray:
    """(n, 2) array: per node slot, number of alive and dead labels."""
    if not dataset:
        return np.zeros((0, 2), dtype=np.int64)
    n = dataset[0].n
    counts = np.zeros((n, 2), dtype=np.int64)
    for seq in dataset:
        for v in range(n):
            counts[v, int(seq.labels[v])] += 1
    return counts


# --- dataset files -----------------------------------------------------------


def sequence_to_record(seq: STGraphSequence) -> dict:
    rec = {
        "id": seq.id,
        "t": seq.t,
        "n": seq.n,
        "f": seq.f,
        "features": seq.features.tolist(),
        "labels": [int(x) for x in seq.labels],
        "mask": [int(x) for x in seq.mask],
    }
    if seq.has_explicit_adjacency:
        rec["adjacency"] = seq.adjacency.tolist()
    if seq.markers is not None:
        rec["markers"] = seq.markers.tolist()
    return rec


def write_dataset(path, dataset: Iterable[STGraphSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in dataset:
            fh.write(json.dumps(sequence_to_record(seq), allow_nan=False, separators=(",", ":")))
            fh.write("\n")


def _int_field(rec, name, line):
    value = rec.get(name)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ParseError("must be a positive integer", line, name)
    return value


def _array_field(rec, name, shape, line, dtype=np.float64):
    try:
        arr = np.array(rec[name], dtype=dtype)
    except KeyError:
        raise ParseError("missing", line, name) from None
    except (TypeError, ValueError):
        raise ParseError("not a rectangular numeric array", line, name) from None
    if arr.shape != shape:
        raise ParseError(f"shape {arr.shape} does not match expected {shape}", line, name)
    return arr


def record_to_sequence(rec: dict, line: int | None = None) -> STGraphSequence:
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", line)
    seq_id = rec.get("id")
    if not isinstance(seq_id, str):
        raise ParseError("must be a string", line, "id")
    t, n, f = (_int_field(rec, k, line) for k in ("t", "n", "f"))
    features = _array_field(rec, "features", (t, n, f), line)
    labels = _array_field(rec, "labels", (n,), line, dtype=np.int64)
    mask = _array_field(rec, "mask", (n,), line, dtype=np.int64)
    for name, arr in (("labels", labels), ("mask", mask)):
        if np.any((arr != 0) & (arr != 1)):
            raise ParseError("entries must be 0 or 1", line, name)
    adjacency = _array_field(rec, "adjacency", (n, n), line) if "adjacency" in rec else None
    markers = _array_field(rec, "markers", (n, t), line) if "markers" in rec else None
    extra = set(rec) - {"id", "t", "n", "f", "features", "labels", "mask", "adjacency", "markers"}
    if extra:
        raise ParseError(f"unknown fields {sorted(extra)}", line)
    seq = STGraphSequence(seq_id, features, labels, mask, adjacency=adjacency, markers=markers)
    problems = validate_sequence(seq)
    if problems:
        raise ValidationError(f"line {line}: {problems[0]}" if line else problems[0])
    return seq


def read_dataset(path) -> list[STGraphSequence]:
    """Parse and validate a dataset file; every video must share ``(t, n, f)``."""
    out = []
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            seq = record_to_sequence(rec, lineno)
            if dims is None:
                dims = (seq.t, seq.n, seq.f)
            elif (seq.t, seq.n, seq.f) != dims:
                raise ValidationError(
                    f"line {lineno}: (t, n, f)={(seq.t, seq.n, seq.f)} differs from earlier {dims}"
                )
            out.append(seq)
    return out


# --- model archives ----------------------------------------------------------


@dataclass
class ModelArchive:
    model_config: ModelConfig
    params: ModelParams
    version: int = ARCHIVE_VERSION


def archive_to_dict(params: ModelParams) -> dict:
    return {
        "version": ARCHIVE_VERSION,
        "model_config": params.config.to_dict(),
        "params": {
            name: {"shape": list(params[name].shape), "data": params[name].reshape(-1).tolist()}
            for name in params.names()
        },
    }


def dumps_model(params: ModelParams) -> str:
    return json.dumps(archive_to_dict(params), indent=1, allow_nan=False) + "\n"


def save_model(path, params: ModelParams | ModelArchive) -> None:
    if isinstance(params, ModelArchive):
        params = params.params
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(params))
    os.replace(tmp, path)


def loads_model(text: str) -> ModelArchive:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model archive is not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ParseError("model archive must be a JSON object")
    version = doc.get("version")
    if version != ARCHIVE_VERSION:
        raise IncompatibleVersionError(
            f"model archive version {version!r} is not supported (expected {ARCHIVE_VERSION})"
        )
    if not isinstance(doc.get("model_config"), dict) or not isinstance(doc.get("params"), dict):
        raise ParseError("model archive needs 'model_config' and 'params' objects")
    config = ModelConfig.from_dict(doc["model_config"])
    expected = param_shapes(config)
    raw = doc["params"]
    if set(raw) != set(expected):
        missing = sorted(set(expected) - set(raw))
        extra = sorted(set(raw) - set(expected))
        raise ValidationError(f"archive tensors do not match config: missing {missing}, unexpected {extra}")
    tensors = {}
    for name, shape in expected.items():
        entry = raw[name]
        if not isinstance(entry, dict) or "shape" not in entry or "data" not in entry:
            raise ParseError("tensor entry needs 'shape' and 'data'", field=name)
        if tuple(entry["shape"]) != shape:
            raise ValidationError(f"tensor {name}: shape {entry['shape']} does not match config shape {list(shape)}")
        data = np.array(entry["data"], dtype=np.float64)
        if data.ndim != 1 or data.size != int(np.prod(shape, dtype=np.int64)):
            raise ValidationError(f"tensor {name}: {data.size} values do not fill shape {list(shape)}")
        tensors[name] = data.reshape(shape)
    return ModelArchive(config, ModelParams(config, tensors), version)


def load_model(path) -> ModelArchive:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
