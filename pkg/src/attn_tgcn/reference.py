"""Straight-line reference forward pass and loss.

Written without the tape, with explicit per-node loops, and generic over the
floating dtype.  It exists to check the taped model: the scripted forward
oracle in the tests and the objective for the gradient check both come from
here.  Evaluating in ``np.longdouble`` pushes finite-difference round-off well
below the tolerance of the check.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_forward(features, adjacency, mask, tensors, config, dtype=np.float64):
    """Return ``(probs (n, 2), alpha (n, t), contexts (n, h), hidden (t, n, h))``."""
    x = np.asarray(features, dtype=dtype)
    a = np.asarray(adjacency, dtype=dtype)
    p = {k: np.asarray(v, dtype=dtype) for k, v in tensors.items()}
    t, n, _ = x.shape
    if config.isolate_padded:
        keep = np.asarray(mask, dtype=dtype)
        a = a * np.outer(keep, keep)

    a_tilde = a + np.eye(n, dtype=dtype)
    deg = a_tilde.sum(axis=1)
    a_hat = np.empty((n, n), dtype=dtype)
    for i in range(n):
        for j in range(n):
            a_hat[i, j] = a_tilde[i, j] / np.sqrt(deg[i] * deg[j])

    h = np.zeros((n, config.h), dtype=dtype)
    hidden = []
    for step in range(t):
        z = a_hat @ x[step] @ p["w_g"]
        if config.gc_root_weight:
            z = z + x[step] @ p["w_s"]
        if config.gc_layers == 2:
            z1 = np.maximum(z, 0)
            z = a_hat @ z1 @ p["w_g2"]
            if config.gc_root_weight:
                z = z + z1 @ p["w_s2"]
        zh = np.hstack([z, h])
        u = _sigmoid(zh @ p["w_u"] + p["b_u"])
        r = _sigmoid(zh @ p["w_r"] + p["b_r"])
        c = np.tanh(np.hstack([z, r * h]) @ p["w_c"] + p["b_c"])
        h = u * h + (1 - u) * c
        hidden.append(h)
    hidden = np.stack(hidden)

    alpha = np.empty((n, t), dtype=dtype)
    contexts = np.empty((n, config.h), dtype=dtype)
    probs = np.empty((n, 2), dtype=dtype)
    for v in range(n):
        scores = np.empty(t, dtype=dtype)
        for i in range(t):
            inner = p["w_1"] @ hidden[i, v] + p["b_1"]
            if config.attention_tanh:
                inner = np.tanh(inner)
            scores[i] = (p["w_2"] @ inner)[0] + p["b_2"]
        e = np.exp(scores - scores.max())
        alpha[v] = e / e.sum()
        contexts[v] = sum(alpha[v, i] * hidden[i, v] for i in range(t))
        logits = p["w_o"] @ contexts[v] + p["b_o"]
        e = np.exp(logits - logits.max())
        probs[v] = e / e.sum()
    return probs, alpha, contexts, hidden


def reference_loss(seq, tensors, config, train_config, dtype=np.float64):
    """Summed weighted per-node cross entropy of :func:`reference_forward`."""
    probs, *_ = reference_forward(seq.features, seq.adjacency, seq.mask, tensors, config, dtype)
    total = dtype(0)
    for v in range(seq.n):
        if not train_config.include_padded_in_loss and seq.mask[v] == 0:
            continue
        label = int(seq.labels[v])
        w = train_config.death_class_weight if label == 1 else 1.0
        total = total - w * np.log(max(probs[v, label], dtype(1e-12)))
    return total
