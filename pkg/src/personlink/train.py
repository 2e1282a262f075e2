"""Online contrastive loss and a desk-scale trainable encoder.

The loss selects the hard subset of a batch — negatives closer than the
farthest positive, positives farther than the nearest negative — and
averages squared-distance penalties over the selection. When a batch has
only one class, the corresponding selector has no reference point and is
skipped, so the whole class is kept.

The trainable encoder is a linear map over hash features. It exists to
validate the loss and gradient plumbing end to end at desk scale, not to
approximate a neural encoder: the analytic cosine-distance gradient flows
through the same selection rule the loss uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encode import hash_features
from .mine import PairExample

DEFAULT_MARGIN = 0.4

_NORM_FLOOR = 1e-30


def online_contrastive_loss(
    batch: list[tuple[float, int]], margin: float = DEFAULT_MARGIN
) -> float:
    """Mean hard-subset contrastive loss over (cosine distance, label) pairs."""
    if not batch:
        raise ValueError("empty batch")
    for dist, _ in batch:
        if not -1e-9 <= dist <= 2.0 + 1e-9:
            raise ValueError(f"cosine distance {dist} outside [0, 2]")
    pos = [d for d, label in batch if label == 1]
    neg = [d for d, label in batch if label == 0]
    if pos and neg:
        sel_pos = [d for d in pos if d > min(neg)]
        sel_neg = [d for d in neg if d < max(pos)]
    else:
        sel_pos, sel_neg = pos, neg
    terms = [d * d for d in sel_pos]
    terms += [max(0.0, margin - d) ** 2 for d in sel_neg]
    if not terms:
        return 0.0
    return sum(terms) / len(terms)


@dataclass
class LinearHashEncoder:
    """Embedding = W @ hash_features(text); rows of W are learned."""

    weights: np.ndarray  # (out_dim, in_dim)

    @classmethod
    def initialized(cls, out_dim: int, in_dim: int, seed: int = 0) -> "LinearHashEncoder":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
        return cls(weights=w)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def embed(self, text: str) -> np.ndarray:
        return self.weights @ hash_features(text, self.in_dim)


def _cosine_and_grads(u: np.ndarray, v: np.ndarray):
    """cos(u, v) plus its gradients w.r.t. u and v."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < _NORM_FLOOR or nv < _NORM_FLOOR:
        raise ValueError("zero-norm embedding; cosine gradient undefined")
    c = float(u @ v) / (nu * nv)
    du = v / (nu * nv) - c * u / (nu * nu)
    dv = u / (nu * nv) - c * v / (nv * nv)
    return c, du, dv


def loss_and_grad(
    encoder: LinearHashEncoder,
    batch: list[PairExample],
    margin: float = DEFAULT_MARGIN,
) -> tuple[float, np.ndarray]:
    """Batch loss and its analytic gradient w.r.t. the encoder weights.

    The hard-subset selection is held fixed while differentiating, as in
    minibatch practice.
    """
    if not batch:
        raise ValueError("empty batch")
    feats = [
        (hash_features(p.text_a, encoder.in_dim), hash_features(p.text_b, encoder.in_dim))
        for p in batch
    ]
    sides = []
    for (ha, hb), p in zip(feats, batch):
        u = encoder.weights @ ha
        v = encoder.weights @ hb
        c, du, dv = _cosine_and_grads(u, v)
        sides.append((1.0 - c, p.label, ha, hb, du, dv))

    pos = [s for s in sides if s[1] == 1]
    neg = [s for s in sides if s[1] == 0]
    if pos and neg:
        min_neg = min(s[0] for s in neg)
        max_pos = max(s[0] for s in pos)
        sel = [s for s in pos if s[0] > min_neg] + [s for s in neg if s[0] < max_pos]
    else:
        sel = pos + neg

    grad = np.zeros_like(encoder.weights)
    if not sel:
        return 0.0, grad
    total = 0.0
    for dist, label, ha, hb, du, dv in sel:
        if label == 1:
            total += dist * dist
            dldd = 2.0 * dist
        else:
            hinge = max(0.0, margin - dist)
            total += hinge * hinge
            dldd = -2.0 * hinge
        # d(dist)/dW = -d(cos)/dW; cos grads flow through both texts
        dldc = -dldd
        grad += dldc * (np.outer(du, ha) + np.outer(dv, hb))
    n = len(sel)
    return total / n, grad / n


def toy_train_step(
    encoder: LinearHashEncoder,
    batch: list[PairExample],
    margin: float = DEFAULT_MARGIN,
    lr: float = 0.1,
) -> tuple[LinearHashEncoder, float]:
    """One gradient-descent step; returns the updated encoder and the loss
    measured before the step."""
    loss, grad = loss_and_grad(encoder, batch, margin)
    return LinearHashEncoder(weights=encoder.weights - lr * grad), loss
