"""Encoder seam: vector math, the deterministic hash encoder, and batch dispatch.

Every embedding in the engine is a 1-D float64 numpy array. Vectors are
L2-normalized before they are stored or indexed, so inner product equals
cosine similarity everywhere downstream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

HASH_STUB = "hash_stub"
EXTERNAL_BRIDGE = "external_bridge"

DEFAULT_HASH_DIM = 256

# Character n-gram sizes for the hash encoder. The text is padded with
# sentinels so even an empty string produces at least one feature.
_NGRAM_SIZES = (2, 3, 4)
_PAD_LEFT = "\x02"
_PAD_RIGHT = "\x03"


@dataclass(frozen=True)
class EncoderHandle:
    """Which encoder produces vectors for this run.

    kind is either ``hash_stub`` (local, deterministic, no model) or
    ``external_bridge`` (a sentence-encoder process speaking the wire
    protocol in bridge.py). dim is fixed for the life of the handle.
    """

    kind: str
    dim: int
    endpoint: str | None = None

    def __post_init__(self):
        if self.kind not in (HASH_STUB, EXTERNAL_BRIDGE):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("encoder dim must be positive")


def hash_stub_handle(dim: int = DEFAULT_HASH_DIM) -> EncoderHandle:
    return EncoderHandle(kind=HASH_STUB, dim=dim)


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v scaled to unit Euclidean norm. Raises on a zero vector."""
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between a and b, clipped to [-1, 1].

    Raises ValueError on dimension mismatch or a zero-norm input.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(np.clip(float(np.dot(a, b)) / (na * nb), -1.0, 1.0))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity; the distance convention used everywhere here."""
    return 1.0 - cosine_similarity(a, b)


def mean_pool(vectors: list[np.ndarray]) -> np.ndarray:
    """Componentwise arithmetic mean of a nonempty list of equal-dim vectors."""
    if not vectors:
        raise ValueError("mean_pool of an empty list")
    dim = vectors[0].shape
    for v in vectors[1:]:
        if v.shape != dim:
            raise ValueError(f"dimension mismatch: {dim} vs {v.shape}")
    return np.mean(np.stack(vectors), axis=0)


def hash_features(text: str, dim: int) -> np.ndarray:
    """Raw signed character-n-gram counts hashed into dim buckets.

    Deterministic across runs and platforms (blake2b, not the salted
    builtin hash). Used unnormalized as input features by the toy
    trainable encoder; hash_embed normalizes the same vector.
    """
    if dim < 8:
        raise ValueError("hash feature dim must be >= 8")
    padded = _PAD_LEFT + text + _PAD_RIGHT
    counts = np.zeros(dim, dtype=np.float64)
    raw = padded.encode("utf-8")
    for size in _NGRAM_SIZES:
        if len(raw) < size:
            continue
        for i in range(len(raw) - size + 1):
            digest = hashlib.blake2b(raw[i : i + size], digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "little") % dim
            sign = 1.0 if digest[4] & 1 else -1.0
            counts[bucket] += sign
    if not counts.any():
        # All signed counts cancelled; fall back to a single bias feature so
        # the vector stays normalizable.
        counts[0] = 1.0
    return counts


def hash_embed(text: str, dim: int = DEFAULT_HASH_DIM) -> np.ndarray:
    """Deterministic test encoder: normalized hash_features."""
    return normalize(hash_features(text, dim))


def _text_of(item) -> str:
    # Accepts MarkedContext-like objects or plain strings.
    return item.text if hasattr(item, "text") else item


def embed_batch(handle: EncoderHandle, texts: list) -> list[np.ndarray]:
    """Embed a nonempty batch of marked contexts or template strings.

    Order-preserving, one vector per input, each of dimension handle.dim.
    """
    if not texts:
        raise ValueError("embed_batch requires a nonempty text list")
    strings = [_text_of(t) for t in texts]
    if handle.kind == HASH_STUB:
        return [hash_embed(s, handle.dim) for s in strings]
    from .bridge import BridgeClient  # local import keeps hash path socket-free

    with BridgeClient(handle.endpoint) as client:
        dim, _ = client.handshake()
        if dim != handle.dim:
            from .errors import WireProtocolError

            raise WireProtocolError(
                f"bridge reports dim {dim}, handle expects {handle.dim}"
            )
        return client.embed(strings)
