"""Gated-attention pooling, max/mean baselines and the two-way softmax head.

Everything is plain numpy in float64 with a hand-written backward pass, so
the gradients can be checked against finite differences directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonFinite

CLAMP = 1e-12


@dataclass
class SlideBag:
    slide_id: str
    patient_id: str
    H: np.ndarray  # L x D tile embeddings
    label: int  # 0 normal, 1 tumor
    coords: np.ndarray  # L x 2 (x, y), aligned to rows of H

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        if self.H.ndim != 2 or len(self.H) < 1:
            raise ValueError(f"{self.slide_id}: bag needs at least one embedding row")
        if len(self.coords) != len(self.H):
            raise ValueError(f"{self.slide_id}: {len(self.coords)} coords for {len(self.H)} embeddings")
        if not np.all(np.isfinite(self.H)):
            raise NonFinite(f"{self.slide_id}: non-finite embedding")
        if self.label not in (0, 1):
            raise ValueError(f"{self.slide_id}: label must be 0 or 1")


@dataclass
class GatedAttentionParams:
    V: np.ndarray  # A x D
    U: np.ndarray  # A x D
    w: np.ndarray  # A

    @classmethod
    def init(cls, dim: int, attn_dim: int = 256, rng=None):
        rng = np.random.default_rng(rng)
        scale = 1.0 / np.sqrt(dim)
        return cls(
            rng.uniform(-scale, scale, (attn_dim, dim)),
            rng.uniform(-scale, scale, (attn_dim, dim)),
            rng.uniform(-1, 1, attn_dim) / np.sqrt(attn_dim),
        )

    def arrays(self):
        return {"V": self.V, "U": self.U, "w": self.w}


@dataclass
class DiagnosisHead:
    W: np.ndarray  # 2 x D
    b: np.ndarray  # 2

    @classmethod
    def init(cls, dim: int, rng=None):
        rng = np.random.default_rng(rng)
        scale = 1.0 / np.sqrt(dim)
        return cls(rng.uniform(-scale, scale, (2, dim)), np.zeros(2))

    def arrays(self):
        return {"W": self.W, "b": self.b}


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _score_parts(H, params):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or len(H) < 1:
        raise ValueError("bag must be a nonempty L x D matrix")
    T = np.tanh(H @ params.V.T)
    G = _sigmoid(H @ params.U.T)
    e = (T * G) @ params.w
    if not np.all(np.isfinite(e)):
        raise NonFinite("non-finite attention score")
    return H, T, G, e


def _attention_parts(H, params):
    H, T, G, e = _score_parts(H, params)
    return H, T, G, _softmax(e)


def attention_scores(H, params: GatedAttentionParams) -> np.ndarray:
    """Pre-softmax gated attention scores; the weights are their softmax."""
    return _score_parts(H, params)[3]


def gated_attention(H, params: GatedAttentionParams):
    """Return ``(z, a)``: the attention-weighted mean of the rows and the weights."""
    H, _, _, a = _attention_parts(H, params)
    return a @ H, a


def max_pool(H) -> np.ndarray:
    return np.asarray(H, dtype=np.float64).max(axis=0)


def mean_pool(H) -> np.ndarray:
    return np.asarray(H, dtype=np.float64).mean(axis=0)


def head_probs(z, head: DiagnosisHead) -> np.ndarray:
    return _softmax(head.W @ z + head.b)


def diagnose(z, head: DiagnosisHead) -> float:
    """Tumor probability (softmax output for class 1)."""
    return float(head_probs(z, head)[1])


def diagnosis_loss(y, p) -> float:
    """Summed binary cross-entropy with probabilities clamped away from 0 and 1."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def pool(H, pooling: str, params: GatedAttentionParams | None = None):
    if pooling == "gated":
        return gated_attention(H, params)
    if pooling == "mean":
        return mean_pool(H), None
    if pooling == "max":
        return max_pool(H), None
    raise ValueError(f"unknown pooling {pooling!r}")


def bag_loss_and_grads(H, y: int, params: GatedAttentionParams | None, head: DiagnosisHead, pooling: str = "gated"):
    """Cross-entropy of one bag and its gradients.

    Returns ``(loss, grads)`` with ``grads`` keyed by ``W``, ``b`` and, for
    gated pooling, ``V``, ``U``, ``w``. Gradients ignore the log clamp, which
    only binds when a probability is within 1e-12 of 0 or 1.
    """
    if pooling == "gated":
        H, T, G, a = _attention_parts(H, params)
        z = a @ H
    else:
        z, _ = pool(H, pooling)
    probs = head_probs(z, head)
    loss = diagnosis_loss([y], [probs[1]])
    dlogits = probs - np.eye(2)[y]
    grads = {"W": np.outer(dlogits, z), "b": dlogits}
    if pooling == "gated":
        dz = head.W.T @ dlogits
        da = H @ dz
        de = a * (da - a @ da)
        S = T * G
        dS = np.outer(de, params.w)
        grads["w"] = S.T @ de
        grads["V"] = (dS * G * (1.0 - T**2)).T @ H
        grads["U"] = (dS * T * G * (1.0 - G)).T @ H
    return loss, grads
