"""Contrastive loss against a bank of adversarial negatives, with analytic gradients.

For queries ``q`` (N x P), positives ``q'`` (N x P) and negatives ``M`` (K x P)::

    L = -(1/N) sum_i log( e^{q_i.q'_i/tau} / (e^{q_i.q'_i/tau} + sum_k e^{q_i.m_k/tau}) )

With ``p_i`` the softmax over the K+1 logits of row i (positive first)::

    dL/dq_i  = ((p_i0 - 1) q'_i + sum_k p_ik m_k) / (N tau)
    dL/dq'_i = (p_i0 - 1) q_i / (N tau)
    dL/dm_k  = sum_i p_ik q_i / (N tau)

The encoder descends L; the bank ascends it.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFinite, NumericalDegeneracy


def _check(name, x):
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"{name} contains non-finite values")


def _logits(q, q_pos, bank, tau):
    q = np.asarray(q, dtype=np.float64)
    q_pos = np.asarray(q_pos, dtype=np.float64)
    bank = np.asarray(bank, dtype=np.float64)
    if not tau > 0:
        raise ValueError("temperature must be positive")
    if bank.ndim != 2 or bank.shape[0] < 1:
        raise ValueError("bank must be a K x P matrix with K >= 1")
    if q.shape != q_pos.shape or q.shape[1] != bank.shape[1]:
        raise ValueError(f"shape mismatch: q {q.shape}, q' {q_pos.shape}, bank {bank.shape}")
    for name, x in (("q", q), ("q'", q_pos), ("bank", bank)):
        _check(name, x)
    logits = np.concatenate([np.sum(q * q_pos, axis=1, keepdims=True), q @ bank.T], axis=1) / tau
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return q, q_pos, bank, logits, lse


def contrastive_loss(q, q_pos, bank, tau: float) -> float:
    _, _, _, logits, lse = _logits(q, q_pos, bank, tau)
    loss = float(np.mean(lse - logits[:, 0]))
    _check("loss", loss)
    return loss


def contrastive_loss_and_grads(q, q_pos, bank, tau: float):
    """Return ``(loss, dL/dq, dL/dq', dL/dM)`` in float64."""
    q, q_pos, bank, logits, lse = _logits(q, q_pos, bank, tau)
    n = q.shape[0]
    loss = float(np.mean(lse - logits[:, 0]))
    p = np.exp(logits - lse[:, None])
    scale = 1.0 / (n * tau)
    pos_coef = (p[:, 0] - 1.0)[:, None]
    d_q = scale * (pos_coef * q_pos + p[:, 1:] @ bank)
    d_qpos = scale * pos_coef * q
    d_bank = scale * (p[:, 1:].T @ q)
    for name, x in (("loss", loss), ("dL/dq", d_q), ("dL/dM", d_bank)):
        _check(name, x)
    return loss, d_q, d_qpos, d_bank


def l2_normalize(x, eps: float = 1e-12):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < eps):
        raise NumericalDegeneracy("cannot normalize a zero vector")
    return x / norms


def update_negatives(bank, q, q_pos, tau: float, lr: float, grad=None, renormalize: bool = True):
    """One gradient-ascent step on the negatives, then projection back to the unit sphere.

    ``grad`` may carry a precomputed dL/dM from the same forward pass.
    """
    bank = np.asarray(bank, dtype=np.float64)
    if grad is None:
        _, _, _, grad = contrastive_loss_and_grads(q, q_pos, bank, tau)
    _check("dL/dM", grad)
    moved = bank + lr * grad
    return l2_normalize(moved) if renormalize else moved
