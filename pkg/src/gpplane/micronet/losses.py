"""Losses with exact gradients with respect to the network output.

All losses are means over the batch. Probabilities fed to ``bce``/``ce``
are clamped to [1e-7, 1 - 1e-7]; the gradient is zero where the clamp is
active. ``sigmoid_focal`` and ``sn_combined`` take logits.
"""
from __future__ import annotations

import numpy as np

from gpplane.micronet.net import sigmoid

PROB_EPS = 1e-7
LOSSES = ("mse", "bce", "ce", "sigmoid_focal", "sn_combined")


def _bce_with_logits(z, t):
    return np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))


def _focal(z, t, alpha, gamma):
    """Elementwise focal loss on logits and its derivative."""
    p = sigmoid(z)
    ce = _bce_with_logits(z, t)
    p_t = p * t + (1 - p) * (1 - t)
    a_t = alpha * t + (1 - alpha) * (1 - t) if alpha >= 0 else np.ones_like(z)
    q = 1 - p_t
    loss = a_t * ce * q**gamma
    dce = p - t
    dq = -p * (1 - p) * (2 * t - 1)
    if gamma == 0:
        grad = a_t * dce
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            qg1 = np.where(q > 0, q ** (gamma - 1), 0.0) if gamma < 1 else q ** (gamma - 1)
        grad = a_t * (dce * q**gamma + ce * gamma * qg1 * dq)
    return loss, grad


def compute_loss(kind: str, pred, target, mask=None, *, alpha: float = 0.25, gamma: float = 2.0, lam: float = 6.0):
    """Return (loss, d loss / d pred).

    ``ce`` takes (N, C) class probabilities with one-hot or integer targets;
    a (N,) vector is read as the positive-class probability of two classes.
    ``sn_combined`` takes (N, 2) logits [objectness, offset], targets
    [contains, offset_frac] and ``mask`` flagging windows that contain the
    plane: focal(objectness) + lam * masked MSE(sigmoid(offset)).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n = pred.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if kind == "mse":
        if pred.shape != target.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
        diff = pred - target
        return float(np.mean(diff**2)), 2 * diff / diff.size
    if kind in ("bce", "ce") and pred.ndim == 1:
        if target.shape != pred.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
        p = np.clip(pred, PROB_EPS, 1 - PROB_EPS)
        loss = -(target * np.log(p) + (1 - target) * np.log(1 - p))
        live = (pred > PROB_EPS) & (pred < 1 - PROB_EPS)
        grad = np.where(live, (p - target) / (p * (1 - p)), 0.0) / n
        return float(loss.mean()), grad
    if kind == "ce":
        if target.ndim == 1:
            onehot = np.zeros_like(pred)
            onehot[np.arange(n), target.astype(int)] = 1.0
            target = onehot
        if target.shape != pred.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
        p = np.clip(pred, PROB_EPS, 1 - PROB_EPS)
        live = (pred > PROB_EPS) & (pred < 1 - PROB_EPS)
        loss = -(target * np.log(p)).sum(axis=1)
        return float(loss.mean()), np.where(live, -target / p, 0.0) / n
    if kind == "bce":
        raise ValueError("bce needs a 1-D probability vector")
    if kind == "sigmoid_focal":
        if target.shape != pred.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
        loss, grad = _focal(pred, target, alpha, gamma)
        return float(loss.mean()), grad / pred.size
    if kind == "sn_combined":
        if pred.ndim != 2 or pred.shape[1] != 2 or target.shape != pred.shape:
            raise ValueError("sn_combined needs (N, 2) logits and (N, 2) targets")
        m = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64).reshape(n)
        fl, dfl = _focal(pred[:, 0], target[:, 0], alpha, gamma)
        s = sigmoid(pred[:, 1])
        sq = m * (s - target[:, 1]) ** 2
        grad = np.zeros_like(pred)
        grad[:, 0] = dfl / n
        grad[:, 1] = lam * 2 * m * (s - target[:, 1]) * s * (1 - s) / n
        return float(fl.mean() + lam * sq.mean()), grad
    raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES}")
