from __future__ import annotations

import numpy as np

from gpplane.micronet.losses import compute_loss
from gpplane.micronet.net import MicroNet


def grad_check(
    net: MicroNet,
    x: np.ndarray,
    target,
    loss: str = "mse",
    eps: float = 1e-4,
    n_check: int = 100,
    seed: int = 0,
    mask=None,
    loss_kwargs: dict | None = None,
    max_shrink: int = 3,
) -> float:
    """Max relative error of analytic vs central-difference parameter gradients.

    Runs in float64 on a copy of ``net`` and checks ``n_check`` randomly
    chosen parameters (all of them when the net is smaller). Relative error
    is |a - n| / max(|a|, |n|, 1e-8). A step whose +/- evaluations switch a
    ReLU or max-pool choice straddles a kink, where the difference quotient
    is not a derivative; such steps are retried at eps/10, up to
    ``max_shrink`` times.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss_kwargs = loss_kwargs or {}
    probe = net.copy(np.float64)
    x = np.asarray(x, dtype=np.float64)

    def evaluate() -> tuple[float, bytes]:
        out, cache = probe.forward(x)
        return compute_loss(loss, out, target, mask, **loss_kwargs)[0], probe.activation_pattern(cache)

    out, cache = probe.forward(x)
    _, dout = compute_loss(loss, out, target, mask, **loss_kwargs)
    analytic = probe.backward(cache, dout)
    pattern = probe.activation_pattern(cache)

    sizes = np.array([p.size for p in probe.params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat_ids = np.arange(total) if total <= n_check else np.sort(rng.choice(total, n_check, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for fid in flat_ids:
        pi = int(np.searchsorted(offsets, fid, side="right") - 1)
        flat = probe.params[pi].reshape(-1)
        j = fid - offsets[pi]
        orig = flat[j]
        step = eps
        for _ in range(max_shrink + 1):
            flat[j] = orig + step
            plus, pat_plus = evaluate()
            flat[j] = orig - step
            minus, pat_minus = evaluate()
            flat[j] = orig
            if pat_plus == pattern and pat_minus == pattern:
                break
            step /= 10
        numeric = (plus - minus) / (2 * step)
        a = analytic[pi].reshape(-1)[j]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return float(worst)
