"""Central finite-difference checks of autograd gradients."""

from __future__ import annotations

import numpy as np
import torch


def relative_errors(analytic, numeric) -> np.ndarray:
    """``|a - n| / max(|a|, |n|)`` per component; 0 where both are exactly 0."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(n))
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(a - n) / denom
    return np.where(denom == 0, 0.0, err)


def finite_difference_check(loss_fn, tensors, step: float = 1e-4):
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    ``tensors`` are perturbed in place one scalar at a time and restored.
    Returns ``(analytic, numeric, rel_err)`` flattened over all components.
    """
    tensors = list(tensors)
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad_(True)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    analytic = np.concatenate(
        [(torch.zeros_like(t) if g is None else g).detach().reshape(-1).numpy() for t, g in zip(tensors, grads)]
    )
    numeric = []
    with torch.no_grad():
        for t in tensors:
            flat = t.data.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                fp = float(loss_fn())
                flat[i] = orig - step
                fm = float(loss_fn())
                flat[i] = orig
                numeric.append((fp - fm) / (2 * step))
    for t, f in zip(tensors, flags):
        t.requires_grad_(f)
    numeric = np.asarray(numeric)
    return analytic, numeric, relative_errors(analytic, numeric)


def pass_fraction(rel_err, tol: float = 1e-3) -> float:
    rel_err = np.asarray(rel_err)
    return float(np.mean(rel_err <= tol)) if rel_err.size else 1.0
