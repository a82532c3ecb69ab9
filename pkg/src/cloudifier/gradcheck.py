"""Central finite-difference checking of tape gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .ops import reduce_sum
from .tensor import GradTape, Tensor

# one-sided slopes differing by more than this (relative and absolute) mark a kink
KINK_RELATIVE = 0.1
KINK_ABSOLUTE = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def _scalar(out, weights) -> float:
    data = out.data if isinstance(out, Tensor) else out
    if weights is None:
        return float(np.sum(np.asarray(data, dtype=np.float64)))
    return float(np.sum(np.asarray(data, dtype=np.float64) * weights))


def sampled_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Tape and central-difference gradients of ``fn(*inputs)`` at sampled entries.

    Non-scalar outputs are reduced to ``sum(out * R)`` with a fixed random
    ``R``. Only tensors with ``requires_grad`` are visited. At most
    ``max_entries`` randomly chosen entries per tensor are perturbed.

    Returns one ``(analytic, numeric, smooth)`` triple per visited tensor.
    ``smooth`` is False where the forward and backward one-sided slopes
    disagree, i.e. the +-eps probe straddled a kink (a ReLU switching).
    """
    rng = np.random.default_rng(seed)
    with GradTape() as tape:
        out = fn(*inputs)
        weights = None if out.size == 1 else rng.standard_normal(out.shape)
        loss = out if weights is None else reduce_sum(out, weights)
    f0 = _scalar(out, weights)
    for t in inputs:
        t.grad = None
    tape.backward(loss)

    triples = []
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat_idx = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            flat_idx = rng.choice(t.size, size=max_entries, replace=False)
        numeric = np.empty(len(flat_idx))
        picked = np.empty(len(flat_idx))
        smooth = np.ones(len(flat_idx), dtype=bool)
        view = t.data.reshape(-1)
        for k, i in enumerate(flat_idx):
            orig = view[i].copy()
            view[i] = orig + eps
            f_plus = _scalar(fn(*inputs), weights)
            up = float(np.asarray(orig + eps, dtype=t.dtype)) - float(orig)
            view[i] = orig - eps
            f_minus = _scalar(fn(*inputs), weights)
            down = float(orig) - float(np.asarray(orig - eps, dtype=t.dtype))
            view[i] = orig
            # divide by the step actually taken after rounding to the storage dtype
            numeric[k] = (f_plus - f_minus) / (up + down)
            picked[k] = np.asarray(analytic).reshape(-1)[i]
            d_plus, d_minus = (f_plus - f0) / up, (f0 - f_minus) / down
            gap = abs(d_plus - d_minus)
            smooth[k] = not (gap > KINK_RELATIVE * max(abs(d_plus), abs(d_minus)) and gap > KINK_ABSOLUTE)
        triples.append((picked, numeric, smooth))
    return triples


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> list[float]:
    """Norm-wise relative error of the tape gradient, one per checked tensor."""
    return [relative_error(a, n) for a, n, _ in sampled_gradients(fn, inputs, eps, max_entries, seed)]


def check_gradients_joint(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    max_entries: Optional[int] = None,
    seed: int = 0,
    skip_kinks: bool = False,
) -> tuple[float, int]:
    """Single relative error over all sampled entries of all tensors, plus the entry count.

    Useful for whole networks, where some tensors (a bias feeding batch-norm,
    say) have an exactly zero gradient that a per-tensor ratio would turn into
    noise. With ``skip_kinks`` entries whose probe straddled a non-smooth point
    are left out, and the count covers only the entries actually compared.
    """
    triples = sampled_gradients(fn, inputs, eps, max_entries, seed)
    a = np.concatenate([t[0] for t in triples])
    n = np.concatenate([t[1] for t in triples])
    if skip_kinks:
        keep = np.concatenate([t[2] for t in triples])
        a, n = a[keep], n[keep]
    return relative_error(a, n), a.size
