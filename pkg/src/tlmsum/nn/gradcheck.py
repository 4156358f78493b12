"""Central finite-difference gradient checking (float64)."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np
import torch


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn: Callable[[], torch.Tensor], params: Iterable[torch.Tensor], h: float = 1e-4,
                    max_entries: int | None = None, seed: int = 0, floor: float = 1e-6) -> float:
    """Largest relative error between autograd and central differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter values.
    With ``max_entries`` only that many randomly chosen coordinates per tensor
    are probed.
    """
    params = list(params)
    for p in params:
        if p.dtype != torch.float64:
            raise TypeError("gradient checks run in float64")
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            n = flat.numel()
            idx = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
            for i in idx:
                old = float(flat[i])
                flat[i] = old + h
                up = float(loss_fn())
                flat[i] = old - h
                down = float(loss_fn())
                flat[i] = old
                numeric = (up - down) / (2 * h)
                worst = max(worst, relative_error(float(g.reshape(-1)[i]), numeric, floor))
    return worst
