"""Shape-checked differentiable primitives on torch tensors.

Gradients come from torch's reverse-mode autograd; these wrappers pin the
exact formulas used by the models and fail loudly on shape mismatches.
"""

from __future__ import annotations

import math

import torch


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes, detail: str = ""):
        shapes_s = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shapes_s}" + (f" ({detail})" if detail else ""))


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """x @ weight + bias with weight stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError("linear", x.shape, weight.shape)
    y = x @ weight
    if bias is not None:
        if bias.shape != weight.shape[1:]:
            raise ShapeError("linear", weight.shape, bias.shape, detail="bias")
        y = y + bias
    return y


def embedding(ids: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    if ids.dtype not in (torch.int64, torch.int32):
        raise TypeError(f"embedding: ids must be integer, got {ids.dtype}")
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeError("embedding", ids.shape, table.shape, detail="id out of range")
    return table[ids]


def softmax(x: torch.Tensor, dim: int = -1, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Numerically stable softmax; ``mask`` (True = keep) removes entries."""
    if mask is not None:
        if mask.shape != x.shape:
            mask = mask.expand_as(x) if _broadcastable(mask.shape, x.shape) else None
            if mask is None:
                raise ShapeError("softmax", x.shape, "mask")
        x = x.masked_fill(~mask, float("-inf"))
    z = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: torch.Tensor, dim: int = -1, mask: torch.Tensor | None = None) -> torch.Tensor:
    if mask is not None:
        x = x.masked_fill(~mask.expand_as(x), float("-inf"))
    z = x - x.amax(dim=dim, keepdim=True).detach()
    return z - torch.log(torch.exp(z).sum(dim=dim, keepdim=True))


def _broadcastable(a, b) -> bool:
    try:
        torch.broadcast_shapes(tuple(a), tuple(b))
        return True
    except RuntimeError:
        return False


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    return 0.5 * x * (1.0 + torch.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x.pow(3))))


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.mean(dim=-1, keepdim=True)
    var = (x - mu).pow(2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gain + bias


def dropout(x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None = None) -> torch.Tensor:
    """Inverted dropout drawing its mask from ``generator`` for reproducibility."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None,
                  logit_mask: torch.Tensor | None = None, reduction: str = "mean") -> torch.Tensor:
    """Categorical cross-entropy over the last axis.

    ``mask`` selects which target positions count; ``logit_mask`` (True = valid
    class) restricts the support, as needed for variable-length pointer targets.
    """
    if logits.shape[:-1] != targets.shape:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    logp = log_softmax(logits, dim=-1, mask=logit_mask)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if mask is not None:
        if mask.shape != targets.shape:
            raise ShapeError("cross_entropy", targets.shape, mask.shape, detail="mask")
        nll = nll * mask.to(nll.dtype)
        denom = mask.sum()
    else:
        denom = torch.tensor(nll.numel())
    if reduction == "sum":
        return nll.sum()
    if reduction == "none":
        return nll
    return nll.sum() / denom.clamp(min=1).to(nll.dtype)


def binary_cross_entropy(probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None,
                         eps: float = 1e-12) -> torch.Tensor:
    if probs.shape != targets.shape:
        raise ShapeError("binary_cross_entropy", probs.shape, targets.shape)
    t = targets.to(probs.dtype)
    nll = -(t * torch.log(probs.clamp(min=eps)) + (1 - t) * torch.log((1 - probs).clamp(min=eps)))
    if mask is None:
        return nll.mean()
    m = mask.to(nll.dtype)
    return (nll * m).sum() / m.sum().clamp(min=1)


def binary_cross_entropy_logits(logits: torch.Tensor, targets: torch.Tensor,
                                mask: torch.Tensor | None = None) -> torch.Tensor:
    """Stable BCE computed from pre-sigmoid scores."""
    if logits.shape != targets.shape:
        raise ShapeError("binary_cross_entropy_logits", logits.shape, targets.shape)
    t = targets.to(logits.dtype)
    nll = torch.clamp(logits, min=0) - logits * t + torch.log1p(torch.exp(-logits.abs()))
    if mask is None:
        return nll.mean()
    m = mask.to(nll.dtype)
    return (nll * m).sum() / m.sum().clamp(min=1)


def concat(tensors, dim: int = -1) -> torch.Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat", detail="no inputs")
    ref = list(tensors[0].shape)
    d = dim % len(ref)
    for t in tensors[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != d):
            raise ShapeError("concat", *(x.shape for x in tensors))
    return torch.cat(tensors, dim=dim)


def mean(x: torch.Tensor, dim=None, mask: torch.Tensor | None = None, keepdim: bool = False) -> torch.Tensor:
    """Mean over ``dim``; with ``mask`` only True positions (shape of x minus trailing feature axes) count."""
    if mask is None:
        return x.mean() if dim is None else x.mean(dim=dim, keepdim=keepdim)
    m = mask.to(x.dtype)
    while m.dim() < x.dim():
        m = m.unsqueeze(-1)
    total = (x * m).sum(dim=dim, keepdim=keepdim)
    count = m.sum(dim=dim, keepdim=keepdim).clamp(min=1)
    return total / count
