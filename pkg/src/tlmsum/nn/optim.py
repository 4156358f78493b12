"""Adam with decoupled weight decay, learning-rate schedules and parameter stores."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn


@dataclass(frozen=True)
class ScheduleSpec:
    """``warmup_cosine``: linear 0 -> lr_max over ``warmup_steps``, then cosine to 0
    over ``decay_steps``. ``constant``: lr_max throughout."""

    lr_max: float = 2.5e-4
    warmup_steps: int = 40_000
    decay_steps: int = 200_000
    kind: str = "warmup_cosine"


def lr_schedule(step: int, spec: ScheduleSpec) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if spec.kind == "constant":
        return spec.lr_max
    if spec.kind != "warmup_cosine":
        raise ValueError(f"unknown schedule kind {spec.kind!r}")
    if step < spec.warmup_steps:
        return spec.lr_max * step / spec.warmup_steps
    progress = (step - spec.warmup_steps) / spec.decay_steps if spec.decay_steps else 1.0
    if progress >= 1.0:
        return 0.0
    return spec.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class TrainConfig:
    schedule: ScheduleSpec = field(default_factory=lambda: ScheduleSpec(1e-3, 0, 0, "constant"))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    batch_size: int = 32
    dropout: float = 0.5
    seed: int = 0
    eval_every: int = 200
    patience: int = 50
    max_updates: int = 10_000
    clip_norm: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be a probability")
        for name in ("batch_size", "eval_every", "patience", "max_updates"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("schedule"), dict):
            d["schedule"] = ScheduleSpec(**d["schedule"])
        return cls(**d)


class MissingGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor


class ParameterStore:
    """Named parameters of a module together with their Adam moments."""

    def __init__(self, module: nn.Module):
        self.module = module
        self.params: dict[str, nn.Parameter] = dict(module.named_parameters())
        self.state: dict[str, AdamState] = {
            name: AdamState(torch.zeros_like(p), torch.zeros_like(p)) for name, p in self.params.items()
        }
        self.step = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(p.grad.pow(2).sum())
        return math.sqrt(total)

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.grad_norm()
        if max_norm > 0 and norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for p in self.params.values():
                if p.grad is not None:
                    p.grad.mul_(scale)
        return norm

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {name: p.detach().clone() for name, p in self.params.items()}

    def restore(self, snap: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self.params.items():
                p.copy_(snap[name])


def adam_step(store: ParameterStore, config: TrainConfig, lr: float) -> ParameterStore:
    """One Adam update; weight decay is decoupled (applied directly to the weights)."""
    for name, p in store.params.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
    store.step += 1
    t = store.step
    b1, b2 = config.beta1, config.beta2
    bc1 = 1 - b1**t
    bc2 = 1 - b2**t
    with torch.no_grad():
        for name, p in store.params.items():
            g = p.grad
            st = store.state[name]
            st.m.mul_(b1).add_(g, alpha=1 - b1)
            st.v.mul_(b2).addcmul_(g, g, value=1 - b2)
            update = (st.m / bc1) / ((st.v / bc2).sqrt() + config.eps)
            if config.weight_decay:
                update = update + config.weight_decay * p
            p.sub_(lr * update)
    return store
