"""Layers shared by the extractors and the transformer language model.

All weights start from N(0, 0.02) and biases from zero, with no depth-based
rescaling.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from . import ops

INIT_STD = 0.02


def normal_param(*shape, std: float = INIT_STD) -> nn.Parameter:
    return nn.Parameter(torch.randn(*shape) * std)


def zeros_param(*shape) -> nn.Parameter:
    return nn.Parameter(torch.zeros(*shape))


class Dropout(nn.Module):
    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.generator: torch.Generator | None = None

    def forward(self, x):
        return ops.dropout(x, self.p, self.training, self.generator)


def seed_dropout(module: nn.Module, seed: int) -> torch.Generator:
    """Give every Dropout under ``module`` one shared seeded generator."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, Dropout):
            m.generator = gen
    return gen


class Linear(nn.Module):
    def __init__(self, n_in: int, n_out: int, bias: bool = True, std: float = INIT_STD):
        super().__init__()
        self.weight = normal_param(n_in, n_out, std=std)
        self.bias = zeros_param(n_out) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Embedding(nn.Module):
    def __init__(self, n: int, dim: int, std: float = INIT_STD):
        super().__init__()
        self.weight = normal_param(n, dim, std=std)

    def forward(self, ids):
        return ops.embedding(ids, self.weight)


class LayerNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.bias = zeros_param(dim)
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class LSTMCell(nn.Module):
    """Gate order: input, forget, cell candidate, output."""

    def __init__(self, n_in: int, hidden: int, std: float = INIT_STD):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        self.w_x = normal_param(n_in, 4 * hidden, std=std)
        self.w_h = normal_param(hidden, 4 * hidden, std=std)
        self.bias = zeros_param(4 * hidden)

    def project_input(self, x):
        return ops.linear(x, self.w_x, self.bias)

    def step(self, x_proj, state):
        """One step given the precomputed input projection."""
        h, c = state
        gates = x_proj + ops.matmul(h, self.w_h)
        i, f, g, o = gates.chunk(4, dim=-1)
        c = ops.sigmoid(f) * c + ops.sigmoid(i) * ops.tanh(g)
        h = ops.sigmoid(o) * ops.tanh(c)
        return h, c

    def forward(self, x, state):
        return self.step(self.project_input(x), state)

    def zero_state(self, batch: int, like: torch.Tensor):
        z = like.new_zeros(batch, self.hidden)
        return z, z


def run_lstm(cell: LSTMCell, x: torch.Tensor, mask: torch.Tensor | None = None, reverse: bool = False):
    """Run ``cell`` over x (B, T, D). Padded steps (mask False) keep the state.

    Padding must be trailing; in reverse the state stays at zero until the
    first real token, so the final state is the one after position 0.
    Returns outputs (B, T, H) with zeros at padding, and the final (h, c).
    """
    if x.dim() != 3 or x.shape[-1] != cell.n_in:
        raise ops.ShapeError("lstm", x.shape, (cell.n_in,))
    B, T, _ = x.shape
    if T == 0:
        raise ops.ShapeError("lstm", x.shape, detail="empty sequence")
    proj = cell.project_input(x)
    h, c = cell.zero_state(B, x)
    outs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h_new, c_new = cell.step(proj[:, t], (h, c))
        if mask is not None:
            m = mask[:, t].unsqueeze(-1).to(x.dtype)
            h = m * h_new + (1 - m) * h
            c = m * c_new + (1 - m) * c
            outs[t] = h_new * m
        else:
            h, c = h_new, c_new
            outs[t] = h
    return torch.stack(outs, dim=1), (h, c)


class BiLSTM(nn.Module):
    """Stacked bidirectional LSTM; dropout sits between layers."""

    def __init__(self, n_in: int, hidden: int, layers: int = 2, dropout: float = 0.0, std: float = INIT_STD):
        super().__init__()
        if layers < 1:
            raise ValueError("layers must be >= 1")
        self.hidden = hidden
        self.fwd = nn.ModuleList()
        self.bwd = nn.ModuleList()
        for layer in range(layers):
            width = n_in if layer == 0 else 2 * hidden
            self.fwd.append(LSTMCell(width, hidden, std))
            self.bwd.append(LSTMCell(width, hidden, std))
        self.drop = Dropout(dropout)

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    def forward(self, x, mask=None):
        """Returns per-position outputs (B, T, 2H) and the last layer's final
        forward and backward hidden states (each (B, H))."""
        h_f = h_b = None
        for layer, (f, b) in enumerate(zip(self.fwd, self.bwd)):
            if layer > 0:
                x = self.drop(x)
            out_f, (h_f, _) = run_lstm(f, x, mask)
            out_b, (h_b, _) = run_lstm(b, x, mask, reverse=True)
            x = ops.concat([out_f, out_b], dim=-1)
        return x, (h_f, h_b)


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"embedding width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim)
        self.proj = Linear(dim, dim)
        self.attn_drop = Dropout(dropout)

    def forward(self, x):
        B, T, D = x.shape
        hd = D // self.heads
        q, k, v = self.qkv(x).split(D, dim=-1)
        q = q.view(B, T, self.heads, hd).transpose(1, 2)
        k = k.view(B, T, self.heads, hd).transpose(1, 2)
        v = v.view(B, T, self.heads, hd).transpose(1, 2)
        scores = ops.matmul(q, k.transpose(-2, -1)) / math.sqrt(hd)
        causal = torch.ones(T, T, dtype=torch.bool, device=x.device).tril()
        att = self.attn_drop(ops.softmax(scores, dim=-1, mask=causal))
        y = ops.matmul(att, v).transpose(1, 2).reshape(B, T, D)
        return self.proj(y)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc = Linear(dim, hidden)
        self.out = Linear(hidden, dim)

    def forward(self, x):
        return self.out(ops.gelu(self.fc(x)))


class Block(nn.Module):
    """Pre-norm transformer block; dropout on both sub-layer outputs."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, dropout: float = 0.0):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads, dropout)
        self.ln2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_dim)
        self.drop = Dropout(dropout)

    def forward(self, x):
        x = x + self.drop(self.attn(self.ln1(x)))
        return x + self.drop(self.mlp(self.ln2(x)))


class TransformerLM(nn.Module):
    """Decoder-only language model with learned positions and a tied output matrix."""

    def __init__(self, vocab_size: int, dim: int = 128, layers: int = 4, heads: int = 4,
                 window: int = 256, mlp_dim: int | None = None, dropout: float = 0.0):
        super().__init__()
        self.vocab_size, self.dim, self.window = vocab_size, dim, window
        self.config = dict(vocab_size=vocab_size, dim=dim, layers=layers, heads=heads,
                           window=window, mlp_dim=mlp_dim or 4 * dim, dropout=dropout)
        self.wte = Embedding(vocab_size, dim)
        self.wpe = Embedding(window, dim)
        self.drop = Dropout(dropout)
        self.blocks = nn.ModuleList(Block(dim, heads, mlp_dim or 4 * dim, dropout) for _ in range(layers))
        self.ln_f = LayerNorm(dim)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """ids (B, T) -> next-token logits (B, T, V)."""
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        T = ids.shape[1]
        if T > self.window:
            raise ops.ShapeError("transformer_lm", ids.shape, detail=f"sequence longer than window {self.window}")
        pos = torch.arange(T, device=ids.device)
        x = self.drop(self.wte(ids) + self.wpe(pos))
        for block in self.blocks:
            x = block(x)
        x = self.ln_f(x)
        return ops.matmul(x, self.wte.weight.t())

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


PRESETS = {
    "desk": dict(dim=128, layers=4, heads=4, window=256),
    "paper": dict(dim=768, layers=20, heads=12, window=1024, mlp_dim=3072),
}
