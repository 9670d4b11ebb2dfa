from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with learned Q/K/V/output projections.

    ``key_padding_mask`` is (B, K) with True marking keys to ignore. Long query
    sequences are processed in chunks of ``chunk`` rows to bound memory.
    """

    def __init__(self, dim: int, heads: int, chunk: int | None = None):
        super().__init__()
        assert dim % heads == 0
        self.dim, self.heads, self.chunk = dim, heads, chunk
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.dim // self.heads).transpose(1, 2)

    def forward(self, query, key, value, key_padding_mask=None):
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        bias = None
        if key_padding_mask is not None:
            bias = torch.zeros(key_padding_mask.shape, dtype=k.dtype, device=k.device)
            bias = bias.masked_fill(key_padding_mask, float("-inf"))[:, None, None, :]
        if query.shape[1] == 0:
            return self.out_proj(query)
        scale = 1.0 / math.sqrt(self.dim // self.heads)
        chunk = self.chunk or query.shape[1]
        outs = []
        for start in range(0, query.shape[1], chunk):
            q = self._split(self.q_proj(query[:, start : start + chunk]))
            logits = torch.matmul(q, k.transpose(-1, -2)) * scale
            if bias is not None:
                logits = logits + bias
            attn = torch.softmax(logits, dim=-1)
            o = torch.matmul(attn, v).transpose(1, 2).reshape(q.shape[0], -1, self.dim)
            outs.append(o)
        return self.out_proj(torch.cat(outs, dim=1))


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Pre-norm self-attention layer."""

    def __init__(self, dim: int, heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, hidden)

    def forward(self, x, key_padding_mask=None):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, key_padding_mask)
        return x + self.ffn(self.norm2(x))


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention + feed-forward, both residual."""

    def __init__(self, dim: int, heads: int, hidden: int, chunk: int | None = None):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, chunk)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, hidden)

    def ffn_branch(self, x):
        return self.ffn(self.norm_ffn(x))

    def forward(self, x, memory, key_padding_mask=None, memory_pos=None):
        keys = memory if memory_pos is None else memory + memory_pos
        x = x + self.attn(self.norm_q(x), keys, memory, key_padding_mask)
        return x + self.ffn_branch(x)


class MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int = 3):
        super().__init__()
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


def sinusoidal_embed(values, d: int, base: float = 10000.0):
    """Interleaved [sin(v w_k), cos(v w_k)] for k < d/2 with w_k = base^(-2k/d).

    ``values`` is any-shaped; output gains a trailing dim of size ``d``.
    Callers normalise coordinates to [0, 2 pi] first.
    """
    if d % 2:
        raise ValueError("sinusoidal dims must be even")
    v = torch.as_tensor(values)
    if not v.is_floating_point():
        v = v.to(torch.get_default_dtype())
    k = torch.arange(d // 2, dtype=v.dtype, device=v.device)
    omega = base ** (-2.0 * k / d)
    arg = v[..., None] * omega
    return torch.stack([torch.sin(arg), torch.cos(arg)], dim=-1).flatten(-2)


def sinusoidal_grid_embed(rows: int, cols: int, dim: int, dtype=torch.float32):
    """(rows*cols, dim) 2-D sinusoidal position code; half the channels per axis.

    Positions are cell-center fractions scaled to [0, 50] so grids of
    different resolution over the same window share one code.
    """
    r = (torch.arange(rows, dtype=dtype) + 0.5) / rows * 50.0
    c = (torch.arange(cols, dtype=dtype) + 0.5) / cols * 50.0
    half = dim // 2
    er = sinusoidal_embed(r, half, 1000.0)
    ec = sinusoidal_embed(c, dim - half, 1000.0)
    return torch.cat([er[:, None, :].expand(rows, cols, half), ec[None, :, :].expand(rows, cols, dim - half)], -1).reshape(rows * cols, dim)
