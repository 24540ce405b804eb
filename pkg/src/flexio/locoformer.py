"""TF-locoformer building blocks.

Feature maps follow the ``[B, C, D, T, F]`` layout: batch, an independent
"channel" axis (microphones in the cross-prompt module, speakers in the TSE
head), feature dimension, frames and frequency bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import Tensor, nn

from .errors import ConfigError, InvalidInput


@dataclass(frozen=True)
class BlockConfig:
    dim: int = 64
    num_heads: int = 4
    head_dim: int = 16
    conv_kernel: int = 4
    conv_stride: int = 1
    ffn_expansion: float = 4.0
    omit_pre_mhsa_ffn: bool = False
    norm_groups: int = 4
    rope_theta: float = 10000.0

    def __post_init__(self):
        if self.dim != self.num_heads * self.head_dim:
            raise ConfigError(
                f"dim ({self.dim}) must equal num_heads*head_dim ({self.num_heads}*{self.head_dim})"
            )
        if self.head_dim % 2:
            raise ConfigError("head_dim must be even for rotary encoding")
        if self.conv_stride != 1:
            raise ConfigError("only conv_stride=1 is supported")
        if self.conv_kernel < 1:
            raise ConfigError("conv_kernel must be >= 1")
        if self.dim % self.norm_groups:
            raise ConfigError(f"dim ({self.dim}) is not divisible by norm_groups ({self.norm_groups})")

    @property
    def hidden_dim(self) -> int:
        return int(round(self.ffn_expansion * self.dim))


def rms_group_norm(x: Tensor, groups: int, weight: Tensor | None = None, bias: Tensor | None = None,
                   eps: float = 1e-5, dim: int = -1) -> Tensor:
    """Divide each group of channels along ``dim`` by its root mean square."""
    channels = x.shape[dim]
    if channels % groups:
        raise ConfigError(f"{channels} channels are not divisible into {groups} groups")
    x = x.movedim(dim, -1)
    g = x.reshape(*x.shape[:-1], groups, channels // groups)
    g = g * torch.rsqrt(g.pow(2).mean(-1, keepdim=True) + eps)
    y = g.reshape(x.shape)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y.movedim(-1, dim)


class RMSGroupNorm(nn.Module):
    def __init__(self, num_channels: int, groups: int = 4, eps: float = 1e-5, dim: int = -1):
        super().__init__()
        if num_channels % groups:
            raise ConfigError(f"{num_channels} channels are not divisible into {groups} groups")
        self.groups, self.eps, self.dim = groups, eps, dim
        self.weight = nn.Parameter(torch.ones(num_channels))
        self.bias = nn.Parameter(torch.zeros(num_channels))

    def forward(self, x: Tensor) -> Tensor:
        return rms_group_norm(x, self.groups, self.weight, self.bias, self.eps, self.dim)


class ConvSwiGLU(nn.Module):
    """Norm -> gated 1D conv (Swish(a) * b) -> 1D transposed conv.

    Operates on ``[batch, D, length]``; the output has the input's shape.
    The residual connection is left to the caller.
    """

    def __init__(self, dim: int, hidden_dim: int, kernel: int = 4, groups: int = 4):
        super().__init__()
        self.kernel = kernel
        self.pad_left = (kernel - 1) // 2
        self.norm = RMSGroupNorm(dim, groups, dim=1)
        self.conv = nn.Conv1d(dim, 2 * hidden_dim, kernel)
        self.deconv = nn.ConvTranspose1d(hidden_dim, dim, kernel)

    def forward(self, x: Tensor) -> Tensor:
        length = x.shape[-1]
        h = F.pad(self.norm(x), (self.pad_left, self.kernel - 1 - self.pad_left))
        a, b = self.conv(h).chunk(2, dim=1)
        y = self.deconv(F.silu(a) * b)
        return y[..., self.pad_left:self.pad_left + length]


def rotary_embedding(x: Tensor, theta: float = 10000.0) -> Tensor:
    """Rotate feature pairs of ``x [..., L, E]`` by angles proportional to position."""
    length, feat = x.shape[-2], x.shape[-1]
    half = feat // 2
    inv_freq = theta ** (-torch.arange(half, dtype=x.dtype, device=x.device) / half)
    angle = torch.arange(length, dtype=x.dtype, device=x.device)[:, None] * inv_freq
    cos, sin = angle.cos(), angle.sin()
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(E)) for ``q, k [..., L, E]``."""
    return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)


def co_attention_weights(qs: Tensor, ks: Tensor) -> Tensor:
    """Channel-shared attention weights from per-channel queries and keys.

    ``qs`` and ``ks`` are ``[..., M, L, E]``; the logits are summed over the
    channel axis and scaled by ``1/sqrt(E*M)``, giving ``[..., L, L]``.
    """
    if qs.shape != ks.shape:
        raise ConfigError(f"query/key shapes differ: {tuple(qs.shape)} vs {tuple(ks.shape)}")
    m, e = qs.shape[-3], qs.shape[-1]
    if m == 0:
        raise InvalidInput("co-attention needs at least one channel")
    logits = (qs @ ks.transpose(-1, -2)).sum(dim=-3)
    return torch.softmax(logits / math.sqrt(e * m), dim=-1)


class MultiHeadSelfAttention(nn.Module):
    """Multi-head self-attention over ``x [batch, C, L, D]`` along ``L``.

    With ``co_attention=True`` one set of attention weights per head is
    computed from the logits summed over the ``C`` axis and applied to every
    entry of ``C``. This equals ordinary attention on queries, keys and values
    concatenated along the feature axis, which is how it is evaluated here.
    """

    def __init__(self, dim: int, num_heads: int, head_dim: int, rope: bool = True, theta: float = 10000.0):
        super().__init__()
        self.num_heads, self.head_dim = num_heads, head_dim
        self.rope, self.theta = rope, theta
        self.qkv = nn.Linear(dim, 3 * num_heads * head_dim, bias=False)
        self.proj = nn.Linear(num_heads * head_dim, dim)

    def project(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Per-head queries, keys (rotated) and values, each ``[batch, C, H, L, E]``."""
        q, k, v = (
            rearrange(t, "b c l (h e) -> b c h l e", h=self.num_heads)
            for t in self.qkv(x).chunk(3, dim=-1)
        )
        if self.rope:
            q, k = rotary_embedding(q, self.theta), rotary_embedding(k, self.theta)
        return q, k, v

    def weights(self, x: Tensor, co_attention: bool = False) -> Tensor:
        """Explicit attention weights: ``[batch, C, H, L, L]`` or ``[batch, H, L, L]`` when shared."""
        q, k, _ = self.project(x)
        if co_attention:
            return co_attention_weights(q.transpose(1, 2), k.transpose(1, 2))
        return attention_weights(q, k)

    def forward(self, x: Tensor, co_attention: bool = False) -> Tensor:
        q, k, v = self.project(x)
        if co_attention:
            c = x.shape[1]
            q, k, v = (rearrange(t, "b c h l e -> b h l (c e)") for t in (q, k, v))
            out = F.scaled_dot_product_attention(q, k, v)
            out = rearrange(out, "b h l (c e) -> b c l (h e)", c=c)
        else:
            b = x.shape[0]
            q, k, v = (rearrange(t, "b c h l e -> (b c) h l e") for t in (q, k, v))
            out = F.scaled_dot_product_attention(q, k, v)
            out = rearrange(out, "(b c) h l e -> b c l (h e)", b=b)
        return self.proj(out)


class AxisStage(nn.Module):
    """Conv-FFN, MHSA, conv-FFN (each residual) along the last axis of ``[B, C, D, S, L]``."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.pre_ffn = None if cfg.omit_pre_mhsa_ffn else ConvSwiGLU(
            cfg.dim, cfg.hidden_dim, cfg.conv_kernel, cfg.norm_groups
        )
        self.attn_norm = RMSGroupNorm(cfg.dim, cfg.norm_groups)
        self.attn = MultiHeadSelfAttention(cfg.dim, cfg.num_heads, cfg.head_dim, rope=True, theta=cfg.rope_theta)
        self.post_ffn = ConvSwiGLU(cfg.dim, cfg.hidden_dim, cfg.conv_kernel, cfg.norm_groups)

    def forward(self, x: Tensor, co_attention: bool = False) -> Tensor:
        b, c, _, s, _ = x.shape
        h = rearrange(x, "b c d s l -> (b c s) d l")
        if self.pre_ffn is not None:
            h = h + self.pre_ffn(h)
        a = rearrange(h, "(b c s) d l -> (b s) c l d", b=b, c=c, s=s)
        a = a + self.attn(self.attn_norm(a), co_attention=co_attention)
        h = rearrange(a, "(b s) c l d -> (b c s) d l", b=b, s=s)
        h = h + self.post_ffn(h)
        return rearrange(h, "(b c s) d l -> b c d s l", b=b, c=c, s=s)


class LocoformerBlock(nn.Module):
    """Temporal stage followed by frequency stage on ``[B, C, D, T, F]``."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        self.temporal = AxisStage(cfg)
        self.frequency = AxisStage(cfg)

    def forward(self, x: Tensor, co_attention: bool = False) -> Tensor:
        x = self.temporal(x.transpose(-1, -2), co_attention).transpose(-1, -2)
        return self.frequency(x, co_attention)

    def zero_residual_branches(self) -> None:
        """Zero every residual branch's output layer so the block is the identity."""
        for stage in (self.temporal, self.frequency):
            layers = [stage.attn.proj, stage.post_ffn.deconv]
            if stage.pre_ffn is not None:
                layers.append(stage.pre_ffn.deconv)
            with torch.no_grad():
                for layer in layers:
                    layer.weight.zero_()
                    layer.bias.zero_()
