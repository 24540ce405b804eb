"""Array-agnostic channel communication on ``[B, M, D, T, F]`` feature maps.

None of the modules here has a parameter whose shape depends on ``M``.
Co-attention has no module of its own; it is a mode of
:class:`~flexio.locoformer.MultiHeadSelfAttention`.
"""

from __future__ import annotations

import enum

import torch
from einops import rearrange
from torch import Tensor, nn

from .errors import InvalidInput
from .locoformer import MultiHeadSelfAttention, RMSGroupNorm, co_attention_weights

__all__ = [
    "CommMechanism",
    "TransformAverageConcatenate",
    "CrossChannelAttention",
    "co_attention_weights",
    "stack_channels",
]


class CommMechanism(str, enum.Enum):
    TAC = "tac"
    CROSS_CHANNEL_ATTENTION = "cross_channel_attention"
    CO_ATTENTION = "co_attention"
    NONE = "none"


def stack_channels(xs) -> Tensor:
    """Stack a list of per-channel maps ``[B, D, T, F]`` into ``[B, M, D, T, F]``."""
    if isinstance(xs, Tensor):
        return xs
    xs = list(xs)
    if not xs:
        raise InvalidInput("at least one channel is required")
    shape = xs[0].shape
    if any(x.shape != shape for x in xs):
        raise InvalidInput(f"channel shapes differ: {[tuple(x.shape) for x in xs]}")
    return torch.stack(xs, dim=1)


def _check(x: Tensor) -> None:
    if x.ndim != 5:
        raise InvalidInput(f"expected [B, M, D, T, F], got shape {tuple(x.shape)}")
    if x.shape[1] < 1:
        raise InvalidInput("at least one channel is required")


class TransformAverageConcatenate(nn.Module):
    """TAC: per-channel projection, channel mean, concatenation, residual.

    For every TF bin::

        w_m  = PReLU(fc_in(z_m))
        w̄    = PReLU(fc_avg(mean_m w_m))
        z_m += Norm(fc_cat([w_m; w̄]))
    """

    def __init__(self, dim: int, hidden: int = 128, norm_groups: int = 4):
        super().__init__()
        self.fc_in = nn.Sequential(nn.Linear(dim, hidden), nn.PReLU())
        self.fc_avg = nn.Sequential(nn.Linear(hidden, hidden), nn.PReLU())
        self.fc_cat = nn.Linear(2 * hidden, dim)
        self.norm = RMSGroupNorm(dim, norm_groups)

    def forward(self, x) -> Tensor:
        x = stack_channels(x)
        _check(x)
        z = rearrange(x, "b m d t f -> b m t f d")
        w = self.fc_in(z)
        w_avg = self.fc_avg(w.mean(dim=1, keepdim=True)).expand_as(w)
        z = z + self.norm(self.fc_cat(torch.cat([w, w_avg], dim=-1)))
        return rearrange(z, "b m t f d -> b m d t f")


class CrossChannelAttention(nn.Module):
    """Pre-norm MHSA across the microphone axis at every TF bin, plus residual.

    No positional encoding is used, so the layer is permutation equivariant in
    the channels and accepts any ``M``.
    """

    def __init__(self, dim: int, num_heads: int = 4, head_dim: int = 16, norm_groups: int = 4):
        super().__init__()
        self.norm = RMSGroupNorm(dim, norm_groups)
        self.attn = MultiHeadSelfAttention(dim, num_heads, head_dim, rope=False)

    def _sequences(self, x: Tensor) -> Tensor:
        return rearrange(x, "b m d t f -> (b t f) 1 m d")

    def forward(self, x) -> Tensor:
        x = stack_channels(x)
        _check(x)
        b, _, _, t, f = x.shape
        s = self._sequences(x)
        s = s + self.attn(self.norm(s))
        return rearrange(s, "(b t f) 1 m d -> b m d t f", b=b, t=t, f=f)

    def weights(self, x) -> Tensor:
        """Attention weights over channels, ``[B*T*F, H, M, M]``."""
        x = stack_channels(x)
        _check(x)
        return self.attn.weights(self.norm(self._sequences(x)))[:, 0]
