"""The FlexIO network: encoder, prompts, multichannel cross-prompt module,
conditional target speaker extraction and complex-mask decoder."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .channel_comm import CommMechanism, CrossChannelAttention, TransformAverageConcatenate
from .errors import ConfigError, InvalidInput
from .locoformer import BlockConfig, LocoformerBlock
from .stft import StftConfig, istft, stft

log = logging.getLogger(__name__)


def strict_kwargs(cls, data: dict, section: str) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    return dict(data)


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    num_heads: int = 4
    head_dim: int = 16
    tac_hidden: int = 128
    chatt_heads: int = 4
    chatt_head_dim: int = 16
    cross_prompt_blocks: int = 2
    tse_blocks: int = 4
    comm: CommMechanism = CommMechanism.CO_ATTENTION
    stft: StftConfig = field(default_factory=StftConfig)
    ref_channel: int = 0
    max_prompts: int = 5
    ffn_expansion: float = 4.0
    norm_groups: int = 4
    conv_kernel: int = 4
    encoder_kernel: int = 3
    omit_pre_mhsa_ffn: bool = True
    rope_theta: float = 10000.0

    def __post_init__(self):
        object.__setattr__(self, "comm", CommMechanism(self.comm))
        if isinstance(self.stft, dict):
            object.__setattr__(self, "stft", StftConfig(**strict_kwargs(StftConfig, self.stft, "stft")))
        if self.cross_prompt_blocks < 1 or self.tse_blocks < 1:
            raise ConfigError("cross_prompt_blocks and tse_blocks must both be >= 1")
        if self.ref_channel < 0:
            raise ConfigError("ref_channel must be non-negative")
        if self.encoder_kernel % 2 == 0:
            raise ConfigError("encoder_kernel must be odd for same padding")
        # validates head/group divisibility
        self.block_config(cross_prompt=True)

    def block_config(self, cross_prompt: bool) -> BlockConfig:
        return BlockConfig(
            dim=self.dim,
            num_heads=self.num_heads,
            head_dim=self.head_dim,
            conv_kernel=self.conv_kernel,
            ffn_expansion=self.ffn_expansion,
            omit_pre_mhsa_ffn=self.omit_pre_mhsa_ffn and cross_prompt,
            norm_groups=self.norm_groups,
            rope_theta=self.rope_theta,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["comm"] = self.comm.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**strict_kwargs(cls, data, "model"))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "toy": dict(dim=16, num_heads=4, head_dim=4, tac_hidden=32, chatt_heads=4, chatt_head_dim=4,
                cross_prompt_blocks=1, tse_blocks=1, ffn_expansion=2.0),
    "medium": dict(dim=64, num_heads=4, head_dim=16, cross_prompt_blocks=2, tse_blocks=4,
                   omit_pre_mhsa_ffn=True),
    "large": dict(dim=96, num_heads=4, head_dim=24, cross_prompt_blocks=2, tse_blocks=4,
                  omit_pre_mhsa_ffn=False),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


class GlobalLayerNorm(nn.Module):
    """Normalise each ``[D, T, F]`` map by its own mean and variance."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim, 1, 1))
        self.bias = nn.Parameter(torch.zeros(dim, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        mean = x.mean(dim=(-3, -2, -1), keepdim=True)
        var = (x - mean).pow(2).mean(dim=(-3, -2, -1), keepdim=True)
        return (x - mean) * torch.rsqrt(var + self.eps) * self.weight + self.bias


def attach_prompts(z: Tensor, prompt: Tensor, num_prompts: int) -> Tensor:
    """Prepend ``num_prompts`` copies of ``prompt`` (repeated over F) along time.

    ``z`` is ``[..., D, T, F]`` and ``prompt`` is ``[D]``; returns ``[..., D, N+T, F]``.
    """
    if num_prompts < 1:
        raise InvalidInput(f"need at least one prompt, got {num_prompts}")
    p = prompt.to(z.dtype)[:, None, None].expand(*z.shape[:-3], z.shape[-3], num_prompts, z.shape[-1])
    return torch.cat([p, z], dim=-2)


def split_prompts(x: Tensor, num_prompts: int) -> tuple[Tensor, Tensor]:
    """Inverse of :func:`attach_prompts`: ``([..., N, D, F], [..., D, T, F])``."""
    prompts = x[..., :num_prompts, :].movedim(-2, -3)
    return prompts, x[..., num_prompts:, :]


@dataclass
class SeparationResult:
    waveforms: np.ndarray  # [N, L]
    masks: np.ndarray  # [N, T, F] complex
    ref_channel: int


class FlexIO(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, k = cfg.dim, cfg.encoder_kernel
        self.encoder = nn.Conv2d(2, d, k, padding=k // 2)
        self.encoder_norm = GlobalLayerNorm(d)
        self.prompt = nn.Parameter(torch.randn(d))
        self.cross_blocks = nn.ModuleList(
            LocoformerBlock(cfg.block_config(cross_prompt=True)) for _ in range(cfg.cross_prompt_blocks)
        )
        if cfg.comm is CommMechanism.TAC:
            self.comm = nn.ModuleList(
                TransformAverageConcatenate(d, cfg.tac_hidden, cfg.norm_groups)
                for _ in range(cfg.cross_prompt_blocks)
            )
        elif cfg.comm is CommMechanism.CROSS_CHANNEL_ATTENTION:
            self.comm = nn.ModuleList(
                CrossChannelAttention(d, cfg.chatt_heads, cfg.chatt_head_dim, cfg.norm_groups)
                for _ in range(cfg.cross_prompt_blocks)
            )
        else:
            self.comm = None
        self.tse_blocks = nn.ModuleList(
            LocoformerBlock(cfg.block_config(cross_prompt=False)) for _ in range(cfg.tse_blocks)
        )
        self.decoder = nn.ConvTranspose2d(d, 2, k, padding=k // 2)

    def encode(self, spec: Tensor) -> Tensor:
        """``[B, M, T, F]`` complex -> ``[B, M, D, T, F]``, weights shared over channels."""
        b, m, t, f = spec.shape
        x = torch.stack([spec.real, spec.imag], dim=-3).reshape(b * m, 2, t, f)
        x = x.to(self.encoder.weight.dtype)
        z = self.encoder_norm(self.encoder(x))
        return z.reshape(b, m, -1, t, f)

    def attach_prompts(self, z: Tensor, num_prompts: int) -> Tensor:
        return attach_prompts(z, self.prompt, num_prompts)

    def cross_prompt(self, x: Tensor) -> Tensor:
        """Run the cross-prompt blocks on ``[B, M, D, T', F]``."""
        co = self.cfg.comm is CommMechanism.CO_ATTENTION
        for i, block in enumerate(self.cross_blocks):
            x = block(x, co_attention=co)
            if self.comm is not None:
                x = self.comm[i](x)
        return x

    def conditional_tse(self, prompts: Tensor, mixture: Tensor) -> Tensor:
        """Gate ``mixture [B, D, T, F]`` with ``prompts [B, N, D, F]`` and refine per speaker."""
        x = prompts[:, :, :, None, :] * mixture[:, None]
        for block in self.tse_blocks:
            x = block(x)
        return x

    def decode_masks(self, feats: Tensor) -> Tensor:
        """``[B, N, D, T, F]`` -> complex masks ``[B, N, T, F]`` (unbounded)."""
        b, n, d, t, f = feats.shape
        m = self.decoder(feats.reshape(b * n, d, t, f)).reshape(b, n, 2, t, f)
        return torch.complex(m[:, :, 0], m[:, :, 1])

    def check_call(self, num_channels: int, num_prompts: int, ref_channel: int) -> None:
        if num_channels < 1:
            raise InvalidInput("need at least one input channel")
        if num_prompts < 1:
            raise InvalidInput(f"need at least one prompt, got {num_prompts}")
        if not 0 <= ref_channel < num_channels:
            raise ConfigError(f"reference channel out of range: {ref_channel} for {num_channels} channel(s)")
        if num_prompts > self.cfg.max_prompts:
            log.warning("num_prompts=%d exceeds the documented cap of %d", num_prompts, self.cfg.max_prompts)

    def forward(self, wave: Tensor, num_prompts: int, ref_channel: int | None = None) -> tuple[Tensor, Tensor]:
        """Separate ``wave [B, M, L]`` into ``[B, N, L]`` estimates at the reference channel.

        Returns the estimates and the complex masks ``[B, N, T, F]``.
        """
        ref = self.cfg.ref_channel if ref_channel is None else ref_channel
        self.check_call(wave.shape[1], num_prompts, ref)
        length = wave.shape[-1]
        spec = stft(wave, self.cfg.stft)
        mix_ref = spec[:, ref]
        if self.comm is None and self.cfg.comm is CommMechanism.NONE:
            # channels never interact, so the others cannot affect the output
            spec, ref = spec[:, ref:ref + 1], 0
        x = self.attach_prompts(self.encode(spec), num_prompts)
        x = self.cross_prompt(x)
        prompts, mixture = split_prompts(x[:, ref], num_prompts)
        feats = self.conditional_tse(prompts, mixture)
        masks = self.decode_masks(feats)
        est = istft(masks * mix_ref[:, None].to(masks.dtype), self.cfg.stft, length)
        return est, masks


def separate(model: FlexIO, wave, num_speakers: int, ref_channel: int | None = None) -> SeparationResult:
    """Run ``model`` on one ``[M, L]`` waveform and return per-speaker signals."""
    w = torch.as_tensor(np.asarray(wave), dtype=next(model.parameters()).dtype)
    if w.ndim == 1:
        w = w[None]
    if w.ndim != 2 or w.shape[-1] == 0:
        raise InvalidInput(f"expected an [M, L] waveform, got shape {tuple(w.shape)}")
    ref = model.cfg.ref_channel if ref_channel is None else ref_channel
    model.eval()
    with torch.no_grad():
        est, masks = model(w[None], num_speakers, ref)
    return SeparationResult(est[0].numpy(), masks[0].numpy(), ref)


def parameter_breakdown(model: FlexIO) -> dict[str, int]:
    """Parameter count per top-level submodule."""
    out: dict[str, int] = {}
    for name, p in model.named_parameters():
        key = name.split(".")[0]
        out[key] = out.get(key, 0) + p.numel()
    return out
