"""Multichannel STFT front-end, its inverse, complex masking and WAV I/O.

Spectrograms are laid out as ``[..., M, T, F]`` (channels, frames, bins) and
waveforms as ``[..., M, L]``. Both torch tensors and numpy arrays are
accepted; the result has the same flavour as the input.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile

from .errors import ConfigError, InvalidInput

SAMPLE_RATE = 16000

_WINDOWS = ("sqrt_hann", "hann")


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 256
    hop: int = 128
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.window_len <= 0 or self.window_len % 2:
            raise ConfigError(f"window_len must be a positive even integer, got {self.window_len}")
        if not 0 < self.hop <= self.window_len:
            raise ConfigError(f"hop must satisfy 0 < hop <= window_len, got {self.hop}")
        if self.window not in _WINDOWS:
            raise ConfigError(f"unknown window {self.window!r}; expected one of {_WINDOWS}")
        # overlap-add of analysis*synthesis windows must be flat
        if self.window == "sqrt_hann" and self.window_len % self.hop:
            raise ConfigError("sqrt_hann needs hop to divide window_len")
        if self.window == "hann" and (self.window_len // self.hop) < 2:
            raise ConfigError("hann needs at least 50% overlap")

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    def n_frames(self, length: int) -> int:
        return length // self.hop + 1

    def to_dict(self) -> dict:
        return asdict(self)


def make_window(cfg: StftConfig, dtype=torch.float64, device=None) -> torch.Tensor:
    w = torch.hann_window(cfg.window_len, periodic=True, dtype=dtype, device=device)
    if cfg.window == "sqrt_hann":
        w = w.sqrt()
    return w


def _as_tensor(x) -> tuple[torch.Tensor, bool]:
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x)), True


def stft(wave, cfg: StftConfig = StftConfig()):
    """Complex STFT of every channel, shape ``[..., M, T, F]``.

    Frames are centred; the signal is reflection padded by half a window at
    both ends (zero padded when it is too short to reflect).
    """
    x, was_numpy = _as_tensor(wave)
    if x.ndim < 1 or x.shape[-1] == 0 or x.numel() == 0:
        raise InvalidInput("empty waveform")
    if not torch.is_floating_point(x):
        x = x.to(torch.float64)
    if not torch.isfinite(x).all():
        raise InvalidInput("waveform contains non-finite samples")
    lead, length = x.shape[:-1], x.shape[-1]
    flat = x.reshape(-1, length)
    pad_mode = "reflect" if length > cfg.window_len // 2 else "constant"
    spec = torch.stft(
        flat,
        n_fft=cfg.window_len,
        hop_length=cfg.hop,
        window=make_window(cfg, flat.dtype, flat.device),
        center=True,
        pad_mode=pad_mode,
        return_complex=True,
    )
    spec = spec.transpose(-1, -2).reshape(*lead, -1, cfg.n_bins)
    return spec.numpy() if was_numpy else spec


def istft(spec, cfg: StftConfig = StftConfig(), out_len: int | None = None):
    """Inverse of :func:`stft`, returning exactly ``out_len`` samples per channel."""
    s, was_numpy = _as_tensor(spec)
    if not torch.is_complex(s):
        raise InvalidInput("istft expects a complex spectrogram")
    if s.shape[-1] != cfg.n_bins:
        raise InvalidInput(f"expected {cfg.n_bins} frequency bins, got {s.shape[-1]}")
    n_frames = s.shape[-2]
    if out_len is None:
        out_len = (n_frames - 1) * cfg.hop
    if out_len < 1 or cfg.n_frames(out_len) != n_frames:
        raise InvalidInput(f"out_len={out_len} is inconsistent with {n_frames} frames at hop {cfg.hop}")
    lead = s.shape[:-2]
    flat = s.reshape(-1, n_frames, cfg.n_bins).transpose(-1, -2)
    wave = torch.istft(
        flat,
        n_fft=cfg.window_len,
        hop_length=cfg.hop,
        window=make_window(cfg, flat.real.dtype, flat.device),
        center=True,
        length=out_len,
    )
    wave = wave.reshape(*lead, out_len)
    return wave.numpy() if was_numpy else wave


def apply_complex_mask(mask, mix):
    """Elementwise complex product of a mask with a single-channel spectrogram."""
    if tuple(mask.shape) != tuple(mix.shape):
        raise InvalidInput(f"mask shape {tuple(mask.shape)} does not match mixture {tuple(mix.shape)}")
    return mask * mix


def read_wav(path) -> np.ndarray:
    """Read a 16 kHz WAV file into a float64 ``[M, L]`` array."""
    rate, data = wavfile.read(str(path))
    if rate != SAMPLE_RATE:
        raise InvalidInput(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz (no resampling)")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float64)
    else:
        raise InvalidInput(f"{path}: unsupported sample format {data.dtype}")
    if data.ndim == 1:
        data = data[:, None]
    return np.ascontiguousarray(data.T)


def write_wav(path, wave, pcm16: bool = False) -> None:
    """Write a ``[M, L]`` (or ``[L]``) waveform as 16 kHz float32 or PCM16."""
    w = np.asarray(wave.detach().cpu() if isinstance(wave, torch.Tensor) else wave)
    if w.ndim == 1:
        w = w[None]
    if not 1 <= w.shape[0] <= 8:
        raise InvalidInput(f"WAV output supports 1 to 8 channels, got {w.shape[0]}")
    if pcm16:
        data = np.clip(np.round(w.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = w.T.astype(np.float32)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), SAMPLE_RATE, data)

