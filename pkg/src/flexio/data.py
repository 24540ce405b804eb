"""Deterministic synthetic multichannel mixtures.

Sources are harmonic, amplitude-modulated "speech-like" tones. Each source is
placed on ``M`` microphones by a per-channel fractional delay and gain (plus an
optional sparse reverberation tail), summed, and corrupted by noise at a
prescribed SNR measured on the reference channel. Targets are always the
anechoic reference-channel images.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DataError, InvalidInput
from .stft import SAMPLE_RATE, read_wav, write_wav

FRACTIONAL_DELAY_TAPS = 64


@dataclass(frozen=True)
class ReverbSpec:
    taps: int = 20
    decay: float = 0.05  # seconds, e-folding time of the tap amplitudes
    max_delay: int = 1600  # samples
    level: float = 0.3
    seed: int = 0


@dataclass
class SceneSpec:
    seed: int
    N: int
    M: int
    length: int
    snr_db: float
    delays: list[list[float]]
    gains: list[list[float]]
    reverb: ReverbSpec | None = None
    ref_channel: int = 0

    def __post_init__(self):
        if self.N < 1 or self.M < 1 or self.length < 1:
            raise InvalidInput("N, M and length must be positive")
        d, g = np.asarray(self.delays, float), np.asarray(self.gains, float)
        if d.shape != (self.N, self.M) or g.shape != (self.N, self.M):
            raise InvalidInput(f"delays/gains must be {self.N}x{self.M}")
        if (d < 0).any() or (g <= 0).any():
            raise InvalidInput("delays must be >= 0 and gains > 0")
        if (d[:, self.ref_channel] != 0).any():
            raise InvalidInput("every source must have zero delay at the reference channel")
        if isinstance(self.reverb, dict):
            self.reverb = ReverbSpec(**self.reverb)


@dataclass
class Scene:
    mixture: np.ndarray  # [M, L]
    targets: np.ndarray  # [N, L], anechoic images at the reference channel
    spec: SceneSpec | None = None
    snr_db: float = math.inf
    seed: int = 0

    @property
    def N(self) -> int:
        return self.targets.shape[0]

    @property
    def M(self) -> int:
        return self.mixture.shape[0]


def synth_source(seed: int, length: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """A harmonic tone with drifting pitch and syllabic amplitude modulation, peak 0.5."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate

    # pitch: log-domain random walk with 50 ms knots, kept in 80-300 Hz
    n_knots = int(length / (0.05 * sample_rate)) + 2
    walk = np.cumsum(rng.normal(0.0, 0.04, n_knots))
    log_f0 = np.log(rng.uniform(90.0, 280.0)) + walk - walk.mean()
    f0 = np.exp(np.interp(t, np.arange(n_knots) * 0.05, log_f0))
    f0 = np.clip(f0, 80.0, 300.0)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    n_harm = int(rng.integers(3, 9))
    voiced = np.zeros(length)
    for k in range(1, n_harm + 1):
        voiced += rng.uniform(0.3, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    rate = rng.uniform(2.0, 8.0)
    env = 0.15 + 0.85 * 0.5 * (1 - np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    voiced *= env

    sos = signal.butter(4, [1000.0, 4000.0], btype="bandpass", fs=sample_rate, output="sos")
    noise = signal.sosfilt(sos, rng.standard_normal(length))
    p_voiced, p_noise = np.mean(voiced**2), np.mean(noise**2)
    if p_noise > 0:
        noise *= np.sqrt(p_voiced / p_noise * 10 ** (-20 / 10))
    x = voiced + noise
    return 0.5 * x / np.max(np.abs(x))


def fractional_delay(s: np.ndarray, delay: float, taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """Delay ``s`` by ``delay`` samples with a Hann-windowed sinc; length is kept."""
    if delay < 0:
        raise InvalidInput("delay must be non-negative")
    length = len(s)
    whole = int(math.floor(delay))
    frac = delay - whole
    shifted = np.zeros(length)
    if whole < length:
        shifted[whole:] = s[: length - whole]
    if frac == 0:
        return shifted
    half = taps // 2
    j = np.arange(-(half - 1), half + 1) - frac
    h = np.sinc(j) * 0.5 * (1 + np.cos(np.pi * j / half))
    return np.convolve(shifted, h)[half - 1: half - 1 + length]


def reverb_tail(spec: ReverbSpec, channel: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Sparse FIR (without the direct path) with exponentially decaying taps."""
    rng = np.random.default_rng([spec.seed, channel])
    h = np.zeros(spec.max_delay + 1)
    pos = rng.integers(32, spec.max_delay + 1, spec.taps)
    amp = spec.level * np.exp(-pos / (spec.decay * sample_rate)) * rng.choice([-1.0, 1.0], spec.taps)
    np.add.at(h, pos, amp)
    return h


def spatialize(s: np.ndarray, delays, gains, reverb: ReverbSpec | None = None) -> np.ndarray:
    """Image of ``s`` on every channel: ``gain_m * delay(s, d_m)`` (+ reverberant tail)."""
    delays, gains = np.asarray(delays, float), np.asarray(gains, float)
    if delays.shape != gains.shape or delays.ndim != 1:
        raise InvalidInput("delays and gains must be 1-D and of equal length")
    out = np.empty((len(delays), len(s)))
    for m, (d, g) in enumerate(zip(delays, gains)):
        y = fractional_delay(s, d)
        if reverb is not None:
            y = y + signal.fftconvolve(y, reverb_tail(reverb, m))[: len(s)]
        out[m] = g * y
    return out


def mix(images, noise_seed: int, snr_db: float, ref_channel: int = 0, targets=None):
    """Sum spatial images and add per-channel noise at ``snr_db`` on the reference channel.

    ``images`` is a list of ``[M, L]`` arrays. Returns the mixture and the
    targets: ``targets`` if given, else the reference-channel images. An
    ``snr_db`` of ``+inf`` disables the noise.
    """
    images = [np.asarray(x, float) for x in images]
    if not images:
        raise InvalidInput("need at least one source image")
    clean = np.sum(images, axis=0)
    if targets is None:
        targets = np.stack([x[ref_channel] for x in images])
    if math.isinf(snr_db) and snr_db > 0:
        return clean, np.asarray(targets)
    rng = np.random.default_rng(noise_seed)
    noise = signal.lfilter([1.0], [1.0, -0.7], rng.standard_normal(clean.shape), axis=-1)
    speech_energy = sum(np.sum(x[ref_channel] ** 2) for x in images)
    noise *= np.sqrt(speech_energy / np.sum(noise[ref_channel] ** 2) * 10 ** (-snr_db / 10))
    return clean + noise, np.asarray(targets)


def measured_snr(mixture: np.ndarray, images, ref_channel: int = 0) -> float:
    noise = mixture[ref_channel] - np.sum([x[ref_channel] for x in images], axis=0)
    speech = sum(np.sum(x[ref_channel] ** 2) for x in images)
    return float(10 * np.log10(speech / np.sum(noise**2)))


def random_scene(seed: int, N: int, M: int, length: int, snr_db=(5.0, 15.0), reverb: bool = False,
                 max_delay: float = 8.0, gain_range=(0.7, 1.3), ref_channel: int = 0) -> SceneSpec:
    """Draw a :class:`SceneSpec` whose geometry is fully determined by ``seed``."""
    rng = np.random.default_rng([seed, 1])
    delays = rng.uniform(0.0, max_delay, (N, M))
    gains = rng.uniform(*gain_range, (N, M))
    delays[:, ref_channel] = 0.0
    gains[:, ref_channel] = 1.0
    snr = float(rng.uniform(*snr_db)) if isinstance(snr_db, (tuple, list)) else float(snr_db)
    rev = ReverbSpec(seed=int(rng.integers(2**31))) if reverb else None
    return SceneSpec(seed=seed, N=N, M=M, length=length, snr_db=snr, delays=delays.tolist(),
                     gains=gains.tolist(), reverb=rev, ref_channel=ref_channel)


def make_scene(spec: SceneSpec) -> Scene:
    """Render ``spec`` into a mixture and its anechoic reference-channel targets."""
    source_seeds = np.random.SeedSequence([spec.seed, 2]).generate_state(spec.N)
    images, targets = [], []
    for n in range(spec.N):
        s = synth_source(int(source_seeds[n]), spec.length)
        images.append(spatialize(s, spec.delays[n], spec.gains[n], spec.reverb))
        targets.append(spatialize(s, [spec.delays[n][spec.ref_channel]], [spec.gains[n][spec.ref_channel]])[0])
    noise_seed = int(np.random.SeedSequence([spec.seed, 3]).generate_state(1)[0])
    mixture, targets = mix(images, noise_seed, spec.snr_db, spec.ref_channel, np.stack(targets))
    return Scene(mixture, targets, spec, spec.snr_db, spec.seed)


def generate_scenes(seed: int, groups, length: int, snr_db=(5.0, 15.0), reverb: bool = False,
                    max_delay: float = 8.0) -> list[Scene]:
    """Render ``count`` scenes for every ``(N, M, count)`` in ``groups``."""
    scenes = []
    ss = np.random.SeedSequence(seed)
    for (n, m, count), child in zip(groups, ss.spawn(len(groups))):
        for scene_seed in child.generate_state(count):
            spec = random_scene(int(scene_seed), n, m, length, snr_db, reverb, max_delay)
            scenes.append(make_scene(spec))
    return scenes


def write_dataset(scenes, out_dir) -> Path:
    """Write WAVs plus ``manifest.jsonl``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for i, sc in enumerate(scenes):
            name = f"scene{i:05d}"
            mix_path = f"{name}_mix.wav"
            src_paths = [f"{name}_s{n}.wav" for n in range(sc.N)]
            write_wav(out / mix_path, sc.mixture)
            for path, tgt in zip(src_paths, sc.targets):
                write_wav(out / path, tgt)
            record = dict(mixture_path=mix_path, source_paths=src_paths, N=sc.N, M=sc.M,
                          snr_db=None if math.isinf(sc.snr_db) else sc.snr_db, seed=sc.seed)
            fh.write(json.dumps(record) + "\n")
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_scenes(manifest_path) -> list[Scene]:
    """Load every scene listed in a manifest, checking N and M against the files."""
    base = Path(manifest_path).parent
    scenes = []
    for rec in read_manifest(manifest_path):
        mixture = read_wav(base / rec["mixture_path"])
        targets = np.stack([read_wav(base / p)[0] for p in rec["source_paths"]])
        if mixture.shape[0] != rec["M"] or targets.shape[0] != rec["N"]:
            raise DataError(f"{rec['mixture_path']}: N/M in manifest do not match the audio files")
        snr = math.inf if rec["snr_db"] is None else float(rec["snr_db"])
        scenes.append(Scene(mixture, targets, None, snr, int(rec["seed"])))
    return scenes


@dataclass
class DataConfig:
    seed: int = 0
    length_seconds: float = 4.0
    train: list = field(default_factory=lambda: [[1, 1, 20], [2, 2, 20]])
    val: list = field(default_factory=lambda: [[1, 1, 4], [2, 2, 4]])
    snr_db: list = field(default_factory=lambda: [5.0, 15.0])
    reverb: bool = False
    max_delay: float = 8.0

    def to_dict(self) -> dict:
        return asdict(self)


def synthesize(cfg: DataConfig, out_dir) -> dict[str, Path]:
    """Generate ``train`` and ``val`` splits under ``out_dir``."""
    length = int(round(cfg.length_seconds * SAMPLE_RATE))
    paths = {}
    for offset, split in enumerate(("train", "val")):
        groups = [tuple(int(v) for v in g) for g in getattr(cfg, split)]
        scenes = generate_scenes(cfg.seed * 2 + offset, groups, length, tuple(cfg.snr_db), cfg.reverb,
                                 cfg.max_delay)
        paths[split] = write_dataset(scenes, Path(out_dir) / split)
    return paths
