import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from flexio.errors import ConfigError, InvalidInput
from flexio.stft import StftConfig, apply_complex_mask, istft, make_window, read_wav, stft, write_wav

CFG = StftConfig()


def test_default_parameters():
    assert (CFG.window_len, CFG.hop, CFG.window) == (256, 128, "sqrt_hann")
    assert CFG.n_bins == 129


def test_window_satisfies_cola():
    w2 = make_window(CFG).numpy() ** 2
    hop = CFG.hop
    ola = sum(np.roll(w2, k * hop) for k in range(CFG.window_len // hop))
    np.testing.assert_allclose(ola, 1.0, atol=1e-12)


@pytest.mark.parametrize("bad", [dict(hop=0), dict(hop=300), dict(window_len=255), dict(window="kaiser"),
                                 dict(hop=100)])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        StftConfig(**bad)


def test_shape_and_frame_count():
    for length in (1600, 16000, 16001):
        s = stft(np.zeros((3, length)), CFG)
        assert s.shape == (3, length // CFG.hop + 1, 129)


def test_zero_waveform():
    s = stft(np.zeros((2, 1000)), CFG)
    assert np.all(s == 0)


def test_empty_waveform_rejected():
    with pytest.raises(InvalidInput):
        stft(np.zeros((1, 0)), CFG)


def test_bin_centred_cosine_concentrates_energy():
    k = 20
    n = np.arange(4096)
    x = np.cos(2 * np.pi * k * n / CFG.window_len)
    s = stft(x[None], CFG)[0]
    # interior frames, away from the reflected edges
    frames = np.abs(s[4:-4]) ** 2
    # oracle: DFT of the window-weighted cosine computed directly
    w = make_window(CFG).numpy()
    m = np.arange(CFG.window_len)
    basis = np.exp(-2j * np.pi * np.outer(np.arange(CFG.n_bins), m) / CFG.window_len)
    direct = np.abs(basis @ (w * x[:CFG.window_len])) ** 2
    np.testing.assert_allclose(frames, np.broadcast_to(direct, frames.shape), rtol=1e-9, atol=1e-9)
    assert np.all(frames.argmax(axis=1) == k)
    # the sqrt-Hann main lobe spans k-1..k+1; that lobe holds >= 99% of frame energy
    lobe = frames[:, k - 1:k + 2].sum(axis=1) / frames.sum(axis=1)
    assert lobe.min() >= 0.99
    assert np.allclose(frames[:, k] / frames.sum(axis=1), direct[k] / direct.sum())


@pytest.mark.parametrize("length", [1600, 16000, 16001])
def test_round_trip(length):
    rng = np.random.default_rng(length)
    w = rng.standard_normal((2, length))
    r = istft(stft(w, CFG), CFG, length)
    assert r.shape == w.shape
    assert np.linalg.norm(r - w) / np.linalg.norm(w) <= 1e-6


def test_round_trip_short_signal_uses_zero_padding():
    w = np.random.default_rng(0).standard_normal((1, 40))
    np.testing.assert_allclose(istft(stft(w, CFG), CFG, 40), w, atol=1e-12)


def test_istft_zero_and_linearity():
    rng = np.random.default_rng(1)
    s = stft(rng.standard_normal((1, 4000)), CFG)
    assert np.all(istft(np.zeros_like(s), CFG, 4000) == 0)
    np.testing.assert_allclose(istft(3.5 * s, CFG, 4000), 3.5 * istft(s, CFG, 4000), atol=1e-6)


def test_istft_rejects_inconsistent_length():
    s = stft(np.zeros((1, 1600)), CFG)
    with pytest.raises(InvalidInput):
        istft(s, CFG, 16000)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    w1, w2 = rng.standard_normal((2, 2, 2000))
    lhs = stft(a * w1 + b * w2, CFG)
    rhs = a * stft(w1, CFG) + b * stft(w2, CFG)
    assert np.linalg.norm(lhs - rhs) <= 1e-6 * max(np.linalg.norm(rhs), 1e-12)


def test_channel_independence():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((3, 2000))
    w2 = w.copy()
    w2[1] = rng.standard_normal(2000)
    s, s2 = stft(w, CFG), stft(w2, CFG)
    assert np.array_equal(s[0], s2[0]) and np.array_equal(s[2], s2[2])
    assert not np.allclose(s[1], s2[1])


def test_torch_input_gives_torch_output():
    w = torch.randn(2, 1000)
    s = stft(w, CFG)
    assert isinstance(s, torch.Tensor) and s.is_complex()
    assert isinstance(istft(s, CFG, 1000), torch.Tensor)


def test_complex_mask():
    mix = stft(np.random.default_rng(3).standard_normal((1, 800)), CFG)[0]
    assert np.array_equal(apply_complex_mask(np.ones_like(mix), mix), mix)
    assert np.all(apply_complex_mask(np.zeros_like(mix), mix) == 0)
    assert apply_complex_mask(np.array([1j]), np.array([2 + 0j]))[0] == 2j
    with pytest.raises(InvalidInput):
        apply_complex_mask(np.ones((3, 4)), np.ones((4, 3)))


@pytest.mark.parametrize("pcm16", [False, True])
def test_wav_round_trip(tmp_path, pcm16):
    w = 0.3 * np.random.default_rng(4).uniform(-1, 1, (3, 1000))
    write_wav(tmp_path / "x.wav", w, pcm16=pcm16)
    r = read_wav(tmp_path / "x.wav")
    assert r.shape == (3, 1000)
    np.testing.assert_allclose(r, w, atol=1 / 32768 if pcm16 else 1e-7)


def test_wav_rejects_other_sample_rates(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "x.wav", 8000, np.zeros(100, np.float32))
    with pytest.raises(InvalidInput, match="sample rate"):
        read_wav(tmp_path / "x.wav")
