"""Log-Mel spectrogram front-end with an exact waveform gradient.

The analysis chain is fixed: 25 ms periodic Hann frames (400 samples) at
a 10 ms hop (160 samples), no center padding, zero-padded 512-point real
FFT, power spectrum, a 64-band triangular mel filterbank (peak weight 1,
no area normalization), and a smooth natural-log floor ln(p + 1e-6).
For the canonical 16000-sample input this yields a 98 x 64 spectrogram.

log_mel_vjp backpropagates an upstream spectrogram-shaped cotangent to a
waveform-shaped gradient through the full chain, accumulating the
contributions of overlapping frames additively. The melspec_forward /
melspec_backward pair exposes the same math over a leading batch axis
with a reusable forward cache; the optimizer hot loop uses it to avoid
recomputing the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .signal import SAMPLE_RATE

WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
N_MELS = 64
LOG_FLOOR = 1e-6
NUM_SAMPLES = 16000
NUM_FRAMES = 1 + (NUM_SAMPLES - WIN_LENGTH) // HOP_LENGTH  # 98

# natural-log power -> decibels: dB = 10*log10(e) * ln(p)
DB_PER_NAT = 10.0 / np.log(10.0)

_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_LENGTH) / WIN_LENGTH)
_FRAME_IDX = HOP_LENGTH * np.arange(NUM_FRAMES)[:, None] + np.arange(WIN_LENGTH)[None, :]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular mel filters over the one-sided FFT bins.

    weights has shape (n_mels, n_fft // 2 + 1); filter m rises from
    edge m to m+1 and falls to m+2, with peak value 1.
    """

    weights: np.ndarray
    n_fft: int
    f_min: float
    f_max: float
    edges_hz: np.ndarray


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    f_min: float = 0.0,
    f_max: float = 8000.0,
) -> MelFilterbank:
    if n_mels < 1:
        raise ValueError("n_mels must be at least 1")
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two")
    if not 0.0 <= f_min < f_max <= SAMPLE_RATE / 2:
        raise ValueError("need 0 <= f_min < f_max <= 8000")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bins_hz = np.arange(n_fft // 2 + 1) * (SAMPLE_RATE / n_fft)
    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    rising = (bins_hz[None, :] - lower) / (center - lower)
    falling = (upper - bins_hz[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights=weights, n_fft=n_fft, f_min=f_min, f_max=f_max, edges_hz=edges)


@lru_cache(maxsize=1)
def default_filterbank() -> MelFilterbank:
    return mel_filterbank()


def _check_batch(wav) -> np.ndarray:
    x = np.asarray(wav, dtype=np.float64)
    if x.shape[-1] != NUM_SAMPLES:
        raise ValueError(f"waveform must have exactly {NUM_SAMPLES} samples, got shape {x.shape}")
    return x


def melspec_forward(wav):
    """Batched log-Mel forward over (..., 16000); returns (out, cache)."""
    x = _check_batch(wav)
    windows = np.lib.stride_tricks.sliding_window_view(x, WIN_LENGTH, axis=-1)
    frames = windows[..., ::HOP_LENGTH, :] * _WINDOW
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=-1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ default_filterbank().weights.T
    return np.log(mel + LOG_FLOOR), (spectrum, mel)


def melspec_backward(cache, upstream) -> np.ndarray:
    """Waveform cotangent for a cached forward pass.

    The power-spectrum adjoint uses the identity
    d<c, |X|^2>/dx = N * irfft(c * X) with the DC and Nyquist bins of
    c * X doubled to compensate for the one-sided spectrum's weighting;
    overlapping frames accumulate into disjoint strided slices.
    """
    spectrum, mel = cache
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != mel.shape:
        raise ValueError(f"upstream must have shape {mel.shape}, got {up.shape}")
    fb = default_filterbank().weights
    d_power = (up / (mel + LOG_FLOOR)) @ (N_FFT * fb)
    y = d_power * spectrum
    y[..., 0] *= 2.0
    y[..., -1] *= 2.0
    d_frames = np.fft.irfft(y, n=N_FFT, axis=-1)
    d_windowed = d_frames[..., :WIN_LENGTH] * _WINDOW

    batch = d_windowed.shape[:-2]
    grad = np.zeros(batch + (NUM_SAMPLES,))
    for off in range(0, WIN_LENGTH, HOP_LENGTH):
        width = min(HOP_LENGTH, WIN_LENGTH - off)
        seg = grad[..., off:off + NUM_FRAMES * HOP_LENGTH]
        seg = seg.reshape(batch + (NUM_FRAMES, HOP_LENGTH))
        seg[..., :width] += d_windowed[..., off:off + width]
    return grad


def log_mel(wav) -> np.ndarray:
    """Log-Mel spectrogram of a 16000-sample waveform, shape (98, 64)."""
    x = _check_batch(wav)
    if x.ndim != 1:
        raise ValueError("log_mel takes a single 1-D waveform")
    return melspec_forward(x)[0]


def log_mel_vjp(wav, upstream) -> np.ndarray:
    """Gradient of <upstream, log_mel(wav)> with respect to the waveform."""
    x = _check_batch(wav)
    if x.ndim != 1:
        raise ValueError("log_mel_vjp takes a single 1-D waveform")
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (NUM_FRAMES, N_MELS):
        raise ValueError(f"upstream must have shape ({NUM_FRAMES}, {N_MELS}), got {up.shape}")
    _, cache = melspec_forward(x)
    return melspec_backward(cache, up)
