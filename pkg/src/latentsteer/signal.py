"""Waveform I/O and deterministic synthetic audio.

All audio is mono float32 at SAMPLE_RATE (16 kHz). Waveforms are plain
1-D numpy arrays of dimensionless amplitudes; PCM conversion happens only
at the WAV boundary. Carrier and target synthesis are pure functions of
their seeds so that every corpus can be regenerated bit for bit.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .rng import Rng, fnv1a64
from .text import normalize_text

SAMPLE_RATE = 16000

_PCM_FULL_SCALE = 32767.0
_ENVELOPE_RAMP = 800
_TARGET_LENGTH = 16000
_TARGET_SEGMENTS = 8
_TARGET_SEGMENT_LEN = 2000
_CROSSFADE = 100


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(ValueError):
    """Well-formed WAV, but not PCM16 / mono / 16 kHz."""


def read_wav(path) -> np.ndarray:
    """Read PCM16 mono 16 kHz WAV; samples scaled by 1/32768.

    No resampling or channel mixing is performed: anything other than
    16-bit mono 16 kHz PCM raises UnsupportedWavError.
    """
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            comp = w.getcomptype()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if comp != "NONE":
        raise UnsupportedWavError(f"{path}: compressed WAV ({comp}) not supported")
    if channels != 1 or width != 2 or rate != SAMPLE_RATE:
        raise UnsupportedWavError(
            f"{path}: need PCM16 mono {SAMPLE_RATE} Hz, "
            f"got {width * 8}-bit {channels}ch {rate} Hz"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    return (pcm.astype(np.float32)) / 32768.0


def write_wav(wav, path) -> None:
    """Write mono PCM16 at 16 kHz; clamps to [-1, 1] then quantizes.

    Quantization is round(s * 32767) with halves rounded away from zero,
    so the written bytes are identical across platforms.
    """
    s = np.asarray(wav, dtype=np.float64)
    s = np.clip(s, -1.0, 1.0) * _PCM_FULL_SCALE
    pcm = np.where(s >= 0.0, np.floor(s + 0.5), np.ceil(s - 0.5)).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


@dataclass(frozen=True)
class CarrierProfile:
    """Synthesis recipe for one family of carrier utterances.

    kind selects the band limit: telephony carriers are limited to
    3400 Hz, read and keyword carriers to the 8000 Hz Nyquist band.
    """

    kind: str
    duration_samples: int
    f0_range: tuple[float, float]
    harmonic_max: int
    noise_amp: float

    def __post_init__(self) -> None:
        if self.kind not in ("read", "telephony", "keyword"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not 0 < self.duration_samples <= 16000:
            raise ValueError("duration_samples must be in (0, 16000]")
        if not self.f0_range[0] < self.f0_range[1]:
            raise ValueError("f0_range low must be below high")
        if self.harmonic_max < 5:
            raise ValueError("harmonic_max must be at least 5")
        if self.noise_amp < 0:
            raise ValueError("noise_amp must be non-negative")

    @property
    def band_limit_hz(self) -> float:
        return 3400.0 if self.kind == "telephony" else 8000.0


DEFAULT_PROFILES = {
    "read": CarrierProfile("read", 16000, (85.0, 255.0), 40, 0.01),
    "telephony": CarrierProfile("telephony", 16000, (110.0, 300.0), 24, 0.03),
    "keyword": CarrierProfile("keyword", 4000, (100.0, 320.0), 30, 0.02),
}


def _ramp_envelope(n: int, ramp: int = _ENVELOPE_RAMP) -> np.ndarray:
    """Raised-cosine attack/release over `ramp` samples at each end."""
    env = np.ones(n, dtype=np.float64)
    r = min(ramp, n // 2)
    if r > 0:
        shape = 0.5 * (1.0 - np.cos(np.pi * np.arange(r) / r))
        env[:r] = shape
        env[n - r:] = shape[::-1]
    return env


def synth_carrier(seed: int, profile: CarrierProfile) -> np.ndarray:
    """Deterministic harmonic carrier with peak amplitude exactly 0.5.

    Stream layout for Rng(seed): one uniform for f0, one u64 for the
    harmonic count H in [5, harmonic_max], H uniforms for the phases
    (drawn for every harmonic, band-limited or not), then one uniform
    per sample for the additive noise.
    """
    rng = Rng(seed)
    lo, hi = profile.f0_range
    f0 = lo + (hi - lo) * rng.uniform(1)[0]
    h_count = 5 + rng.next_below(profile.harmonic_max - 4)
    phases = 2.0 * np.pi * rng.uniform(h_count)

    n = profile.duration_samples
    t = np.arange(n, dtype=np.float64)
    s = np.zeros(n, dtype=np.float64)
    for k in range(1, h_count + 1):
        if k * f0 <= profile.band_limit_hz:
            s += (0.5 / k) * np.sin(2.0 * np.pi * k * f0 * t / SAMPLE_RATE + phases[k - 1])
    s *= _ramp_envelope(n)
    s += profile.noise_amp * (2.0 * rng.uniform(n) - 1.0)

    peak = float(np.max(np.abs(s)))
    if peak > 0.0:
        s *= 0.5 / peak
    return s.astype(np.float32)


def synth_target(command: str) -> np.ndarray:
    """Signature waveform for a command: 8 crossfaded tone segments.

    The seed is the FNV-1a hash of the normalized command; each of the 8
    segments of 2000 samples is a 0.5-amplitude sine at
    300 + 50 * (next_u64 % 64) Hz evaluated on the global time axis, with
    100-sample raised-cosine crossfades at the segment boundaries.
    """
    norm = normalize_text(command)
    if not norm:
        raise ValueError("target command is empty")
    rng = Rng(fnv1a64(norm.encode("utf-8")))
    freqs = [300.0 + 50.0 * rng.next_below(64) for _ in range(_TARGET_SEGMENTS)]

    t = np.arange(_TARGET_LENGTH, dtype=np.float64)
    tones = [0.5 * np.sin(2.0 * np.pi * f * t / SAMPLE_RATE) for f in freqs]
    out = np.empty(_TARGET_LENGTH, dtype=np.float64)
    for i in range(_TARGET_SEGMENTS):
        lo = i * _TARGET_SEGMENT_LEN
        out[lo:lo + _TARGET_SEGMENT_LEN] = tones[i][lo:lo + _TARGET_SEGMENT_LEN]
    fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(_CROSSFADE) / (_CROSSFADE - 1)))
    for i in range(1, _TARGET_SEGMENTS):
        b = i * _TARGET_SEGMENT_LEN
        out[b:b + _CROSSFADE] = (
            (1.0 - fade) * tones[i - 1][b:b + _CROSSFADE] + fade * tones[i][b:b + _CROSSFADE]
        )
    return out.astype(np.float32)


def pad_or_trim(wav, num_samples: int) -> np.ndarray:
    """Fix length by zero-padding or trimming at the end."""
    if num_samples <= 0:
        raise ValueError("num_samples must be positive")
    w = np.asarray(wav)
    if w.ndim != 1:
        raise ValueError("waveform must be 1-D")
    if len(w) == num_samples:
        return w
    if len(w) > num_samples:
        return w[:num_samples]
    return np.concatenate([w, np.zeros(num_samples - len(w), dtype=w.dtype)])


def mix(x, delta) -> np.ndarray:
    """Element-wise sum of carrier and perturbation.

    Deliberately not clamped: values may leave the PCM range in memory
    and are only clamped on WAV export.
    """
    x = np.asarray(x)
    delta = np.asarray(delta)
    if x.shape != delta.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {delta.shape}")
    return x + delta
