import math

import numpy as np
import pytest

from latentsteer.features import (
    HOP_LENGTH,
    LOG_FLOOR,
    N_FFT,
    N_MELS,
    NUM_FRAMES,
    NUM_SAMPLES,
    WIN_LENGTH,
    default_filterbank,
    hz_to_mel,
    log_mel,
    log_mel_vjp,
    mel_filterbank,
    mel_to_hz,
    melspec_backward,
    melspec_forward,
)
from latentsteer.signal import DEFAULT_PROFILES, pad_or_trim, synth_carrier


def _carrier(seed, kind="read"):
    wav = synth_carrier(seed, DEFAULT_PROFILES[kind])
    return np.asarray(pad_or_trim(wav, NUM_SAMPLES), dtype=np.float64)


# ---------------------------------------------------------------------------
# Filterbank
# ---------------------------------------------------------------------------

def test_filterbank_shape():
    fb = mel_filterbank(64, 512, 0.0, 8000.0)
    assert fb.weights.shape == (64, 257)
    assert np.all(fb.weights >= 0.0)
    assert np.all(fb.weights <= 1.0)


def test_filterbank_edges_match_mel_formula():
    fb = mel_filterbank(64, 512, 0.0, 8000.0)
    lo = 2595.0 * math.log10(1.0 + 0.0 / 700.0)
    hi = 2595.0 * math.log10(1.0 + 8000.0 / 700.0)
    mels = [lo + (hi - lo) * i / 65 for i in range(66)]
    expected = [700.0 * (10.0 ** (m / 2595.0) - 1.0) for m in mels]
    assert np.allclose(fb.edges_hz, expected, rtol=1e-12, atol=1e-9)
    assert len(fb.edges_hz) == 66


def test_filterbank_triangles_peak_at_one():
    # peak value 1 at the center edge, no area normalization
    fb = mel_filterbank()
    bins_hz = np.arange(257) * (16000 / 512)
    for m in (0, 10, 31, 63):
        lo, c, hi = fb.edges_hz[m], fb.edges_hz[m + 1], fb.edges_hz[m + 2]
        expected = np.maximum(0.0, np.minimum((bins_hz - lo) / (c - lo), (hi - bins_hz) / (hi - c)))
        assert np.allclose(fb.weights[m], expected, atol=1e-12)
        assert fb.weights[m].max() <= 1.0


def test_filterbank_row_sums_positive():
    fb = mel_filterbank()
    assert np.all(fb.weights.sum(axis=1) > 0.0)


def test_filterbank_covers_interior_bins():
    # triangles are zero exactly at f_min/f_max, so coverage is checked on
    # bins strictly inside the band
    fb = mel_filterbank()
    bins_hz = np.arange(257) * (16000 / 512)
    interior = (bins_hz > fb.f_min) & (bins_hz < fb.f_max)
    assert np.all(fb.weights.sum(axis=0)[interior] > 0.0)


def test_filterbank_validation():
    with pytest.raises(ValueError):
        mel_filterbank(0, 512, 0.0, 8000.0)
    with pytest.raises(ValueError):
        mel_filterbank(64, 500, 0.0, 8000.0)  # not a power of two
    with pytest.raises(ValueError):
        mel_filterbank(64, 512, 4000.0, 1000.0)
    with pytest.raises(ValueError):
        mel_filterbank(64, 512, 0.0, 9000.0)


def test_mel_scale_round_trip():
    f = np.array([0.0, 440.0, 1000.0, 7999.0])
    assert np.allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def test_log_mel_shape_and_floor():
    out = log_mel(np.zeros(NUM_SAMPLES))
    assert out.shape == (NUM_FRAMES, N_MELS) == (98, 64)
    assert np.allclose(out, math.log(LOG_FLOOR), atol=1e-12)
    assert np.all(log_mel(_carrier(5)) >= math.log(LOG_FLOOR))


def test_log_mel_rejects_wrong_length():
    with pytest.raises(ValueError):
        log_mel(np.zeros(NUM_SAMPLES - 1))
    with pytest.raises(ValueError):
        log_mel(np.zeros((2, NUM_SAMPLES)))


def test_pure_tone_hits_nearest_mel_bin():
    t = np.arange(NUM_SAMPLES)
    tone = 0.5 * np.sin(2 * np.pi * 1000.0 * t / 16000.0)
    out = log_mel(tone)
    fb = default_filterbank()
    centers = fb.edges_hz[1:-1]
    expected_bin = int(np.argmin(np.abs(centers - 1000.0)))
    hits = np.argmax(out, axis=1)
    interior = hits[2:-2]  # ignore attack/release edge frames
    assert np.all(np.abs(interior - expected_bin) <= 1)
    assert np.median(interior) == expected_bin


def test_hop_shift_moves_frames_by_one():
    x = _carrier(3)
    shifted = np.concatenate([np.zeros(HOP_LENGTH), x])[:NUM_SAMPLES]
    a = log_mel(x)
    b = log_mel(shifted)
    assert np.allclose(b[1:NUM_FRAMES - 1], a[0:NUM_FRAMES - 2], atol=1e-5)


def test_batched_forward_matches_single():
    xs = np.stack([_carrier(1), _carrier(2)])
    batched, _ = melspec_forward(xs)
    assert batched.shape == (2, NUM_FRAMES, N_MELS)
    assert np.array_equal(batched[0], log_mel(xs[0]))
    assert np.array_equal(batched[1], log_mel(xs[1]))


# ---------------------------------------------------------------------------
# VJP
# ---------------------------------------------------------------------------

def test_vjp_zero_upstream_gives_zero():
    grad = log_mel_vjp(_carrier(1), np.zeros((NUM_FRAMES, N_MELS)))
    assert np.array_equal(grad, np.zeros(NUM_SAMPLES))


def test_vjp_shape_checks():
    with pytest.raises(ValueError):
        log_mel_vjp(_carrier(1), np.zeros((NUM_FRAMES, N_MELS + 1)))
    with pytest.raises(ValueError):
        log_mel_vjp(np.zeros(100), np.zeros((NUM_FRAMES, N_MELS)))


def test_vjp_matches_finite_differences_random_wav():
    # spec'd example case: random waveform, step 1e-3, rel error < 1e-3
    rng = np.random.default_rng(11)
    x = rng.uniform(-0.5, 0.5, NUM_SAMPLES)
    up = rng.standard_normal((NUM_FRAMES, N_MELS))
    grad = log_mel_vjp(x, up)
    step = 1e-3
    for idx in rng.integers(0, NUM_SAMPLES, 20):
        xp = x.copy(); xp[idx] += step
        xm = x.copy(); xm[idx] -= step
        fd = (np.sum(up * log_mel(xp)) - np.sum(up * log_mel(xm))) / (2 * step)
        rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-12)
        assert rel < 1e-3, f"coordinate {idx}: rel error {rel}"


@pytest.mark.parametrize("kind", ["read", "telephony", "keyword"])
def test_vjp_matches_finite_differences_all_profiles(kind):
    # synthesized carriers sit near the log floor in places, where the
    # central difference truncation needs the finer 1e-4 step
    rng = np.random.default_rng(17)
    x = _carrier(23, kind)
    up = rng.standard_normal((NUM_FRAMES, N_MELS))
    grad = log_mel_vjp(x, up)
    step = 1e-4
    for idx in rng.integers(0, NUM_SAMPLES, 20):
        xp = x.copy(); xp[idx] += step
        xm = x.copy(); xm[idx] -= step
        fd = (np.sum(up * log_mel(xp)) - np.sum(up * log_mel(xm))) / (2 * step)
        rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-12)
        assert rel < 1e-3, f"{kind} coordinate {idx}: rel error {rel}"


def test_vjp_linear_in_upstream():
    rng = np.random.default_rng(5)
    x = _carrier(9)
    u = rng.standard_normal((NUM_FRAMES, N_MELS))
    v = rng.standard_normal((NUM_FRAMES, N_MELS))
    combined = log_mel_vjp(x, 2.5 * u - 0.75 * v)
    separate = 2.5 * log_mel_vjp(x, u) - 0.75 * log_mel_vjp(x, v)
    assert np.allclose(combined, separate, rtol=1e-5, atol=1e-12)


def test_vjp_single_frame_support():
    x = _carrier(4)
    for frame in (0, 37, NUM_FRAMES - 1):
        up = np.zeros((NUM_FRAMES, N_MELS))
        up[frame] = 1.0
        grad = log_mel_vjp(x, up)
        support = np.nonzero(grad)[0]
        assert support.min() >= frame * HOP_LENGTH
        assert support.max() < frame * HOP_LENGTH + WIN_LENGTH


def test_scatter_matches_add_at_reference():
    rng = np.random.default_rng(8)
    xs = np.stack([_carrier(1), rng.uniform(-0.5, 0.5, NUM_SAMPLES)])
    up = rng.standard_normal((2, NUM_FRAMES, N_MELS))
    _, cache = melspec_forward(xs)
    got = melspec_backward(cache, up)
    idx = HOP_LENGTH * np.arange(NUM_FRAMES)[:, None] + np.arange(WIN_LENGTH)[None, :]
    for b in range(2):
        single = log_mel_vjp(xs[b], up[b])
        assert np.allclose(got[b], single, rtol=1e-12, atol=1e-15)
        # reference accumulation with np.add.at over the same frame slices
        ref = np.zeros(NUM_SAMPLES)
        per_frame = np.zeros((NUM_FRAMES, WIN_LENGTH))
        for frame in range(NUM_FRAMES):
            one = np.zeros((NUM_FRAMES, N_MELS))
            one[frame] = up[b, frame]
            per_frame[frame] = log_mel_vjp(xs[b], one)[idx[frame]]
        np.add.at(ref, idx, per_frame)
        assert np.allclose(got[b], ref, rtol=1e-9, atol=1e-10)
