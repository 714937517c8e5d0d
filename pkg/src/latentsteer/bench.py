"""Efficiency comparison of the two attack routes.

Both modes run the exact optimization loop used by the attack runners
(same seeded sampling, so a benchmarked run yields a bit-identical
perturbation), with a fixed number of untimed warm-up iterations before
timing. Peak memory is an analytic accounting of the tensor payloads
live at the deepest point of the backward pass (parameters, activation
stashes, gradient buffers), not an OS measurement: it is a deterministic
function of the architecture and shapes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .attack import AttackConfig, AttackLoop, e2e_grad_batch, target_embedding, utlsa_grad_batch
from .features import NUM_FRAMES, NUM_SAMPLES, N_FFT, N_MELS, WIN_LENGTH
from .model import DecoderParams, EncoderParams, decode_forward, encode_forward
from .signal import synth_target
from .text import MAX_TOKENS, encode_command
from .weights import decoder_tensors, encoder_tensors

MODES = ("encoder_only", "end_to_end")
WARMUP_ITERATIONS = 10


@dataclass(frozen=True)
class BenchReport:
    mode: str
    iterations: int
    wall_seconds: float
    iters_per_second: float
    peak_bytes_estimate: int


def _tree_bytes(obj) -> int:
    if isinstance(obj, np.ndarray):
        return obj.nbytes
    if isinstance(obj, (tuple, list)):
        return sum(_tree_bytes(item) for item in obj)
    return 0


def estimate_peak_bytes(mode: str, enc: EncoderParams, dec: DecoderParams | None = None) -> int:
    """Live-payload accounting at the deepest point of one backward pass.

    Counts parameters, the encoder activation stash (measured from a
    dummy forward, so shapes cannot drift from the implementation), the
    front-end's forward/adjoint buffers, the waveform-sized optimizer
    state, and for the end-to-end route additionally the decoder stash.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    total = sum(arr.nbytes for arr in encoder_tensors(enc).values())

    latents, cache = encode_forward(enc, np.zeros((NUM_FRAMES, N_MELS)))
    spec_bytes = NUM_FRAMES * N_MELS * 8
    total += _tree_bytes(cache) + latents.nbytes
    total += 2 * latents.nbytes  # latent cotangent + running block cotangent
    total += 2 * spec_bytes      # spectrogram and its gradient

    frames = NUM_FRAMES * WIN_LENGTH * 8
    one_sided = NUM_FRAMES * (N_FFT // 2 + 1)
    total += 2 * frames                  # windowed frames + their cotangent
    total += 2 * one_sided * 16          # complex spectrum + scaled copy
    total += 2 * one_sided * 8           # power + its cotangent
    total += NUM_FRAMES * N_FFT * 8      # inverse-FFT scratch
    total += 2 * NUM_FRAMES * N_MELS * 8  # mel energies + cotangent

    total += 6 * NUM_SAMPLES * 8  # carrier, mixed input, grad, delta, m, v

    if mode == "end_to_end":
        if dec is None:
            raise ValueError("end_to_end estimate needs decoder parameters")
        total += sum(arr.nbytes for arr in decoder_tensors(dec).values())
        inputs = np.zeros(MAX_TOKENS - 1, dtype=np.int64)
        logits, dec_cache = decode_forward(dec, latents, inputs)
        total += _tree_bytes(dec_cache)
        total += 3 * logits.nbytes            # logits, softmax, cotangent
        total += 2 * (MAX_TOKENS - 1) * 64 * 8  # decoder states + running cotangent
        total += latents.nbytes               # gradient into the latents
    return int(total)


def bench_attack(mode: str, iterations: int, config: AttackConfig, corpus,
                 params: tuple[EncoderParams, DecoderParams], target_command: str,
                 warmup: int = WARMUP_ITERATIONS, threads: int = 1) -> BenchReport:
    """Time `iterations` optimizer updates of the given route.

    Both modes are driven through the shared loop with identical
    configuration, corpus, parameters, and warm-up, so their timings are
    comparable and their resulting perturbations match unbenchmarked runs
    of warmup + iterations updates bit for bit. BLAS parallelism is
    capped at `threads` (default single-threaded) for both modes alike.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    enc, dec = params
    if mode == "encoder_only":
        h_tgt = target_embedding(enc, synth_target(target_command))
        loop = AttackLoop(config, corpus, lambda d, xs: utlsa_grad_batch(enc, d, xs, h_tgt))
        peak = estimate_peak_bytes(mode, enc)
    elif mode == "end_to_end":
        tokens = encode_command(target_command)
        loop = AttackLoop(config, corpus, lambda d, xs: e2e_grad_batch(enc, dec, d, xs, tokens))
        peak = estimate_peak_bytes(mode, enc, dec)
    else:
        raise ValueError(f"mode must be one of {MODES}")

    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            loop.step()
        start = time.perf_counter()
        for _ in range(iterations):
            loop.step()
        wall = time.perf_counter() - start
    return BenchReport(
        mode=mode,
        iterations=iterations,
        wall_seconds=wall,
        iters_per_second=iterations / wall,
        peak_bytes_estimate=peak,
    )


def bench_records(*reports: BenchReport) -> str:
    """Line-delimited JSON, one record per report."""
    lines = [
        json.dumps({
            "type": "bench", "mode": r.mode, "iterations": r.iterations,
            "wall_seconds": r.wall_seconds, "iters_per_second": r.iters_per_second,
            "peak_bytes_estimate": r.peak_bytes_estimate,
        }, sort_keys=True)
        for r in reports
    ]
    return "\n".join(lines) + "\n"


def render_bench_table(encoder_only: BenchReport, end_to_end: BenchReport) -> str:
    """Three-row comparison with end_to_end/encoder_only ratio notes."""
    if encoder_only.iterations != end_to_end.iterations:
        raise ValueError("reports cover different iteration counts")
    mem_ratio = end_to_end.peak_bytes_estimate / encoder_only.peak_bytes_estimate
    time_ratio = end_to_end.wall_seconds / encoder_only.wall_seconds
    thr_ratio = encoder_only.iters_per_second / end_to_end.iters_per_second
    rows = [
        ("Peak memory estimate (MB)",
         f"{end_to_end.peak_bytes_estimate / 2**20:.2f}",
         f"{encoder_only.peak_bytes_estimate / 2**20:.2f} ({mem_ratio:.1f}x lower)"),
        (f"Wall time for {encoder_only.iterations} iters (s)",
         f"{end_to_end.wall_seconds:.2f}",
         f"{encoder_only.wall_seconds:.2f} ({time_ratio:.1f}x faster)"),
        ("Throughput (iters/s)",
         f"{end_to_end.iters_per_second:.2f}",
         f"{encoder_only.iters_per_second:.2f} ({thr_ratio:.1f}x higher)"),
    ]
    header = ("Metric", "End-to-end", "Encoder-only")
    table = [header] + rows
    widths = [max(len(r[i]) for r in table) for i in range(3)]
    lines = [
        "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                  for i, (cell, w) in enumerate(zip(row, widths)))
        for row in table
    ]
    return "\n".join(lines) + "\n"
