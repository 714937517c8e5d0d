"""Universal perturbation optimizers and their building blocks.

One waveform-length perturbation delta is learned against a frozen
encoder so that, added to any carrier, it pulls the encoder's latent
trajectory toward a fixed target trajectory. The objective is the mean
per-frame cosine distance between latent sequences; updates are Adam
with bias correction over gradients accumulated across micro-batches,
followed by a projection of delta onto the l-inf ball of radius epsilon.

Two gradient routes share the same loop: the encoder-only route (cosine
loss in latent space) and the end-to-end baseline (teacher-forced
cross-entropy through the frozen decoder). A third, optimization-free
baseline draws delta uniformly from the epsilon box.

The accumulation window is evaluated as one batched pipeline pass; the
per-carrier values are identical to one-at-a-time evaluation, and the
window mean uses numpy's fixed reduction order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .features import NUM_SAMPLES, melspec_backward, melspec_forward
from .model import (
    DecoderParams,
    EncoderParams,
    decode_ce_batch,
    encode,
    encode_backward,
    encode_forward,
)
from .rng import Rng
from .signal import pad_or_trim

_NORM_GUARD = 1e-8


@dataclass
class AttackConfig:
    """Optimizer settings; defaults follow the reference configuration."""

    epsilon: float = 0.02
    iterations: int = 30_000
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 1
    grad_accum: int = 64
    seed: int = 0
    num_samples: int = NUM_SAMPLES

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.batch < 1 or self.grad_accum < 1:
            raise ValueError("batch and grad_accum must be at least 1")


@dataclass
class PerturbationState:
    """delta plus Adam moments; the budget invariant holds after every update."""

    delta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int
    epsilon: float
    lr: float
    beta1: float
    beta2: float
    adam_eps: float

    @classmethod
    def fresh(cls, config: AttackConfig) -> "PerturbationState":
        n = config.num_samples
        return cls(
            delta=np.zeros(n), m=np.zeros(n), v=np.zeros(n), step=0,
            epsilon=config.epsilon, lr=config.lr,
            beta1=config.beta1, beta2=config.beta2, adam_eps=config.adam_eps,
        )


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    loss: float
    linf: float
    elapsed_s: float


TrainLog = list[TrainRecord]


# ---------------------------------------------------------------------------
# Loss and projection
# ---------------------------------------------------------------------------

def _cosine_vjp(a: np.ndarray, ref: np.ndarray):
    """Per-sample loss and gradient; `a` may be (L, d) or (B, L, d)."""
    na = np.sqrt((a * a).sum(axis=-1))
    nb = np.sqrt((ref * ref).sum(axis=-1))
    dots = (a * ref).sum(axis=-1)
    den = na * nb + _NORM_GUARD
    cos = dots / den
    frames = a.shape[-2]
    losses = (1.0 - cos).mean(axis=-1)
    na_safe = np.where(na > 0.0, na, 1.0)
    # d cos / dA = ref/den - dots*nb/(den^2 * |A|) * A; second term vanishes at A=0
    grad = (-1.0 / frames) * (
        ref / den[..., None] - (dots * nb / (den * den * na_safe))[..., None] * a
    )
    return losses, grad


def cosine_frame_loss(a, b) -> float:
    """Mean over frames of (1 - cosine similarity) between row pairs.

    Denominators carry a +1e-8 guard so zero frames are safe; the value
    lies in [0, 2].
    """
    return cosine_frame_loss_vjp(a, b)[0]


def cosine_frame_loss_vjp(a, b):
    """Loss plus its gradient with respect to the first argument."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"latent shapes must match, got {a.shape} vs {b.shape}")
    losses, grad = _cosine_vjp(a, b)
    return float(losses), grad


def project_linf(delta, epsilon: float) -> np.ndarray:
    """Clamp each sample into [-epsilon, epsilon]; idempotent."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return np.clip(np.asarray(delta, dtype=np.float64), -epsilon, epsilon)


def target_embedding(params: EncoderParams, target_wav) -> np.ndarray:
    """Encode the target audio once; callers keep the result fixed."""
    wav = np.asarray(pad_or_trim(target_wav, NUM_SAMPLES), dtype=np.float64)
    return encode(params, melspec_forward(wav)[0])


# ---------------------------------------------------------------------------
# Gradient routes
# ---------------------------------------------------------------------------

def utlsa_grad_batch(params: EncoderParams, delta, xs, h_tgt):
    """Per-carrier losses and delta-gradients for a (B, T) carrier batch."""
    adv = np.asarray(xs, dtype=np.float64) + np.asarray(delta, dtype=np.float64)
    z, fcache = melspec_forward(adv)
    h, ecache = encode_forward(params, z)
    losses, dh = _cosine_vjp(h, np.asarray(h_tgt, dtype=np.float64))
    dz = encode_backward(params, ecache, dh)
    return losses, melspec_backward(fcache, dz)


def utlsa_grad(params: EncoderParams, delta, x, h_tgt):
    """Cosine loss of encode(features(x + delta)) against the target
    trajectory, and its full chain-rule gradient with respect to delta.

    The gradient with respect to delta equals the gradient with respect
    to the mixed waveform x + delta.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("utlsa_grad takes a single carrier")
    losses, grads = utlsa_grad_batch(params, delta, x[None, :], h_tgt)
    return float(losses[0]), grads[0]


def e2e_grad_batch(enc: EncoderParams, dec: DecoderParams, delta, xs, target_tokens):
    """Per-carrier cross-entropy losses and delta-gradients."""
    adv = np.asarray(xs, dtype=np.float64) + np.asarray(delta, dtype=np.float64)
    z, fcache = melspec_forward(adv)
    h, ecache = encode_forward(enc, z)
    losses, dh = decode_ce_batch(dec, h, target_tokens)
    dz = encode_backward(enc, ecache, dh)
    return losses, melspec_backward(fcache, dz)


def e2e_grad(enc: EncoderParams, dec: DecoderParams, delta, x, target_tokens):
    """Teacher-forced cross-entropy through the frozen decoder, and its
    gradient with respect to delta (decoder -> encoder -> features)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("e2e_grad takes a single carrier")
    losses, grads = e2e_grad_batch(enc, dec, delta, x[None, :], target_tokens)
    return float(losses[0]), grads[0]


def random_universal(seed: int, epsilon: float, num_samples: int) -> np.ndarray:
    """Non-optimized baseline: i.i.d. uniform samples in [-eps, +eps]."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return epsilon * (2.0 * Rng(seed).uniform(num_samples) - 1.0)


# ---------------------------------------------------------------------------
# Optimization loop
# ---------------------------------------------------------------------------

def _adam_project(state: PerturbationState, grad: np.ndarray) -> None:
    t = state.step + 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    state.delta = project_linf(
        state.delta - state.lr * m_hat / (np.sqrt(v_hat) + state.adam_eps),
        state.epsilon,
    )
    state.step = t


def _apply_window(state: PerturbationState, xs: np.ndarray, batch_grad_fn) -> float:
    """One applied update from a stacked accumulation window."""
    losses, grads = batch_grad_fn(state.delta, xs)
    _adam_project(state, grads.sum(axis=0) / len(xs))
    return float(losses.mean())


def attack_step(state: PerturbationState, carriers, params: EncoderParams, h_tgt, accum: int) -> float:
    """One applied update from a window of `accum` micro-batches.

    `carriers` is the flat accumulation window (micro-batch count times
    micro-batch size waveforms, already padded); the gradient is the
    mean over the window. Returns the window's mean loss.
    """
    if len(carriers) % accum:
        raise ValueError(f"window of {len(carriers)} carriers does not split into {accum} micro-batches")
    xs = np.stack([np.asarray(x, dtype=np.float64) for x in carriers])
    return _apply_window(state, xs, lambda d, b: utlsa_grad_batch(params, d, b, h_tgt))


class _Shuffler:
    """Seeded epoch shuffle with sequential consumption across epochs."""

    def __init__(self, count: int, seed: int) -> None:
        self.rng = Rng(seed)
        self.order = list(range(count))
        self.pos = count  # force a shuffle on first draw

    def _reshuffle(self) -> None:
        xs = self.order
        for i in range(len(xs) - 1, 0, -1):
            j = self.rng.next_below(i + 1)
            xs[i], xs[j] = xs[j], xs[i]
        self.pos = 0

    def take(self, n: int) -> list[int]:
        out = []
        while len(out) < n:
            if self.pos >= len(self.order):
                self._reshuffle()
            out.append(self.order[self.pos])
            self.pos += 1
        return out


class AttackLoop:
    """Stepping driver shared by the attack runners and the benchmark."""

    def __init__(self, config: AttackConfig, corpus, batch_grad_fn) -> None:
        if len(corpus) == 0:
            raise ValueError("carrier corpus is empty")
        self.carriers = np.stack([
            np.asarray(pad_or_trim(x, config.num_samples), dtype=np.float64) for x in corpus
        ])
        self.window_size = config.batch * config.grad_accum
        self.state = PerturbationState.fresh(config)
        self.shuffler = _Shuffler(len(corpus), config.seed)
        self.batch_grad_fn = batch_grad_fn

    def step(self) -> float:
        xs = self.carriers[self.shuffler.take(self.window_size)]
        loss = _apply_window(self.state, xs, self.batch_grad_fn)
        if not np.isfinite(loss) or not np.all(np.isfinite(self.state.delta)):
            raise ArithmeticError(f"non-finite loss or delta at step {self.state.step}")
        return loss


def _run(loop: AttackLoop, iterations: int, log_every: int):
    log: TrainLog = []
    start = time.perf_counter()
    for it in range(1, iterations + 1):
        loss = loop.step()
        if it % log_every == 0 or it == iterations:
            log.append(TrainRecord(
                iteration=it,
                loss=loss,
                linf=float(np.max(np.abs(loop.state.delta))),
                elapsed_s=time.perf_counter() - start,
            ))
    return loop.state.delta.copy(), log


def run_utlsa(config: AttackConfig, corpus, params: EncoderParams, target_wav, log_every: int = 1):
    """Learn a universal perturbation with the encoder-only objective.

    delta starts at zero; the target embedding is computed once up front
    and held fixed. Deterministic given (config, corpus, params, target).
    Returns (delta, train log).
    """
    h_tgt = target_embedding(params, target_wav)
    loop = AttackLoop(config, corpus, lambda d, xs: utlsa_grad_batch(params, d, xs, h_tgt))
    return _run(loop, config.iterations, log_every)


def run_e2e(config: AttackConfig, corpus, enc: EncoderParams, dec: DecoderParams,
            target_tokens, log_every: int = 1):
    """End-to-end baseline: same loop, cross-entropy through the decoder."""
    tokens = np.asarray(target_tokens)
    loop = AttackLoop(config, corpus, lambda d, xs: e2e_grad_batch(enc, dec, d, xs, tokens))
    return _run(loop, config.iterations, log_every)
