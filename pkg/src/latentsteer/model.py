"""Frozen reference encoder and decoder with hand-written gradients.

The encoder maps a (98, 64) log-Mel spectrogram to a (49, 64) latent
sequence: two GELU conv layers (the second with stride 2), fixed
sinusoidal positions, two pre-norm transformer blocks (4 heads of
dimension 16, MLP hidden 256), and a final layer norm.

The decoder is a fixed random-init teacher-forced scorer used only to
price the end-to-end baseline: token embedding over a 30-symbol
vocabulary, four pre-norm blocks of causal self-attention,
cross-attention into the latent sequence, and an MLP, then a final layer
norm and vocabulary projection. It is never trained and its text output
is meaningless by construction.

Parameters are immutable after init. Because they stay frozen, reverse
mode only ever propagates cotangents through activations, never into the
weights, and every forward helper stashes exactly what its backward
needs. All forward/backward helpers accept an arbitrary leading batch
axis; the public contract functions take single inputs. Activations are
computed in float64 so finite-difference checks are meaningful; weights
are stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .rng import Rng
from .text import BOS_ID, MAX_TOKENS, PAD_ID, VOCAB_SIZE

D_MODEL = 64
N_HEADS = 4
HEAD_DIM = 16
MLP_HIDDEN = 256
ENC_BLOCKS = 2
DEC_BLOCKS = 4
IN_FRAMES = 98
ENC_FRAMES = 49
LN_EPS = 1e-5

_ATTN_SCALE = 1.0 / np.sqrt(HEAD_DIM)
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttnParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray


@dataclass(frozen=True)
class EncBlockParams:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    attn: AttnParams
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class EncoderParams:
    conv1_w: np.ndarray  # (out, in, kernel)
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    blocks: tuple[EncBlockParams, ...]
    lnf_g: np.ndarray
    lnf_b: np.ndarray


@dataclass(frozen=True)
class DecBlockParams:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    self_attn: AttnParams
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    cross_attn: AttnParams
    ln3_g: np.ndarray
    ln3_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class DecoderParams:
    embed: np.ndarray  # (vocab, d)
    blocks: tuple[DecBlockParams, ...]
    lnf_g: np.ndarray
    lnf_b: np.ndarray
    out_w: np.ndarray  # (d, vocab)
    out_b: np.ndarray


def init_params(seed: int) -> tuple[EncoderParams, DecoderParams]:
    """Deterministic frozen parameters from one SplitMix64 stream.

    Draw order: encoder conv1, conv2, then per block wq, wk, wv, wo, w1,
    w2; then decoder embedding, per block self wq..wo, cross wq..wo, w1,
    w2, and the output projection. Each weight matrix is drawn row-major
    with std 1/sqrt(fan_in) (fan_in = input dim, in_channels*kernel for
    convs, the leading dim for the embedding). Layer-norm gains are 1,
    all biases are 0; neither consumes draws.
    """
    rng = Rng(seed)

    def draw(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        n = int(np.prod(shape))
        return (rng.normal(n) * fan_in**-0.5).reshape(shape).astype(np.float32)

    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape, dtype=np.float32)

    def ones(*shape: int) -> np.ndarray:
        return np.ones(shape, dtype=np.float32)

    def attn() -> AttnParams:
        return AttnParams(
            wq=draw((D_MODEL, D_MODEL), D_MODEL), bq=zeros(D_MODEL),
            wk=draw((D_MODEL, D_MODEL), D_MODEL), bk=zeros(D_MODEL),
            wv=draw((D_MODEL, D_MODEL), D_MODEL), bv=zeros(D_MODEL),
            wo=draw((D_MODEL, D_MODEL), D_MODEL), bo=zeros(D_MODEL),
        )

    conv1_w = draw((D_MODEL, D_MODEL, 3), D_MODEL * 3)
    conv1_b = zeros(D_MODEL)
    conv2_w = draw((D_MODEL, D_MODEL, 3), D_MODEL * 3)
    conv2_b = zeros(D_MODEL)
    enc_blocks = []
    for _ in range(ENC_BLOCKS):
        enc_blocks.append(EncBlockParams(
            ln1_g=ones(D_MODEL), ln1_b=zeros(D_MODEL),
            attn=attn(),
            ln2_g=ones(D_MODEL), ln2_b=zeros(D_MODEL),
            w1=draw((D_MODEL, MLP_HIDDEN), D_MODEL), b1=zeros(MLP_HIDDEN),
            w2=draw((MLP_HIDDEN, D_MODEL), MLP_HIDDEN), b2=zeros(D_MODEL),
        ))
    enc = EncoderParams(
        conv1_w=conv1_w, conv1_b=conv1_b,
        conv2_w=conv2_w, conv2_b=conv2_b,
        blocks=tuple(enc_blocks),
        lnf_g=ones(D_MODEL), lnf_b=zeros(D_MODEL),
    )

    embed = draw((VOCAB_SIZE, D_MODEL), VOCAB_SIZE)
    dec_blocks = []
    for _ in range(DEC_BLOCKS):
        dec_blocks.append(DecBlockParams(
            ln1_g=ones(D_MODEL), ln1_b=zeros(D_MODEL),
            self_attn=attn(),
            ln2_g=ones(D_MODEL), ln2_b=zeros(D_MODEL),
            cross_attn=attn(),
            ln3_g=ones(D_MODEL), ln3_b=zeros(D_MODEL),
            w1=draw((D_MODEL, MLP_HIDDEN), D_MODEL), b1=zeros(MLP_HIDDEN),
            w2=draw((MLP_HIDDEN, D_MODEL), MLP_HIDDEN), b2=zeros(D_MODEL),
        ))
    dec = DecoderParams(
        embed=embed,
        blocks=tuple(dec_blocks),
        lnf_g=ones(D_MODEL), lnf_b=zeros(D_MODEL),
        out_w=draw((D_MODEL, VOCAB_SIZE), D_MODEL), out_b=zeros(VOCAB_SIZE),
    )
    return enc, dec


# ---------------------------------------------------------------------------
# Primitive forward/backward pairs (batch axes allowed everywhere)
# ---------------------------------------------------------------------------

def sinusoid_table(n_pos: int, d: int) -> np.ndarray:
    """PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(same)."""
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((n_pos, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


@lru_cache(maxsize=1)
def _enc_positions() -> np.ndarray:
    return sinusoid_table(ENC_FRAMES, D_MODEL)


def _gelu_fwd(x: np.ndarray):
    """Exact GELU (Gaussian CDF form); caches the CDF term for backward."""
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * phi, (x, phi)


def _gelu_bwd(cache, dy: np.ndarray) -> np.ndarray:
    x, phi = cache
    return dy * (phi + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layer_norm_bwd(cache, dy: np.ndarray) -> np.ndarray:
    xhat, inv, g = cache
    dxh = dy * g
    return inv * (
        dxh
        - dxh.mean(axis=-1, keepdims=True)
        - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
    )


def _split_heads(x: np.ndarray) -> np.ndarray:
    # (..., S, D) -> (..., H, S, hd)
    split = x.reshape(x.shape[:-1] + (N_HEADS, HEAD_DIM))
    return split.swapaxes(-3, -2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    # (..., H, S, hd) -> (..., S, D)
    merged = x.swapaxes(-3, -2)
    return merged.reshape(merged.shape[:-2] + (D_MODEL,))


def _attn_forward(p: AttnParams, q_in: np.ndarray, kv_in: np.ndarray, mask=None):
    q = q_in @ p.wq + p.bq
    k = kv_in @ p.wk + p.bk
    v = kv_in @ p.wv + p.bv
    qh, kh, vh = _split_heads(q), _split_heads(k), _split_heads(v)
    scores = (qh @ kh.swapaxes(-1, -2)) * _ATTN_SCALE
    if mask is not None:
        scores = scores + mask
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = weights @ vh
    out = _merge_heads(ctx) @ p.wo + p.bo
    return out, (weights, qh, kh, vh)


def _attn_backward(p: AttnParams, cache, d_out: np.ndarray):
    weights, qh, kh, vh = cache
    d_ctx = _split_heads(d_out @ p.wo.T)
    d_weights = d_ctx @ vh.swapaxes(-1, -2)
    d_vh = weights.swapaxes(-1, -2) @ d_ctx
    d_scores = weights * (d_weights - (d_weights * weights).sum(axis=-1, keepdims=True))
    d_scores *= _ATTN_SCALE
    d_qh = d_scores @ kh
    d_kh = d_scores.swapaxes(-1, -2) @ qh
    d_q_in = _merge_heads(d_qh) @ p.wq.T
    d_kv_in = _merge_heads(d_kh) @ p.wk.T + _merge_heads(d_vh) @ p.wv.T
    return d_q_in, d_kv_in


def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """1-D conv over the frame axis, channels last, zero padding 1."""
    t_in = x.shape[-2]
    kernel = w.shape[2]
    pad = np.zeros(x.shape[:-2] + (1, x.shape[-1]))
    x_pad = np.concatenate([pad, x, pad], axis=-2)
    t_out = (t_in + 2 - kernel) // stride + 1
    y = np.zeros(x.shape[:-2] + (t_out, w.shape[0])) + b.astype(np.float64)
    for j in range(kernel):
        y += x_pad[..., j:j + stride * t_out:stride, :] @ w[:, :, j].T
    return y


def _conv1d_bwd(dy: np.ndarray, w: np.ndarray, stride: int, t_in: int) -> np.ndarray:
    kernel = w.shape[2]
    t_out = dy.shape[-2]
    dx_pad = np.zeros(dy.shape[:-2] + (t_in + 2, w.shape[1]))
    for j in range(kernel):
        dx_pad[..., j:j + stride * t_out:stride, :] += dy @ w[:, :, j].astype(np.float64)
    return dx_pad[..., 1:-1, :]


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def _enc_block_forward(blk: EncBlockParams, x: np.ndarray):
    u1, ln1c = _layer_norm(x, blk.ln1_g, blk.ln1_b)
    attn_out, ac = _attn_forward(blk.attn, u1, u1)
    x = x + attn_out
    u2, ln2c = _layer_norm(x, blk.ln2_g, blk.ln2_b)
    act, gc = _gelu_fwd(u2 @ blk.w1 + blk.b1)
    x = x + act @ blk.w2 + blk.b2
    return x, (ln1c, ac, ln2c, gc)


def _enc_block_backward(blk: EncBlockParams, cache, dx: np.ndarray) -> np.ndarray:
    ln1c, ac, ln2c, gc = cache
    d_pre = _gelu_bwd(gc, dx @ blk.w2.T)
    dx = dx + _layer_norm_bwd(ln2c, d_pre @ blk.w1.T)
    d_q, d_kv = _attn_backward(blk.attn, ac, dx)
    return dx + _layer_norm_bwd(ln1c, d_q + d_kv)


def encode_forward(params: EncoderParams, z):
    """Batched forward over (..., 98, 64); returns (latents, cache)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-2:] != (IN_FRAMES, D_MODEL):
        raise ValueError(f"spectrogram must have shape ({IN_FRAMES}, {D_MODEL}), got {z.shape}")
    g1, gc1 = _gelu_fwd(_conv1d(z, params.conv1_w, params.conv1_b, stride=1))
    g2, gc2 = _gelu_fwd(_conv1d(g1, params.conv2_w, params.conv2_b, stride=2))
    x = g2 + _enc_positions()
    block_caches = []
    for blk in params.blocks:
        x, c = _enc_block_forward(blk, x)
        block_caches.append(c)
    h, lnfc = _layer_norm(x, params.lnf_g, params.lnf_b)
    return h, (gc1, gc2, block_caches, lnfc)


def encode_backward(params: EncoderParams, cache, upstream) -> np.ndarray:
    """Cotangent of <upstream, encode(z)> back to the spectrogram."""
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape[-2:] != (ENC_FRAMES, D_MODEL):
        raise ValueError(f"upstream must have shape ({ENC_FRAMES}, {D_MODEL}), got {up.shape}")
    gc1, gc2, block_caches, lnfc = cache
    dx = _layer_norm_bwd(lnfc, up)
    for blk, c in zip(reversed(params.blocks), reversed(block_caches)):
        dx = _enc_block_backward(blk, c, dx)
    dc2 = _gelu_bwd(gc2, dx)
    dg1 = _conv1d_bwd(dc2, params.conv2_w, stride=2, t_in=IN_FRAMES)
    dc1 = _gelu_bwd(gc1, dg1)
    return _conv1d_bwd(dc1, params.conv1_w, stride=1, t_in=IN_FRAMES)


def encode(params: EncoderParams, z) -> np.ndarray:
    """Latent sequence of shape (49, 64) for a (98, 64) spectrogram."""
    z = np.asarray(z)
    if z.ndim != 2:
        raise ValueError("encode takes a single (98, 64) spectrogram")
    return encode_forward(params, z)[0]


def encode_vjp(params: EncoderParams, z, upstream) -> np.ndarray:
    """Gradient of <upstream, encode(z)> with respect to z."""
    z = np.asarray(z)
    if z.ndim != 2:
        raise ValueError("encode_vjp takes a single (98, 64) spectrogram")
    _, cache = encode_forward(params, z)
    return encode_backward(params, cache, upstream)


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------

def _causal_mask(s: int) -> np.ndarray:
    mask = np.zeros((s, s))
    mask[np.triu_indices(s, k=1)] = -np.inf
    return mask


def decode_forward(dec: DecoderParams, h: np.ndarray, inputs: np.ndarray):
    """Teacher-forced decoder forward; returns (logits, caches).

    h may carry a leading batch axis; the token inputs are shared.
    """
    x = dec.embed[inputs].astype(np.float64)
    if h.ndim == 3:
        x = np.broadcast_to(x, (h.shape[0],) + x.shape)
    mask = _causal_mask(len(inputs))
    caches = []
    for blk in dec.blocks:
        u1, l1 = _layer_norm(x, blk.ln1_g, blk.ln1_b)
        sa, sac = _attn_forward(blk.self_attn, u1, u1, mask)
        x = x + sa
        u2, l2 = _layer_norm(x, blk.ln2_g, blk.ln2_b)
        ca, cac = _attn_forward(blk.cross_attn, u2, h)
        x = x + ca
        u3, l3 = _layer_norm(x, blk.ln3_g, blk.ln3_b)
        act, gc = _gelu_fwd(u3 @ blk.w1 + blk.b1)
        x = x + act @ blk.w2 + blk.b2
        caches.append((l1, sac, l2, cac, l3, gc))
    y, lnfc = _layer_norm(x, dec.lnf_g, dec.lnf_b)
    logits = y @ dec.out_w + dec.out_b
    return logits, (caches, lnfc)


def _check_tokens(target_tokens) -> np.ndarray:
    tokens = np.asarray(target_tokens)
    if tokens.ndim != 1 or len(tokens) < 2 or len(tokens) > MAX_TOKENS:
        raise ValueError("target_tokens must be a 1-D sequence of 2..64 ids")
    if tokens.min() < 0 or tokens.max() >= VOCAB_SIZE:
        raise ValueError("token id out of vocabulary range")
    if tokens[0] != BOS_ID:
        raise ValueError("target_tokens must start with BOS")
    return tokens


def decode_ce_batch(dec: DecoderParams, h: np.ndarray, target_tokens):
    """Per-sample masked cross-entropy and gradients w.r.t. (B, 49, 64) h."""
    tokens = _check_tokens(target_tokens)
    inputs = tokens[:-1]
    targets = tokens[1:]
    valid = targets != PAD_ID
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no non-PAD target positions")

    logits, (caches, lnfc) = decode_forward(dec, h, inputs)
    zmax = logits.max(axis=-1, keepdims=True)
    shifted = logits - zmax
    sumexp = np.exp(shifted).sum(axis=-1)
    picked = np.take_along_axis(logits, np.broadcast_to(targets, logits.shape[:-1])[..., None], -1)
    ce = zmax[..., 0] + np.log(sumexp) - picked[..., 0]
    losses = (ce * valid).sum(axis=-1) / n_valid

    d_logits = np.exp(shifted) / sumexp[..., None]
    one_hot_rows = np.broadcast_to(targets, logits.shape[:-1])[..., None]
    np.put_along_axis(d_logits, one_hot_rows, np.take_along_axis(d_logits, one_hot_rows, -1) - 1.0, -1)
    d_logits *= valid[:, None] / n_valid

    dx = _layer_norm_bwd(lnfc, d_logits @ dec.out_w.T)
    dh = np.zeros_like(h)
    for blk, c in zip(reversed(dec.blocks), reversed(caches)):
        l1, sac, l2, cac, l3, gc = c
        d_pre = _gelu_bwd(gc, dx @ blk.w2.T)
        dx = dx + _layer_norm_bwd(l3, d_pre @ blk.w1.T)
        d_q, d_kv = _attn_backward(blk.cross_attn, cac, dx)
        dh += d_kv
        dx = dx + _layer_norm_bwd(l2, d_q)
        d_q2, d_kv2 = _attn_backward(blk.self_attn, sac, dx)
        dx = dx + _layer_norm_bwd(l1, d_q2 + d_kv2)
    return losses, dh


def decode_ce(dec: DecoderParams, h, target_tokens):
    """Teacher-forced masked cross-entropy and its gradient w.r.t. h.

    target_tokens is a BOS-prefixed, EOS-terminated, PAD-extended id
    sequence of length <= 64. The loss is the mean cross-entropy over
    positions whose target is not PAD.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (ENC_FRAMES, D_MODEL):
        raise ValueError(f"latents must have shape ({ENC_FRAMES}, {D_MODEL}), got {h.shape}")
    losses, dh = decode_ce_batch(dec, h, target_tokens)
    return float(losses), dh
