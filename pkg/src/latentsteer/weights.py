"""Binary tensor container and (de)serialization of model parameters.

Layout, all little-endian: magic "UTLS", u32 version (1), u32 tensor
count, then per tensor a u16 name length, the UTF-8 name, a u8 rank,
rank u32 dims, and the row-major float32 payload. The same container
stores a learned perturbation as the single tensor "delta" with the
metadata tensors "epsilon" and "seed".
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .model import (
    AttnParams,
    DecBlockParams,
    DecoderParams,
    EncBlockParams,
    EncoderParams,
)

MAGIC = b"UTLS"
VERSION = 1


class WeightsError(ValueError):
    """Malformed, truncated, or mismatched weights container."""


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors in dict order."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype=np.float32)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read a container back into an ordered name -> float32 array dict."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise WeightsError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise WeightsError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise WeightsError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    offset = 12
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            payload = blob[offset:offset + 4 * size]
            if len(payload) != 4 * size:
                raise WeightsError(f"{path}: truncated payload for tensor {name!r}")
            offset += 4 * size
        except struct.error as exc:
            raise WeightsError(f"{path}: truncated container") from exc
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if offset != len(blob):
        raise WeightsError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------

def _flatten_attn(prefix: str, a: AttnParams, out: dict) -> None:
    out[f"{prefix}.wq"] = a.wq
    out[f"{prefix}.bq"] = a.bq
    out[f"{prefix}.wk"] = a.wk
    out[f"{prefix}.bk"] = a.bk
    out[f"{prefix}.wv"] = a.wv
    out[f"{prefix}.bv"] = a.bv
    out[f"{prefix}.wo"] = a.wo
    out[f"{prefix}.bo"] = a.bo


def encoder_tensors(enc: EncoderParams) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    out["enc.conv1.w"] = enc.conv1_w
    out["enc.conv1.b"] = enc.conv1_b
    out["enc.conv2.w"] = enc.conv2_w
    out["enc.conv2.b"] = enc.conv2_b
    for i, blk in enumerate(enc.blocks):
        p = f"enc.b{i}"
        out[f"{p}.ln1.g"] = blk.ln1_g
        out[f"{p}.ln1.b"] = blk.ln1_b
        _flatten_attn(f"{p}.attn", blk.attn, out)
        out[f"{p}.ln2.g"] = blk.ln2_g
        out[f"{p}.ln2.b"] = blk.ln2_b
        out[f"{p}.mlp.w1"] = blk.w1
        out[f"{p}.mlp.b1"] = blk.b1
        out[f"{p}.mlp.w2"] = blk.w2
        out[f"{p}.mlp.b2"] = blk.b2
    out["enc.lnf.g"] = enc.lnf_g
    out["enc.lnf.b"] = enc.lnf_b
    return out


def decoder_tensors(dec: DecoderParams) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    out["dec.embed"] = dec.embed
    for i, blk in enumerate(dec.blocks):
        p = f"dec.b{i}"
        out[f"{p}.ln1.g"] = blk.ln1_g
        out[f"{p}.ln1.b"] = blk.ln1_b
        _flatten_attn(f"{p}.self", blk.self_attn, out)
        out[f"{p}.ln2.g"] = blk.ln2_g
        out[f"{p}.ln2.b"] = blk.ln2_b
        _flatten_attn(f"{p}.cross", blk.cross_attn, out)
        out[f"{p}.ln3.g"] = blk.ln3_g
        out[f"{p}.ln3.b"] = blk.ln3_b
        out[f"{p}.mlp.w1"] = blk.w1
        out[f"{p}.mlp.b1"] = blk.b1
        out[f"{p}.mlp.w2"] = blk.w2
        out[f"{p}.mlp.b2"] = blk.b2
    out["dec.lnf.g"] = dec.lnf_g
    out["dec.lnf.b"] = dec.lnf_b
    out["dec.out.w"] = dec.out_w
    out["dec.out.b"] = dec.out_b
    return out


def named_tensors(enc: EncoderParams, dec: DecoderParams) -> dict[str, np.ndarray]:
    """Canonical name -> tensor mapping, in serialization order."""
    out = encoder_tensors(enc)
    out.update(decoder_tensors(dec))
    return out


class _TensorReader:
    def __init__(self, tensors: dict[str, np.ndarray], path) -> None:
        self.tensors = dict(tensors)
        self.path = path

    def take(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        if name not in self.tensors:
            raise WeightsError(f"{self.path}: missing tensor {name!r}")
        arr = self.tensors.pop(name)
        if arr.shape != shape:
            raise WeightsError(f"{self.path}: tensor {name!r} has shape {arr.shape}, expected {shape}")
        return arr

    def finish(self) -> None:
        if self.tensors:
            name = next(iter(self.tensors))
            raise WeightsError(f"{self.path}: unexpected tensor {name!r}")


def save_weights(params: tuple[EncoderParams, DecoderParams], path) -> None:
    enc, dec = params
    write_tensors(path, named_tensors(enc, dec))


def load_weights(path) -> tuple[EncoderParams, DecoderParams]:
    """Inverse of save_weights; bit-exact round trip.

    Unknown, missing, or mis-shaped tensors raise WeightsError naming
    the offending tensor.
    """
    from .model import D_MODEL, DEC_BLOCKS, ENC_BLOCKS, MLP_HIDDEN
    from .text import VOCAB_SIZE

    r = _TensorReader(read_tensors(path), path)
    d, m, v = D_MODEL, MLP_HIDDEN, VOCAB_SIZE

    def attn(prefix: str) -> AttnParams:
        return AttnParams(
            wq=r.take(f"{prefix}.wq", (d, d)), bq=r.take(f"{prefix}.bq", (d,)),
            wk=r.take(f"{prefix}.wk", (d, d)), bk=r.take(f"{prefix}.bk", (d,)),
            wv=r.take(f"{prefix}.wv", (d, d)), bv=r.take(f"{prefix}.bv", (d,)),
            wo=r.take(f"{prefix}.wo", (d, d)), bo=r.take(f"{prefix}.bo", (d,)),
        )

    enc_blocks = []
    conv1_w = r.take("enc.conv1.w", (d, d, 3))
    conv1_b = r.take("enc.conv1.b", (d,))
    conv2_w = r.take("enc.conv2.w", (d, d, 3))
    conv2_b = r.take("enc.conv2.b", (d,))
    for i in range(ENC_BLOCKS):
        p = f"enc.b{i}"
        enc_blocks.append(EncBlockParams(
            ln1_g=r.take(f"{p}.ln1.g", (d,)), ln1_b=r.take(f"{p}.ln1.b", (d,)),
            attn=attn(f"{p}.attn"),
            ln2_g=r.take(f"{p}.ln2.g", (d,)), ln2_b=r.take(f"{p}.ln2.b", (d,)),
            w1=r.take(f"{p}.mlp.w1", (d, m)), b1=r.take(f"{p}.mlp.b1", (m,)),
            w2=r.take(f"{p}.mlp.w2", (m, d)), b2=r.take(f"{p}.mlp.b2", (d,)),
        ))
    enc = EncoderParams(
        conv1_w=conv1_w, conv1_b=conv1_b, conv2_w=conv2_w, conv2_b=conv2_b,
        blocks=tuple(enc_blocks),
        lnf_g=r.take("enc.lnf.g", (d,)), lnf_b=r.take("enc.lnf.b", (d,)),
    )
    embed = r.take("dec.embed", (v, d))
    dec_blocks = []
    for i in range(DEC_BLOCKS):
        p = f"dec.b{i}"
        dec_blocks.append(DecBlockParams(
            ln1_g=r.take(f"{p}.ln1.g", (d,)), ln1_b=r.take(f"{p}.ln1.b", (d,)),
            self_attn=attn(f"{p}.self"),
            ln2_g=r.take(f"{p}.ln2.g", (d,)), ln2_b=r.take(f"{p}.ln2.b", (d,)),
            cross_attn=attn(f"{p}.cross"),
            ln3_g=r.take(f"{p}.ln3.g", (d,)), ln3_b=r.take(f"{p}.ln3.b", (d,)),
            w1=r.take(f"{p}.mlp.w1", (d, m)), b1=r.take(f"{p}.mlp.b1", (m,)),
            w2=r.take(f"{p}.mlp.w2", (m, d)), b2=r.take(f"{p}.mlp.b2", (d,)),
        ))
    dec_params = DecoderParams(
        embed=embed, blocks=tuple(dec_blocks),
        lnf_g=r.take("dec.lnf.g", (d,)), lnf_b=r.take("dec.lnf.b", (d,)),
        out_w=r.take("dec.out.w", (d, v)), out_b=r.take("dec.out.b", (v,)),
    )
    r.finish()
    return enc, dec_params


def params_checksum(enc: EncoderParams, dec: DecoderParams | None = None) -> str:
    """SHA-256 over the canonical float32 payloads; detects any mutation."""
    digest = hashlib.sha256()
    tensors = encoder_tensors(enc)
    if dec is not None:
        tensors.update(decoder_tensors(dec))
    for name, arr in tensors.items():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(arr, dtype=np.float32).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Perturbation container
# ---------------------------------------------------------------------------

def save_delta(path, delta: np.ndarray, epsilon: float, seed: int) -> None:
    write_tensors(path, {
        "delta": np.asarray(delta, dtype=np.float32),
        "epsilon": np.asarray([epsilon], dtype=np.float32),
        "seed": np.asarray([seed], dtype=np.float32),
    })


def load_delta(path) -> tuple[np.ndarray, float, int]:
    tensors = read_tensors(path)
    expected = {"delta", "epsilon", "seed"}
    extra = set(tensors) - expected
    if extra:
        raise WeightsError(f"{path}: unexpected tensor {sorted(extra)[0]!r}")
    missing = expected - set(tensors)
    if missing:
        raise WeightsError(f"{path}: missing tensor {sorted(missing)[0]!r}")
    return tensors["delta"], float(tensors["epsilon"][0]), int(tensors["seed"][0])
