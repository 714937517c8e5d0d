"""Command-text normalization, alias matching, and token codec.

The decoder vocabulary is 30 symbols: 'a'-'z' (0-25), space (26), and the
specials BOS (27), EOS (28), PAD (29).
"""

from __future__ import annotations

import re

import numpy as np

VOCAB_SIZE = 30
SPACE_ID = 26
BOS_ID = 27
EOS_ID = 28
PAD_ID = 29
MAX_TOKENS = 64

_NON_ALNUM = re.compile(r"[^a-z0-9 ]+")
_WS_RUN = re.compile(r" +")


def normalize_text(s: str) -> str:
    """Lowercase, keep only [a-z0-9 ], collapse whitespace, trim.

    Any whitespace character acts as a word separator before filtering,
    so tabs and newlines do not glue words together. Idempotent.
    """
    s = s.lower()
    s = re.sub(r"\s+", " ", s)
    s = _NON_ALNUM.sub("", s)
    return _WS_RUN.sub(" ", s).strip()


def match_target(decoded: str, target: str, aliases: set[str] | frozenset[str] = frozenset()) -> bool:
    """True iff the decoded text equals the target or any alias.

    The decoded text and target are normalized here; aliases are expected
    to be normalized already.
    """
    norm = normalize_text(decoded)
    return norm == normalize_text(target) or norm in aliases


def encode_command(command: str) -> np.ndarray:
    """Token ids for a command: BOS + letters/spaces + EOS, PAD to 64.

    The command is normalized first; digits are not in the vocabulary and
    are rejected. Commands longer than 61 characters do not fit.
    """
    norm = normalize_text(command)
    if not norm:
        raise ValueError("empty command after normalization")
    ids = [BOS_ID]
    for ch in norm:
        if ch == " ":
            ids.append(SPACE_ID)
        elif "a" <= ch <= "z":
            ids.append(ord(ch) - ord("a"))
        else:
            raise ValueError(f"character {ch!r} is not in the token vocabulary")
    ids.append(EOS_ID)
    if len(ids) > MAX_TOKENS:
        raise ValueError(f"command too long: {len(ids)} tokens > {MAX_TOKENS}")
    ids.extend([PAD_ID] * (MAX_TOKENS - len(ids)))
    return np.asarray(ids, dtype=np.int64)
