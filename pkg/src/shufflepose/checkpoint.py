"""Bit-exact binary checkpoints.

Layout (little-endian)::

    b"PPCK"  u32 version=1  u32 entry_count
    per entry: u16 name_len, name (UTF-8), u8 rank, rank x u32 extents, float64 payload
    u64 FNV-1a checksum of every preceding byte
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .errors import CheckpointError
from .layers import named_parameters
from .optim import AdamState

MAGIC = b"PPCK"
VERSION = 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def encode_entries(entries: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"entry {name!r}: name or rank too large for the format")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode_entries(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < 20:
        raise CheckpointError("checkpoint truncated: header")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if body[:4] != MAGIC:
        raise CheckpointError(f"field 'magic': got {body[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"field 'version': unsupported value {version}")
    computed = fnv1a64(body)
    if computed != stored:
        raise CheckpointError(f"field 'checksum': stored {stored:#018x}, computed {computed:#018x}")
    pos, entries = 12, {}
    try:
        for i in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(body):
                raise CheckpointError(f"entry {name!r}: payload truncated")
            payload = np.frombuffer(body, dtype="<f8", count=size // 8, offset=pos)
            entries[name] = payload.reshape(shape).astype(np.float64)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed entry {len(entries)}: {exc}") from None
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after {count} entries")
    return entries


def save(path: Union[str, Path], entries: Dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_entries(entries))


def load(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_entries(blob)


# ----------------------------------------------------------------------------
# model / optimizer / rng <-> entries
# ----------------------------------------------------------------------------

def _int_to_words(value: int, words: int) -> list:
    return [(value >> (32 * i)) & 0xFFFFFFFF for i in range(words)]


def _words_to_int(words) -> int:
    return sum(int(w) << (32 * i) for i, w in enumerate(words))


def rng_to_array(rng: np.random.Generator) -> np.ndarray:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"only PCG64 generators can be stored, got {st['bit_generator']}")
    words = (_int_to_words(st["state"]["state"], 4) + _int_to_words(st["state"]["inc"], 4)
             + [st["has_uint32"], st["uinteger"]])
    return np.array(words, dtype=np.float64)


def array_to_rng(arr: np.ndarray) -> np.random.Generator:
    w = [int(v) for v in arr]
    if len(w) != 10:
        raise CheckpointError(f"field 'meta/rng' must hold 10 words, got {len(w)}")
    bg = np.random.PCG64()
    bg.state = {"bit_generator": "PCG64", "state": {"state": _words_to_int(w[:4]), "inc": _words_to_int(w[4:8])},
                "has_uint32": w[8], "uinteger": w[9]}
    return np.random.Generator(bg)


def pack(model, state: AdamState = None, rng: np.random.Generator = None) -> Dict[str, np.ndarray]:
    entries = {f"param/{name}": t.data for name, t in named_parameters(model)}
    if state is not None:
        entries["meta/step"] = np.array(float(state.step))
        for name in state.m:
            entries[f"adam_m/{name}"] = state.m[name]
            entries[f"adam_v/{name}"] = state.v[name]
    if rng is not None:
        entries["meta/rng"] = rng_to_array(rng)
    return entries


def unpack(entries: Dict[str, np.ndarray], model) -> Tuple[AdamState, Union[np.random.Generator, None]]:
    """Copy parameters into ``model`` in place; return the optimizer state and rng."""
    params = dict(named_parameters(model))
    for name, t in params.items():
        key = f"param/{name}"
        if key not in entries:
            raise CheckpointError(f"checkpoint lacks field {key!r}")
        if entries[key].shape != t.data.shape:
            raise CheckpointError(f"field {key!r} has extents {entries[key].shape}, model expects {t.data.shape}")
    extra = [k for k in entries if k.startswith("param/") and k[6:] not in params]
    if extra:
        raise CheckpointError(f"checkpoint field {extra[0]!r} has no matching model parameter")
    for name, t in params.items():
        t.data = entries[f"param/{name}"].copy()
    state = AdamState(step=int(entries.get("meta/step", np.array(0.0))))
    for key, arr in entries.items():
        if key.startswith("adam_m/"):
            state.m[key[7:]] = arr.copy()
        elif key.startswith("adam_v/"):
            state.v[key[7:]] = arr.copy()
    rng = array_to_rng(entries["meta/rng"]) if "meta/rng" in entries else None
    return state, rng
