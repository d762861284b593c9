"""Binary checkpoint format.

Layout (all integers little-endian)::

    0   4 bytes   magic b"BBH1"
    4   uint32    format version (1)
    8   uint32    metadata length L
    12  L bytes   UTF-8 JSON: {"config": <resolved config text>,
                               "family": <posterior family>,
                               "tensors": [{"name": ..., "shape": [...]}, ...]}
    12+L          float64 payload of every tensor, in manifest order
"""

import copy
import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"BBH1"
VERSION = 1
_HEADER = struct.Struct("<4sII")


def encode_checkpoint(state, config_text, family):
    names = list(state)
    arrays = [np.ascontiguousarray(state[n], dtype="<f8") for n in names]
    meta = {
        "config": config_text,
        "family": family,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(a.tobytes() for a in arrays)


def decode_checkpoint(raw):
    """Return (state, config_text, family) from checkpoint bytes."""
    if len(raw) < _HEADER.size:
        raise FormatError("truncated checkpoint header", len(raw))
    magic, version, meta_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    start = _HEADER.size
    if len(raw) < start + meta_len:
        raise FormatError("truncated checkpoint metadata", len(raw))
    try:
        meta = json.loads(raw[start : start + meta_len].decode("utf-8"))
        manifest = meta["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}", start) from None
    offset = start + meta_len
    state = {}
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if len(raw) < offset + nbytes:
            raise FormatError(f"truncated payload for tensor {entry['name']!r}", offset)
        state[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise FormatError("trailing bytes after checkpoint payload", offset)
    return state, meta.get("config", ""), meta.get("family", "")


def save_checkpoint(path, posterior, config_text):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(posterior.state(), config_text, posterior.family))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def checkpoint_roundtrip(posterior, config_text=""):
    """Encode then decode ``posterior`` into a fresh object of the same family."""
    state, text, _ = decode_checkpoint(encode_checkpoint(posterior.state(), config_text, posterior.family))
    clone = copy.deepcopy(posterior)
    clone.load_state(state)
    return clone, text
