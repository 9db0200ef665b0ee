"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CNODE\\0"            magic, 6 bytes
    u16                   format version
    u64                   model-description hash
    u32                   segment count
    per segment: u16 name length, utf-8 name, u64 offset, u64 length
    u64                   value count
    f64 * count           parameter values
"""

import hashlib
import os
import struct

import numpy as np

from cnodes.diffcore.params import ParamVector
from cnodes.errors import ContractError

MAGIC = b"CNODE\0"
VERSION = 1


def description_hash(text):
    """Stable 64-bit hash of a model description string."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def dumps(params, spec_hash):
    out = [MAGIC, struct.pack("<HQI", VERSION, spec_hash, len(params.segments))]
    for name, (off, n) in params.segments.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<QQ", off, n))
    out.append(struct.pack("<Q", len(params)))
    out.append(np.ascontiguousarray(params.values, dtype="<f8").tobytes())
    return b"".join(out)


def loads(blob):
    if blob[:6] != MAGIC:
        raise ContractError("not a checkpoint: bad magic bytes")
    pos = 6
    version, spec_hash, n_seg = struct.unpack_from("<HQI", blob, pos)
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    pos += struct.calcsize("<HQI")
    segments = {}
    for _ in range(n_seg):
        (n_name,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + n_name].decode("utf-8")
        pos += n_name
        segments[name] = struct.unpack_from("<QQ", blob, pos)
        pos += 16
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
    return ParamVector(values, segments), spec_hash


def save_checkpoint(path, params, spec_hash):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(params, spec_hash))
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
