"""Binary checkpoint I/O.

Layout (all little-endian)::

    b"V2EW" | version u16 | tensor count u64 | tensor entries...
            | optimizer tensor count u64 | optimizer tensor entries...

    entry := name length u16 | UTF-8 name | rank u8 | dims u32 * rank
             | values float32 * prod(dims)
"""

import struct

import numpy as np

MAGIC = b"V2EW"
VERSION = 1
MAX_RANK = 8


class CheckpointFormatError(ValueError):
    pass


def _pack_entries(entries):
    chunks = [struct.pack("<Q", len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr, dtype="<f4")
        if arr.ndim > MAX_RANK:
            raise ValueError(f"rank {arr.ndim} exceeds {MAX_RANK}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _unpack_entries(rd):
    (count,) = rd.unpack("<Q")
    # every entry needs at least 3 header bytes
    if count * 3 > len(rd.buf) - rd.pos:
        raise CheckpointFormatError(f"implausible tensor count {count}")
    out = {}
    for _ in range(count):
        (name_len,) = rd.unpack("<H")
        try:
            name = rd.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not valid UTF-8") from exc
        (rank,) = rd.unpack("<B")
        if rank > MAX_RANK:
            raise CheckpointFormatError(f"tensor {name!r} has rank {rank}")
        dims = rd.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(rd.take(4 * size), dtype="<f4").reshape(dims).copy()
        if name in out:
            raise CheckpointFormatError(f"duplicate tensor {name!r}")
        out[name] = values
    return out


def dumps_checkpoint(tensors, optimizer_state=None):
    return MAGIC + struct.pack("<H", VERSION) + _pack_entries(tensors) + _pack_entries(optimizer_state or {})


def loads_checkpoint(buf):
    """Parse checkpoint bytes into ``(tensors, optimizer_state)`` dicts."""
    rd = _Reader(bytes(buf))
    if rd.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic; not a checkpoint")
    (version,) = rd.unpack("<H")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    tensors = _unpack_entries(rd)
    opt = _unpack_entries(rd)
    if rd.pos != len(rd.buf):
        raise CheckpointFormatError(f"{len(rd.buf) - rd.pos} trailing bytes")
    return tensors, opt


def save_checkpoint(path, tensors, optimizer_state=None):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(tensors, optimizer_state))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
