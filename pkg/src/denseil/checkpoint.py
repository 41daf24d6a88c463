"""Binary checkpoint serialization.

Layout: magic ``DIL1``, then one record per entry, each record being
[u32 name-length][UTF-8 name][u32 rank][u64 extents, one per axis]
[raw 32-bit little-endian floats]. Integers little-endian. Record order is
whatever the caller's dict iteration yields, so writers with a fixed
parameter order round-trip byte-identically.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DIL1"


class CheckpointError(IOError):
    """Corrupt, truncated, or otherwise unreadable checkpoint file."""


def save_checkpoint(path, records) -> None:
    """Write name -> array records; values are cast to float32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in records.items():
            arr = np.asarray(value, dtype="<f4")  # tobytes() handles layout; keeps 0-d rank
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read records back as an ordered dict of float32 arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("%s: bad magic %r" % (path, blob[:4]))
    records = {}
    off = 4

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError("%s: truncated at byte %d" % (path, off))
        piece = blob[off:off + n]
        off += n
        return piece

    while off < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
        count = 1
        for extent in shape:
            count *= extent
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        if name in records:
            raise CheckpointError("%s: duplicate record %r" % (path, name))
        records[name] = data.copy()
    return records
