"""Binary container shared by checkpoints and table bundles.

    offset  size  field
    0       8     magic
    8       4     format version, uint32 little-endian
    12      8     header length H, uint64 little-endian
    20      H     UTF-8 JSON header (sorted keys, no whitespace)
    20+H    ...   array payload; each array is stored as C-ordered little-endian
                  raw bytes at ``header["arrays"][i]["offset"]`` relative to the
                  payload start, with its ``dtype`` string and ``shape``
"""

import json
import struct

import numpy as np


class ContainerError(ValueError):
    """Raised when a container file cannot be decoded."""


def pack_container(magic, version, header, arrays):
    """Serialize a JSON header plus named arrays (shared by checkpoints and table bundles)."""
    entries = []
    payload = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        if a.dtype.kind not in "biuf":
            raise ContainerError(f"array {name!r} has unsupported dtype {a.dtype}")
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = dict(header, arrays=entries)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<IQ", version, len(hbytes)) + hbytes + b"".join(payload)


def unpack_container(data, magic, version):
    if data[:len(magic)] != magic:
        raise ContainerError(f"bad magic {data[:len(magic)]!r}, expected {magic!r}")
    pos = len(magic)
    if len(data) < pos + 12:
        raise ContainerError("truncated header")
    ver, hlen = struct.unpack_from("<IQ", data, pos)
    if ver != version:
        raise ContainerError(f"unsupported version {ver}")
    pos += 12
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from exc
    base = pos + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise ContainerError(f"truncated payload for array {e['name']}")
            if np.dtype(e["dtype"]).kind not in "biuf":
                raise ContainerError(f"array {e['name']!r} has unsupported dtype {e['dtype']}")
        arrays[e["name"]] = np.frombuffer(data, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"])),
                                          offset=start).reshape(e["shape"]).copy()
    return header, arrays
