"""GPM model files.

Layout (all integers little-endian)::

    b"GPM1"  u32 record_count
    per record:
        u32 header_len, header (UTF-8 JSON: config, meta, param_count)
        u64 param_count, param_count float32 values in layer order

One file may hold several nets (e.g. a classifier and a regressor).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from gpplane.micronet.net import MicroNet, MicroNetConfig

MAGIC = b"GPM1"


class ModelFormatError(ValueError):
    pass


def dumps_model(records: list[tuple[MicroNet, dict]]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(records))]
    for net, meta in records:
        header = json.dumps(
            {"config": json.loads(net.config.to_json()), "meta": meta, "param_count": net.n_params},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        chunks.append(struct.pack("<I", len(header)))
        chunks.append(header)
        chunks.append(struct.pack("<Q", net.n_params))
        for p in net.params:
            chunks.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_model(path, records: list[tuple[MicroNet, dict]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_model(records))
    return path


def loads_model(data: bytes) -> list[tuple[MicroNet, dict]]:
    if data[:4] != MAGIC:
        raise ModelFormatError("not a GPM file (bad magic)")
    pos = 4
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        out = []
        for _ in range(count):
            (hlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            header = json.loads(data[pos : pos + hlen].decode("utf-8"))
            pos += hlen
            (n,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            config = MicroNetConfig.from_json(json.dumps(header["config"]))
            if n != header["param_count"] or n != config.param_count():
                raise ModelFormatError("parameter count mismatch")
            flat = np.frombuffer(data, dtype="<f4", count=n, offset=pos).astype(np.float32)
            pos += 4 * n
            params, k = [], 0
            for _, _, shapes in config.shapes():
                for shp in shapes:
                    size = int(np.prod(shp))
                    params.append(flat[k : k + size].reshape(shp).copy())
                    k += size
            out.append((MicroNet(config, params), header.get("meta", {})))
    except (struct.error, ValueError, KeyError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupt GPM data: {exc}") from None
    if pos != len(data):
        raise ModelFormatError("trailing bytes after last record")
    return out


def load_model(path) -> list[tuple[MicroNet, dict]]:
    return loads_model(Path(path).read_bytes())
