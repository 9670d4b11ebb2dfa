"""Binary export of prior grids (``SMPG``) and raw decoder dumps (``SMDL``).

Both share one header layout, little-endian::

    magic[4] | version u32 | dim0 u32 | dim1 u32 | dim2 u32 | dtype[4] = b"f4le"

followed by row-major float32 payload. Prior grids carry a JSON sidecar
(``<file>.json``) with pose, extent and the ``sd_skipped`` flag.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..data.io import atomic_write_bytes, atomic_write_text
from ..errors import InputError, SchemaVersionError
from ..geo.types import Extent, GeoPose
from .model import PriorGrid

PRIOR_MAGIC = b"SMPG"
DECODED_MAGIC = b"SMDL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII4s")
_DTYPE = b"f4le"


def _pack(magic: bytes, dims: tuple, payload: np.ndarray) -> bytes:
    header = _HEADER.pack(magic, FORMAT_VERSION, *dims, _DTYPE)
    return header + np.ascontiguousarray(payload, dtype="<f4").tobytes()


def _unpack(data: bytes, magic: bytes):
    if len(data) < _HEADER.size:
        raise InputError("file too short for header")
    got, version, d0, d1, d2, dtype = _HEADER.unpack_from(data)
    if got != magic:
        raise InputError(f"bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise SchemaVersionError(f"format version {version} != {FORMAT_VERSION}")
    if dtype != _DTYPE:
        raise InputError(f"unsupported dtype tag {dtype!r}")
    return (d0, d1, d2), np.frombuffer(data, dtype="<f4", offset=_HEADER.size)


def write_prior(prior: PriorGrid, path) -> Path:
    path = Path(path)
    atomic_write_bytes(path, _pack(PRIOR_MAGIC, prior.grid.shape, prior.grid))
    sidecar = {"pose": prior.pose.to_dict(), "extent": prior.extent.to_dict(), "sd_skipped": prior.sd_skipped}
    atomic_write_text(path.with_suffix(path.suffix + ".json"), json.dumps(sidecar, indent=1))
    return path


def read_prior(path) -> PriorGrid:
    path = Path(path)
    (h, w, c), payload = _unpack(path.read_bytes(), PRIOR_MAGIC)
    if payload.size != h * w * c:
        raise InputError(f"{path}: payload size {payload.size} != {h}x{w}x{c}")
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return PriorGrid(
        payload.reshape(h, w, c).copy(),
        GeoPose.from_dict(side["pose"]),
        Extent.from_dict(side["extent"]),
        bool(side.get("sd_skipped", False)),
    )


def write_decoded(logits, points, topo_logits, path) -> Path:
    """Dump one scene's raw outputs: header dims (N_L, N_P, 3), then logits, points, topology."""
    logits = np.asarray(logits, dtype=np.float32)
    points = np.asarray(points, dtype=np.float32)
    topo = np.asarray(topo_logits, dtype=np.float32)
    n, n_p, _ = points.shape
    payload = np.concatenate([logits.ravel(), points.ravel(), topo.ravel()])
    atomic_write_bytes(path, _pack(DECODED_MAGIC, (n, n_p, 3), payload))
    return Path(path)


def read_decoded(path):
    (n, n_p, _), payload = _unpack(Path(path).read_bytes(), DECODED_MAGIC)
    logits = payload[:n]
    points = payload[n : n + n * n_p * 3].reshape(n, n_p, 3)
    topo = payload[n + n * n_p * 3 :].reshape(n, n)
    return logits.copy(), points.copy(), topo.copy()
