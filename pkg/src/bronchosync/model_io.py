"""Airway model persistence.

Binary layout (little-endian throughout):
    magic   "AWMD" (4 bytes)
    version u16 (= 1)
    dims    3 x u32
    spacing 3 x f64 (mm)
    mask    ceil(prod(dims) / 8) bytes, packbits of occupancy in C order
    n_sites u32
    sites   n_sites records: id u32, position 3 x f64, quat 4 x f64 (xyzw),
            up 3 x f64, branch u32, arc_length f64
    n_edges u32
    edges   n_edges records: parent u32, child u32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .centerline import CenterlineGraph, ViewSite
from .errors import BronchoSyncError
from .phantom import AirwayMask

MAGIC = b"AWMD"
VERSION = 1
_SITE_FMT = "<I3d4d3dId"
_SITE_SIZE = struct.calcsize(_SITE_FMT)


@dataclass
class AirwayModel:
    """Mask plus centerline graph: the reference space for synchronization."""

    mask: AirwayMask
    graph: CenterlineGraph


def save_model(model: AirwayModel, path: str | Path) -> None:
    mask, graph = model.mask, model.graph
    parts = [MAGIC, struct.pack("<H", VERSION)]
    parts.append(struct.pack("<3I", *mask.dims))
    parts.append(struct.pack("<3d", *mask.spacing))
    parts.append(np.packbits(mask.occupancy.ravel()).tobytes())
    parts.append(struct.pack("<I", len(graph.sites)))
    for s in graph.sites:
        parts.append(struct.pack(
            _SITE_FMT, s.id, *s.position, *s.quat, *s.up, s.branch_id, s.arc_length
        ))
    edges = graph.edges
    parts.append(struct.pack("<I", len(edges)))
    for p, c in edges:
        parts.append(struct.pack("<2I", p, c))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> AirwayModel:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise BronchoSyncError(f"{path}: not an airway model file (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise BronchoSyncError(f"{path}: unsupported model version {version}")
    off = 6
    dims = struct.unpack_from("<3I", buf, off); off += 12
    spacing = struct.unpack_from("<3d", buf, off); off += 24
    nvox = int(np.prod(dims))
    nbytes = (nvox + 7) // 8
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=off))
    occ = bits[:nvox].astype(bool).reshape(dims)
    off += nbytes
    (n_sites,) = struct.unpack_from("<I", buf, off); off += 4
    sites = []
    for _ in range(n_sites):
        rec = struct.unpack_from(_SITE_FMT, buf, off); off += _SITE_SIZE
        sites.append(ViewSite(
            id=rec[0],
            position=np.array(rec[1:4]),
            quat=np.array(rec[4:8]),
            up=np.array(rec[8:11]),
            branch_id=rec[11],
            arc_length=rec[12],
        ))
    (n_edges,) = struct.unpack_from("<I", buf, off); off += 4
    parent: dict[int, int | None] = {s.id: None for s in sites}
    for _ in range(n_edges):
        p, c = struct.unpack_from("<2I", buf, off); off += 8
        parent[c] = p
    graph = CenterlineGraph(sites=sites, parent=parent, root_id=0)
    mask = AirwayMask(dims=tuple(dims), spacing=tuple(spacing), occupancy=occ)
    return AirwayModel(mask=mask, graph=graph)
