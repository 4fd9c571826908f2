"""Lossless GOP-12, I/P-only frame container with bounded bidirectional access.

Every 12th frame is stored raw (I); the rest are byte-wise differences mod
256 from the reconstructed previous frame, run-length encoded (P). Decoding
any frame touches exactly one group, which is what makes backward play as
cheap as forward play.

File layout (little-endian):
    magic "BFRS" (4B), version u16, width u16, height u16, channels u8,
    gop_size u8 (=12), frame_count u32,
    group offset table: u64 x ceil(frame_count / 12), byte offsets from
    the start of the file to each group,
    groups: per frame [frame_type u8 (0=I, 1=P), payload_len u32, payload].
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FrameStoreError

MAGIC = b"BFRS"
VERSION = 1
GOP_SIZE = 12
_RLE_DTYPE = np.dtype([("count", "<u2"), ("value", "u1")])


def rle_encode(data: np.ndarray) -> bytes:
    """Run-length encode a flat uint8 array as (count u16, value u8) tokens."""
    a = np.ascontiguousarray(data, dtype=np.uint8).ravel()
    if a.size == 0:
        return b""
    change = np.nonzero(np.diff(a))[0] + 1
    starts = np.concatenate([[0], change])
    lens = np.diff(np.concatenate([starts, [a.size]]))
    vals = a[starts]
    # split runs longer than u16 max
    n_chunks = (lens + 65534) // 65535
    if int(n_chunks.max()) == 1:
        out_vals = vals
        out_lens = lens
    else:
        out_vals = np.repeat(vals, n_chunks)
        out_lens = np.full(out_vals.size, 65535, dtype=np.int64)
        ends = np.cumsum(n_chunks) - 1
        out_lens[ends] = lens - 65535 * (n_chunks - 1)
    tokens = np.empty(out_vals.size, dtype=_RLE_DTYPE)
    tokens["count"] = out_lens
    tokens["value"] = out_vals
    return tokens.tobytes()


def rle_decode(payload: bytes, size: int) -> np.ndarray:
    tokens = np.frombuffer(payload, dtype=_RLE_DTYPE)
    out = np.repeat(tokens["value"], tokens["count"].astype(np.int64))
    if out.size != size:
        raise FrameStoreError(f"RLE payload decodes to {out.size} bytes, expected {size}")
    return out


@dataclass
class FrameStore:
    """Immutable random-access frame container; safe for concurrent reads."""

    width: int
    height: int
    channels: int
    frame_count: int
    frame_types: np.ndarray          # u8 per frame, 0=I 1=P
    payloads: list[bytes]
    gop_size: int = GOP_SIZE

    group_decodes: int = field(default=0, compare=False)

    @property
    def frame_size(self) -> int:
        return self.width * self.height * self.channels

    @property
    def group_count(self) -> int:
        return (self.frame_count + self.gop_size - 1) // self.gop_size

    def _shape(self) -> tuple:
        if self.channels == 1:
            return (self.height, self.width)
        return (self.height, self.width, self.channels)

    def decode_group(self, gop_index: int) -> list[np.ndarray]:
        """Reconstruct all frames of one group from its I frame."""
        if not (0 <= gop_index < self.group_count):
            raise FrameStoreError(f"group {gop_index} out of range")
        self.group_decodes += 1
        base = gop_index * self.gop_size
        count = min(self.gop_size, self.frame_count - base)
        frames: list[np.ndarray] = []
        cur = np.frombuffer(self.payloads[base], dtype=np.uint8).copy()
        frames.append(cur)
        for j in range(1, count):
            delta = rle_decode(self.payloads[base + j], self.frame_size)
            cur = (cur + delta).astype(np.uint8)  # wraps mod 256
            frames.append(cur)
        return [f.reshape(self._shape()) for f in frames]

    def decode_frame(self, n: int) -> np.ndarray:
        """Bit-exact random access; decodes at most one group (<= 12 frames)."""
        if not (0 <= n < self.frame_count):
            raise FrameStoreError(f"frame {n} out of range [0, {self.frame_count})")
        g, j = divmod(n, self.gop_size)
        return self.decode_group(g)[j]

    def iter_frames(self, start: int = 0, stop: int | None = None, step: int = 1):
        """Group-cached iteration, forward (step=1) or backward (step=-1)."""
        stop = self.frame_count if stop is None else stop
        cache_g = -1
        cache: list[np.ndarray] = []
        for n in range(start, stop, step):
            g, j = divmod(n, self.gop_size)
            if g != cache_g:
                cache = self.decode_group(g)
                cache_g = g
            yield n, cache[j]

    def save(self, path: str | Path) -> None:
        header = MAGIC + struct.pack(
            "<HHHBBI", VERSION, self.width, self.height,
            self.channels, self.gop_size, self.frame_count,
        )
        table_size = 8 * self.group_count
        body_parts: list[bytes] = []
        offsets = []
        pos = len(header) + table_size
        for n in range(self.frame_count):
            if n % self.gop_size == 0:
                offsets.append(pos)
            rec = struct.pack("<BI", int(self.frame_types[n]), len(self.payloads[n]))
            body_parts.append(rec)
            body_parts.append(self.payloads[n])
            pos += len(rec) + len(self.payloads[n])
        table = struct.pack(f"<{self.group_count}Q", *offsets)
        Path(path).write_bytes(header + table + b"".join(body_parts))

    @classmethod
    def load(cls, path: str | Path) -> "FrameStore":
        buf = Path(path).read_bytes()
        if buf[:4] != MAGIC:
            raise FrameStoreError(f"{path}: bad magic")
        version, width, height, channels, gop, count = struct.unpack_from("<HHHBBI", buf, 4)
        if version != VERSION:
            raise FrameStoreError(f"{path}: unsupported version {version}")
        ngroups = (count + gop - 1) // gop
        off = 16
        offsets = struct.unpack_from(f"<{ngroups}Q", buf, off)
        off += 8 * ngroups
        if list(offsets) != sorted(set(offsets)):
            raise FrameStoreError(f"{path}: group offset table not strictly increasing")
        types = np.empty(count, dtype=np.uint8)
        payloads: list[bytes] = []
        for n in range(count):
            ftype, plen = struct.unpack_from("<BI", buf, off)
            off += 5
            payloads.append(buf[off:off + plen])
            off += plen
            types[n] = ftype
        return cls(width=width, height=height, channels=channels,
                   frame_count=count, frame_types=types, payloads=payloads,
                   gop_size=gop)


def encode_store(frames) -> FrameStore:
    """Encode a sequence of uint8 frames (H, W) or (H, W, C), all same shape."""
    frames = list(frames)
    if len(frames) == 0:
        raise FrameStoreError("cannot encode an empty frame sequence")
    first = np.asarray(frames[0])
    if first.ndim == 2:
        h, w = first.shape
        c = 1
    elif first.ndim == 3:
        h, w, c = first.shape
    else:
        raise FrameStoreError("frames must be 2D or 3D uint8 arrays")
    types = np.empty(len(frames), dtype=np.uint8)
    payloads: list[bytes] = []
    prev: np.ndarray | None = None
    for n, f in enumerate(frames):
        f = np.asarray(f)
        if f.shape != first.shape:
            raise FrameStoreError(f"frame {n} shape {f.shape} != frame 0 shape {first.shape}")
        flat = np.ascontiguousarray(f, dtype=np.uint8).ravel()
        if n % GOP_SIZE == 0:
            types[n] = 0
            payloads.append(flat.tobytes())
        else:
            types[n] = 1
            payloads.append(rle_encode((flat - prev).astype(np.uint8)))
        prev = flat
    return FrameStore(width=w, height=h, channels=c, frame_count=len(frames),
                      frame_types=types, payloads=payloads)


class BlockContainer:
    """Bounded prefetch window of decoded frames around a playhead.

    Capacity is 10 blocks (1 block = 1 decoded frame). The resident set is a
    contiguous frame-index window containing the playhead, biased 7 ahead /
    2 behind in the play direction. Single producer (prefetch) and single
    consumer (playback) share it through one lock; frames are inserted only
    after they are fully decoded.
    """

    CAPACITY = 10
    AHEAD = 7
    BEHIND = 2

    def __init__(self, store: FrameStore):
        self.store = store
        self._frames: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        self._group_cache: dict[int, list[np.ndarray]] = {}
        self.max_occupancy = 0
        self.overflows = 0
        self.torn_reads = 0

    @property
    def occupancy(self) -> int:
        return len(self._frames)

    def resident_window(self) -> tuple[int, int] | None:
        with self._lock:
            if not self._frames:
                return None
            ks = sorted(self._frames)
            return ks[0], ks[-1]

    def _decode(self, n: int) -> np.ndarray:
        g = n // self.store.gop_size
        if g not in self._group_cache:
            if len(self._group_cache) >= 2:
                # keep the cache tiny; drop the group farthest from n
                drop = max(self._group_cache, key=lambda k: abs(k - g))
                del self._group_cache[drop]
            self._group_cache[g] = self.store.decode_group(g)
        return self._group_cache[g][n % self.store.gop_size]

    def prefetch(self, playhead: int, direction: int) -> None:
        """Refill toward the target window for `playhead` and direction +/-1."""
        count = self.store.frame_count
        if not (0 <= playhead < count):
            raise FrameStoreError(f"playhead {playhead} out of range")
        if direction >= 0:
            lo, hi = playhead - self.BEHIND, playhead + self.AHEAD
        else:
            lo, hi = playhead - self.AHEAD, playhead + self.BEHIND
        lo = max(0, lo)
        hi = min(count - 1, hi)
        wanted = set(range(lo, hi + 1))
        with self._lock:
            for k in [k for k in self._frames if k not in wanted]:
                del self._frames[k]
        for n in sorted(wanted, key=lambda x: abs(x - playhead)):
            with self._lock:
                if n in self._frames:
                    continue
            frame = self._decode(n)  # fully decoded before publication
            with self._lock:
                if len(self._frames) >= self.CAPACITY:
                    self.overflows += 1
                    continue
                self._frames[n] = frame
                self.max_occupancy = max(self.max_occupancy, len(self._frames))

    def get(self, n: int) -> np.ndarray:
        """Return frame n, prefetched or decoded on demand."""
        with self._lock:
            frame = self._frames.get(n)
        if frame is None:
            frame = self._decode(n)
        if frame.size != self.store.frame_size:
            self.torn_reads += 1
            raise FrameStoreError(f"frame {n}: partial decode observed")
        return frame
