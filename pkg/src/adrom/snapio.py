"""Binary snapshot store, PGM heatmap export, and round-trip CSV helpers.

Snapshot files are little-endian with a 24-byte header
``{magic "ADRM", version u32, n u32, count u32, dt f64}`` followed by
``count`` frames of ``n`` float64 values.  Basis matrices reuse the same
layout with the column count stored in the ``count`` field.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "VERSION",
    "SnapshotWriter",
    "SnapshotReader",
    "write_snapshots",
    "read_snapshots",
    "write_pgm",
    "write_csv",
    "read_csv",
]

MAGIC = b"ADRM"
VERSION = 1
_HEADER = struct.Struct("<4sIII d")  # magic, version, n, count, dt


class SnapshotWriter:
    """Streams frames to disk; the count field is fixed up on close."""

    def __init__(self, path: str | Path, n: int, dt: float):
        self.path = Path(path)
        self.n = int(n)
        self.dt = float(dt)
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, VERSION, self.n, 0, self.dt))

    def append(self, frame: np.ndarray) -> None:
        frame = np.ascontiguousarray(frame, dtype="<f8")
        if frame.size != self.n:
            raise ValueError(f"frame has {frame.size} values, expected {self.n}")
        self._fh.write(frame.tobytes())
        self.count += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(_HEADER.pack(MAGIC, VERSION, self.n, self.count, self.dt))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SnapshotReader:
    """Random access to frames through a read-only memmap."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            magic, version, n, count, dt = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != MAGIC:
            raise ValueError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{self.path}: unsupported version {version}")
        self.n, self.count, self.dt = n, count, dt
        self._mm = np.memmap(self.path, dtype="<f8", mode="r",
                             offset=_HEADER.size, shape=(count, n))

    def frame(self, i: int) -> np.ndarray:
        return np.asarray(self._mm[i], dtype=float)

    def frames(self, start: int = 0, stop: int | None = None, stride: int = 1) -> np.ndarray:
        """Materialize frames ``start:stop:stride`` as a (m, n) array."""
        return np.asarray(self._mm[start:stop:stride], dtype=float)

    def __len__(self) -> int:
        return self.count


def write_snapshots(path: str | Path, frames: np.ndarray, dt: float) -> None:
    frames = np.atleast_2d(frames)
    with SnapshotWriter(path, frames.shape[1], dt) as w:
        for row in frames:
            w.append(row)


def read_snapshots(path: str | Path) -> tuple[np.ndarray, float]:
    r = SnapshotReader(path)
    return r.frames(), r.dt


def write_pgm(path: str | Path, field: np.ndarray, label: str = "") -> None:
    """Export a 2-D field as binary PGM (P5) plus a sidecar with the affine
    normalization ``pixel = round(255 * (value - vmin) / (vmax - vmin))``."""
    path = Path(path)
    field = np.asarray(field, dtype=float)
    vmin, vmax = float(field.min()), float(field.max())
    span = vmax - vmin if vmax > vmin else 1.0
    pix = np.rint(255.0 * (field - vmin) / span).astype(np.uint8)
    ny, nx = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode())
        fh.write(pix.tobytes())
    with open(path.with_suffix(path.suffix + ".txt"), "w") as fh:
        fh.write(f"label={label}\nshape={field.shape[0]}x{field.shape[1]}\n"
                 f"vmin={vmin!r}\nvmax={vmax!r}\n")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest round-trip decimal
    return str(value)


def write_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
