"""Frame stacks on disk: the MLAF binary format and a CSV + manifest layout.

MLAF layout (all little-endian)::

    magic   4 bytes  b"MLAF"
    version u16      1
    flags   u16      bit 0: per-frame validity masks present
    rows    u32
    cols    u32
    q       u32
    S       u32
    S times:
        day     i64
        values  rows*cols*q float64, row-major, band innermost
        mask    ceil(rows*cols/8) bytes, bit i (LSB first) = cell i valid  [if flag]
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidArgumentError

MAGIC = b"MLAF"
VERSION = 1
FLAG_MASKS = 0x1
_HEADER = struct.Struct("<4sHHIIII")


@dataclass(eq=False)
class FrameStack:
    """A time-ordered sequence of raster frames.

    ``values`` has shape (S, rows*cols, q); ``masks`` is None or a boolean
    (S, rows*cols) array with True marking valid pixels.
    """

    rows: int
    cols: int
    q: int
    days: np.ndarray
    values: np.ndarray
    masks: np.ndarray | None = None

    def __post_init__(self):
        self.rows, self.cols, self.q = int(self.rows), int(self.cols), int(self.q)
        if min(self.rows, self.cols, self.q) < 1:
            raise InvalidArgumentError("rows, cols and q must be positive")
        self.days = np.asarray(self.days, dtype=np.int64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.rows * self.cols
        if self.values.shape != (self.days.size, n, self.q):
            raise InvalidArgumentError(
                f"values have shape {self.values.shape}, expected ({self.days.size}, {n}, {self.q})"
            )
        if self.days.size > 1 and np.any(np.diff(self.days) <= 0):
            raise InvalidArgumentError("day labels must be strictly increasing")
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
            if self.masks.shape != (self.days.size, n):
                raise InvalidArgumentError("mask array has the wrong shape")

    def __len__(self):
        return self.days.size

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def mask(self, i: int) -> np.ndarray | None:
        return None if self.masks is None else self.masks[i]

    def subset(self, index) -> "FrameStack":
        idx = np.arange(len(self))[index]
        return FrameStack(
            self.rows,
            self.cols,
            self.q,
            self.days[idx],
            self.values[idx],
            None if self.masks is None else self.masks[idx],
        )


def write_frame_stack(stack: FrameStack, path) -> None:
    flags = FLAG_MASKS if stack.masks is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, stack.rows, stack.cols, stack.q, len(stack)))
        for i in range(len(stack)):
            fh.write(struct.pack("<q", int(stack.days[i])))
            fh.write(np.ascontiguousarray(stack.values[i], dtype="<f8").tobytes())
            if flags & FLAG_MASKS:
                fh.write(np.packbits(stack.masks[i], bitorder="little").tobytes())


def read_frame_stack(path) -> FrameStack:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file too short for the MLAF header", offset=len(data), section="header")
    magic, version, flags, rows, cols, q, S = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, section="header")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, section="header")
    if flags & ~FLAG_MASKS:
        raise FormatError(f"unknown flag bits {flags:#x}", offset=6, section="header")
    if rows == 0 or cols == 0 or q == 0:
        raise FormatError(f"invalid dimensions {rows}x{cols}x{q}", offset=8, section="header")
    n = rows * cols
    has_masks = bool(flags & FLAG_MASKS)
    mask_bytes = (n + 7) // 8 if has_masks else 0
    frame_bytes = 8 + 8 * n * q + mask_bytes

    days = np.empty(S, dtype=np.int64)
    values = np.empty((S, n, q))
    masks = np.empty((S, n), dtype=bool) if has_masks else None
    pos = _HEADER.size
    for i in range(S):
        if pos + frame_bytes > len(data):
            part = "day" if pos + 8 > len(data) else (
                "values" if pos + 8 + 8 * n * q > len(data) else "mask")
            raise FormatError(f"truncated file: frame {i} {part} missing", offset=len(data), section=f"frame {i} {part}")
        days[i] = struct.unpack_from("<q", data, pos)[0]
        values[i] = np.frombuffer(data, dtype="<f8", count=n * q, offset=pos + 8).reshape(n, q)
        if has_masks:
            raw = np.frombuffer(data, dtype=np.uint8, count=mask_bytes, offset=pos + 8 + 8 * n * q)
            masks[i] = np.unpackbits(raw, bitorder="little", count=n).astype(bool)
        pos += frame_bytes
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last frame", offset=pos, section="trailer")
    if S > 1 and np.any(np.diff(days) <= 0):
        raise FormatError("day labels are not strictly increasing", offset=_HEADER.size, section="frames")
    return FrameStack(rows, cols, q, days, values, masks)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv_stack(stack: FrameStack, directory) -> Path:
    """Write one ``row,col,band,value`` CSV per frame plus ``manifest.json``.

    Masked pixels are left out of their frame's CSV.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = []
    r, c = np.divmod(np.arange(stack.n_cells), stack.cols)
    for i in range(len(stack)):
        name = f"frame_{i:05d}.csv"
        valid = np.ones(stack.n_cells, dtype=bool) if stack.masks is None else stack.masks[i]
        lines = ["row,col,band,value"]
        for cell in np.flatnonzero(valid):
            for b in range(stack.q):
                lines.append(f"{r[cell]},{c[cell]},{b},{_fmt(stack.values[i, cell, b])}")
        (directory / name).write_text("\n".join(lines) + "\n")
        frames.append({"day": int(stack.days[i]), "path": name})
    manifest = {"rows": stack.rows, "cols": stack.cols, "q": stack.q, "frames": frames}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_csv_stack(manifest_path) -> FrameStack:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        rows, cols, q = int(manifest["rows"]), int(manifest["cols"]), int(manifest["q"])
        entries = manifest["frames"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid manifest: {exc}", section="manifest") from exc
    n = rows * cols
    S = len(entries)
    values = np.zeros((S, n, q))
    masks = np.zeros((S, n), dtype=bool)
    days = []
    for i, entry in enumerate(entries):
        days.append(int(entry["day"]))
        seen = np.zeros((n, q), dtype=bool)
        fpath = manifest_path.parent / entry["path"]
        with open(fpath) as fh:
            header = fh.readline().strip()
            if header != "row,col,band,value":
                raise FormatError(f"unexpected CSV header {header!r}", section=str(fpath))
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    rs, cs, bs, vs = line.strip().split(",")
                    rr, cc, bb, v = int(rs), int(cs), int(bs), float(vs)
                except ValueError as exc:
                    raise FormatError(f"line {lineno}: {exc}", section=str(fpath)) from exc
                if not (0 <= rr < rows and 0 <= cc < cols and 0 <= bb < q):
                    raise FormatError(f"line {lineno}: index out of range", section=str(fpath))
                values[i, rr * cols + cc, bb] = v
                seen[rr * cols + cc, bb] = True
        partial = seen.any(axis=1) & ~seen.all(axis=1)
        if partial.any():
            raise FormatError(f"pixel {int(np.flatnonzero(partial)[0])} has missing bands", section=str(fpath))
        masks[i] = seen.all(axis=1)
    if S > 1 and np.any(np.diff(days) <= 0):
        raise FormatError("day labels are not strictly increasing", section="manifest")
    return FrameStack(rows, cols, q, days, values, None if masks.all() else masks)


def load_stack(path) -> FrameStack:
    """Read an MLAF file, or a CSV stack when given its ``manifest.json``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_csv_stack(path)
    return read_frame_stack(path)
