"""File formats: single clouds, labelled archives, and tensor containers.

Single clouds travel as `.xyz` text (one `x y z` line per point, `#`
comments allowed) or ASCII `.ply`. Labelled datasets use a little-endian
binary archive (magic ``DFRC``) holding class counts, one optional class
label and optional per-point labels per sample. Checkpoints and feature
dumps use a tensor container (magic ``TENS``) whose bytes depend only on
the stored values, never on timestamps, so identical states produce
identical files. All writers go through a temp file plus atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .cloud import LabeledCloud, SegLabeledCloud, check_cloud
from .errors import DataFormatError

ARCHIVE_MAGIC = b"DFRC"
TENSOR_MAGIC = b"TENS"
FORMAT_VERSION = 1
FLAG_POINT_LABELS = 1


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes then atomically rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- single-cloud text formats ---------------------------------------------


def save_xyz(path, points) -> None:
    pts = check_cloud(points)
    lines = [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in pts]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_xyz(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected 3 coordinates, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: non-numeric coordinate"
                ) from None
    if not rows:
        raise DataFormatError(f"{path}: no points found")
    return check_cloud(np.array(rows, dtype=np.float64))


def save_ply(path, points) -> None:
    pts = check_cloud(points)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    lines = [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in pts]
    atomic_write_text(path, "\n".join(header + lines) + "\n")


def load_ply(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataFormatError(f"{path}: line 1: missing ply magic")
    count = None
    props: list = []
    in_vertex = False
    body_at = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["ascii"]:
                raise DataFormatError(f"{path}: line {lineno}: only ascii ply is supported")
        elif tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                try:
                    count = int(tokens[2])
                except (IndexError, ValueError):
                    raise DataFormatError(
                        f"{path}: line {lineno}: bad vertex count"
                    ) from None
        elif tokens[0] == "property" and in_vertex:
            props.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_at = lineno
            break
    if body_at is None or count is None:
        raise DataFormatError(f"{path}: truncated ply header")
    try:
        cols = [props.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise DataFormatError(f"{path}: vertex element lacks x/y/z properties") from None
    rows = np.empty((count, 3), dtype=np.float64)
    body = lines[body_at:]
    if len(body) < count:
        raise DataFormatError(f"{path}: expected {count} vertices, found {len(body)}")
    for i in range(count):
        tokens = body[i].split()
        lineno = body_at + 1 + i
        if len(tokens) < len(props):
            raise DataFormatError(f"{path}: line {lineno}: short vertex row")
        try:
            rows[i] = [float(tokens[c]) for c in cols]
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: non-numeric coordinate") from None
    return check_cloud(rows)


def load_cloud(path) -> np.ndarray:
    """Load a single cloud, dispatching on the file extension."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".xyz":
        return load_xyz(path)
    if ext == ".ply":
        return load_ply(path)
    raise DataFormatError(f"{path}: unsupported cloud format {ext!r}")


def save_cloud(path, points) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".xyz":
        save_xyz(path, points)
    elif ext == ".ply":
        save_ply(path, points)
    else:
        raise DataFormatError(f"{path}: unsupported cloud format {ext!r}")


# -- labelled archives -----------------------------------------------------


@dataclass
class Dataset:
    """A labelled cloud collection with its class vocabulary size."""

    samples: list = field(default_factory=list)
    num_classes: int = 0

    @property
    def segmented(self) -> bool:
        return bool(self.samples) and isinstance(self.samples[0], SegLabeledCloud)

    def labels(self) -> np.ndarray:
        if self.segmented:
            raise DataFormatError("segmented datasets have per-point labels")
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def points_array(self) -> np.ndarray:
        """Stack samples into (count, n, 3); sizes must agree."""
        sizes = {len(s.points) for s in self.samples}
        if len(sizes) != 1:
            raise DataFormatError("samples have differing point counts")
        return np.stack([s.points for s in self.samples])


def save_archive(path, dataset: Dataset) -> None:
    samples = dataset.samples
    if not samples:
        raise DataFormatError("refusing to write an empty archive")
    segmented = dataset.segmented
    for s in samples:
        if isinstance(s, SegLabeledCloud) != segmented:
            raise DataFormatError("archive cannot mix labelled and segmented samples")
    parts = [
        ARCHIVE_MAGIC,
        struct.pack(
            "<HHIH",
            FORMAT_VERSION,
            dataset.num_classes,
            len(samples),
            FLAG_POINT_LABELS if segmented else 0,
        ),
    ]
    for s in samples:
        pts = np.ascontiguousarray(s.points, dtype=np.float32)
        label = -1 if segmented else int(s.label)
        parts.append(struct.pack("<Ii", len(pts), label))
        parts.append(pts.tobytes())
        if segmented:
            parts.append(np.ascontiguousarray(s.labels, dtype=np.int32).tobytes())
    atomic_write_bytes(path, b"".join(parts))


class _Reader:
    def __init__(self, path, data: bytes):
        self.path = path
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError(f"{self.path}: truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_archive(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(path, data)
    if r.take(4) != ARCHIVE_MAGIC:
        raise DataFormatError(f"{path}: not a cloud archive (bad magic)")
    version, num_classes, count, flags = r.unpack("<HHIH")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported archive version {version}")
    segmented = bool(flags & FLAG_POINT_LABELS)
    samples = []
    for idx in range(count):
        n, label = r.unpack("<Ii")
        if n < 1:
            raise DataFormatError(f"{path}: sample {idx} is empty")
        pts = np.frombuffer(r.take(12 * n), dtype="<f4").reshape(n, 3)
        pts = pts.astype(np.float64)
        if not np.isfinite(pts).all():
            raise DataFormatError(f"{path}: sample {idx} has non-finite coordinates")
        if segmented:
            labels = np.frombuffer(r.take(4 * n), dtype="<i4").astype(np.int64)
            if labels.min() < 0 or labels.max() >= num_classes:
                raise DataFormatError(f"{path}: sample {idx} part label out of range")
            samples.append(SegLabeledCloud(points=pts, labels=labels))
        else:
            if not 0 <= label < num_classes:
                raise DataFormatError(f"{path}: sample {idx} label {label} out of range")
            samples.append(LabeledCloud(points=pts, label=label))
    if r.pos != len(data):
        raise DataFormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Dataset(samples=samples, num_classes=num_classes)


# -- tensor container ------------------------------------------------------


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named arrays plus a JSON metadata blob, byte-deterministically.

    Tensors are stored sorted by name in C order with explicit dtypes, so
    the file bytes are a pure function of the contents.
    """
    meta_blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    parts = [
        TENSOR_MAGIC,
        struct.pack("<HI", FORMAT_VERSION, len(tensors)),
        struct.pack("<I", len(meta_blob)),
        meta_blob,
    ]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<H", len(dtype_b)))
        parts.append(dtype_b)
        parts.append(struct.pack("<H", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}q", *arr.shape))
        parts.append(arr.tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_tensors(path):
    """Read a tensor container; returns (tensors dict, meta dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(path, data)
    if r.take(4) != TENSOR_MAGIC:
        raise DataFormatError(f"{path}: not a tensor container (bad magic)")
    version, count = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported container version {version}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad metadata block: {exc}") from None
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (dtype_len,) = r.unpack("<H")
        dtype = np.dtype(r.take(dtype_len).decode("ascii"))
        (ndim,) = r.unpack("<H")
        shape = r.unpack(f"<{ndim}q")
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(size * dtype.itemsize), dtype=dtype)
        tensors[name] = arr.reshape(shape).copy()
    if r.pos != len(data):
        raise DataFormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return tensors, meta
