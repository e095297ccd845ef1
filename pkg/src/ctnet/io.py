"""Volume files (.vol container, PGM slice directories) and dataset manifests.

.vol layout, little-endian::

    b"CTV1" | u16 version=1 | u32 depth | u32 height | u32 width
    | u8 dtype (0=u8, 1=u16, 2=f32) | voxel payload (slice-major)
    | u32 CRC32 of every preceding byte

Manifests are UTF-8 CSV with LF endings and header ``case_id,path,label``.
Paths are stored relative to the manifest's directory when possible.
"""
from __future__ import annotations

import csv
import io
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadLabelError, ChecksumError, CorruptHeaderError, DuplicateCaseError,
                     InconsistentSliceError, ManifestError, MissingFileError, MissingLabelError,
                     UnknownFormatError)
from .model import CLASS_NAMES
from .volume import DTYPE_TAGS, TAG_DTYPES, Volume

VOL_MAGIC = b"CTV1"
VOL_VERSION = 1
_VOL_HEADER = struct.Struct("<4sHIIIB")
SPLITS = ("train", "val", "test")


# ------------------------------------------------------------------ .vol

def encode_volume(v: Volume) -> bytes:
    dt = v.voxels.dtype
    header = _VOL_HEADER.pack(VOL_MAGIC, VOL_VERSION, v.depth, v.height, v.width, DTYPE_TAGS[dt])
    body = header + v.voxels.astype(dt.newbyteorder("<"), copy=False).tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_volume(buf: bytes, source: str = "<bytes>") -> Volume:
    if len(buf) < 4 or buf[:4] != VOL_MAGIC:
        raise UnknownFormatError(f"{source}: not a .vol file (bad magic)")
    if len(buf) < _VOL_HEADER.size + 4:
        raise CorruptHeaderError(f"{source}: truncated header")
    _, version, depth, height, width, tag = _VOL_HEADER.unpack_from(buf)
    if version != VOL_VERSION:
        raise CorruptHeaderError(f"{source}: unsupported .vol version {version}")
    if tag not in TAG_DTYPES:
        raise CorruptHeaderError(f"{source}: unknown dtype tag {tag}")
    if min(depth, height, width) < 1:
        raise CorruptHeaderError(f"{source}: zero extent {depth}x{height}x{width}")
    dt = TAG_DTYPES[tag]
    n = depth * height * width * dt.itemsize
    if len(buf) != _VOL_HEADER.size + n + 4:
        raise CorruptHeaderError(
            f"{source}: size {len(buf)} does not match header ({depth}x{height}x{width} {dt})")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumError(f"{source}: CRC32 mismatch")
    vox = np.frombuffer(buf, dtype=dt.newbyteorder("<"), count=depth * height * width,
                        offset=_VOL_HEADER.size)
    return Volume(vox.astype(dt).reshape(depth, height, width))


def save_volume(v: Volume, path) -> None:
    Path(path).write_bytes(encode_volume(v))


# ------------------------------------------------------------------- PGM

def _pgm_tokens(buf: bytes, source: str):
    """Parse the P5 header, returning (width, height, maxval, data offset)."""
    pos, vals = 2, []
    n = len(buf)
    while len(vals) < 3:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptHeaderError(f"{source}: malformed PGM header")
        vals.append(int(buf[start:pos]))
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise CorruptHeaderError(f"{source}: malformed PGM header")
    return vals[0], vals[1], vals[2], pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary P5 graymap; returns (image, maxval)."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise UnknownFormatError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval, off = _pgm_tokens(buf, str(path))
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise CorruptHeaderError(f"{path}: bad PGM dimensions or maxval")
    dt = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    if len(buf) - off != w * h * dt.itemsize:
        raise CorruptHeaderError(f"{path}: payload size does not match {w}x{h}")
    img = np.frombuffer(buf, dtype=dt, count=w * h, offset=off).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16), maxval


def write_pgm(path, image: np.ndarray, maxval: int) -> None:
    h, w = image.shape
    dt = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + image.astype(dt).tobytes())


def load_pgm_stack(directory) -> Volume:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise UnknownFormatError(f"{directory}: no .pgm slices found")
    slices, maxvals = [], []
    for f in files:
        img, mv = read_pgm(f)
        if slices and img.shape != slices[0].shape:
            raise InconsistentSliceError(
                f"{f}: slice size {img.shape} differs from {files[0].name} {slices[0].shape}")
        if slices and img.dtype != slices[0].dtype:
            raise InconsistentSliceError(f"{f}: bit depth differs from {files[0].name}")
        slices.append(img)
        maxvals.append(mv)
    return Volume(np.stack(slices), intensity_range=(0, max(maxvals)))


def save_pgm_stack(v: Volume, directory) -> list[Path]:
    """One ``slice_NNNN.pgm`` per slice. Float volumes are quantized to 8 bits
    over their intensity range."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    vox = v.voxels
    if vox.dtype.kind == "f":
        lo, hi = v.intensity_range
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        vox = np.clip(np.rint((vox.astype(np.float64) - lo) * scale), 0, 255).astype(np.uint8)
        maxval = 255
    else:
        maxval = int(v.intensity_range[1])
    width = max(4, len(str(v.depth - 1)))
    paths = []
    for i in range(v.depth):
        p = d / f"slice_{i:0{width}d}.pgm"
        write_pgm(p, vox[i], maxval)
        paths.append(p)
    return paths


def load_volume(path) -> Volume:
    """Load a .vol file or a directory of PGM slices."""
    p = Path(path)
    if p.is_dir():
        return load_pgm_stack(p)
    if not p.exists():
        raise FileNotFoundError(f"{p}: no such file")
    buf = p.read_bytes()
    if buf[:4] == VOL_MAGIC:
        return decode_volume(buf, str(p))
    if buf[:2] == b"P5":
        img, mv = read_pgm(p)
        return Volume(img[None], intensity_range=(0, mv))
    raise UnknownFormatError(f"{p}: unrecognized volume format")


# -------------------------------------------------------------- manifests

@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    path: Path
    label: str | None = None

    @property
    def label_index(self) -> int:
        if self.label is None:
            raise MissingLabelError(f"case {self.case_id} has no label")
        return CLASS_NAMES.index(self.label)


@dataclass
class DatasetManifest:
    records: list[CaseRecord]
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if not self.records:
            raise ManifestError("manifest is empty")
        seen = set()
        for r in self.records:
            if r.case_id in seen:
                raise DuplicateCaseError(f"duplicate case_id {r.case_id!r}")
            seen.add(r.case_id)
            if r.label is not None and r.label not in CLASS_NAMES:
                raise BadLabelError(f"case {r.case_id}: bad label {r.label!r}")
            if r.label is None and self.split != "test":
                raise MissingLabelError(f"case {r.case_id}: label required in {self.split} split")

    def __len__(self):
        return len(self.records)

    def resolve(self, record: CaseRecord) -> Path:
        return record.path if record.path.is_absolute() else self.root / record.path

    def labels(self) -> np.ndarray:
        return np.array([r.label_index for r in self.records], dtype=np.int64)


def load_manifest(path, split: str = "train", check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["case_id", "path", "label"]:
        raise ManifestError(f"{path}: header must be 'case_id,path,label'")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        cid, rel, label = row
        if label and label not in CLASS_NAMES:
            raise BadLabelError(f"{path}:{lineno}: bad label token {label!r}")
        records.append(CaseRecord(cid, Path(rel), label or None))
    m = DatasetManifest(records, split, path.parent)
    if check_files:
        for r in m.records:
            if not m.resolve(r).exists():
                raise MissingFileError(f"{path}: case {r.case_id} points to missing {m.resolve(r)}")
    return m


def save_manifest(m: DatasetManifest, path) -> None:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case_id", "path", "label"])
    base = path.parent.resolve()
    for r in m.records:
        p = m.resolve(r).resolve()
        try:
            rel = p.relative_to(base).as_posix()
        except ValueError:
            rel = os.path.relpath(p, base) if p.anchor == base.anchor else str(p)
        w.writerow([r.case_id, rel, r.label or ""])
    path.write_bytes(buf.getvalue().encode("utf-8"))
