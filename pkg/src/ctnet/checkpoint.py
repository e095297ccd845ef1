"""Checkpoint container.

Little-endian layout::

    b"CTN1" | u16 version=1 | u32 config length | ModelConfig as JSON (UTF-8,
    sorted keys, compact) | u32 parameter count | per parameter:
    u16 name length, name (UTF-8), u8 rank, u32 extents[rank], f32 payload
    | u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .autograd import Variable
from .config import ModelConfig
from .errors import ChecksumError, CorruptHeaderError, UnknownFormatError

CKPT_MAGIC = b"CTN1"
CKPT_VERSION = 1


def encode_checkpoint(cfg: ModelConfig, params: dict) -> bytes:
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(cfg_bytes)), cfg_bytes,
             struct.pack("<I", len(params))]
    for name, var in params.items():
        nb = name.encode("utf-8")
        arr = np.asarray(var.value if isinstance(var, Variable) else var)
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> tuple[ModelConfig, dict]:
    if buf[:4] != CKPT_MAGIC:
        raise UnknownFormatError(f"{source}: not a CTNet checkpoint (bad magic)")
    if len(buf) < 18:
        raise CorruptHeaderError(f"{source}: truncated checkpoint")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumError(f"{source}: CRC32 mismatch")
    try:
        version, clen = struct.unpack_from("<HI", buf, 4)
        if version != CKPT_VERSION:
            raise CorruptHeaderError(f"{source}: unsupported checkpoint version {version}")
        pos = 10
        cfg = ModelConfig.from_dict(json.loads(buf[pos:pos + clen].decode("utf-8")))
        pos += clen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 1)
            pos += 1 + 4 * rank
            n = int(np.prod(shape))
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).astype(np.float32).reshape(shape)
            pos += 4 * n
            params[name] = Variable(arr, requires_grad=True)
    except (struct.error, ValueError, UnicodeDecodeError, TypeError) as e:
        raise CorruptHeaderError(f"{source}: malformed checkpoint ({e})") from e
    if pos != len(buf) - 4:
        raise CorruptHeaderError(f"{source}: trailing bytes after parameters")
    return cfg, params


def save_checkpoint(path, cfg: ModelConfig, params: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(cfg, params))


def load_checkpoint(path) -> tuple[ModelConfig, dict]:
    return decode_checkpoint(Path(path).read_bytes(), str(path))
