"""Flat binary parameter checkpoints.

Layout (little-endian): magic ``RISNN1``, u32 version, u32 parameter count,
then per parameter: u32 name length, UTF-8 name, u32 rank, rank x u64
extents, float32 values.
"""
import logging
import struct
from pathlib import Path
from typing import BinaryIO, List, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import ArtifactMissingError, DatasetFormatError
from app.nn.tensor import Parameter

logger = logging.getLogger(__name__)

MAGIC = b"RISNN1"
VERSION = 1


def save_checkpoint(path: Union[str, Path], params: Sequence[Parameter]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    logger.info("Wrote checkpoint %s (%d parameters)", path, len(params))
    return path


def _read_exact(fh: BinaryIO, size: int, path: Path) -> bytes:
    buf = fh.read(size)
    if len(buf) != size:
        raise DatasetFormatError(f"truncated checkpoint {path}")
    return buf


def load_checkpoint(path: Union[str, Path]) -> List[Tuple[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissingError(path)
    entries = []
    with path.open("rb") as fh:
        if _read_exact(fh, len(MAGIC), path) != MAGIC:
            raise DatasetFormatError(f"{path} is not a parameter checkpoint")
        version, count = struct.unpack("<II", _read_exact(fh, 8, path))
        if version != VERSION:
            raise DatasetFormatError(f"unsupported checkpoint version {version} in {path}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
            name = _read_exact(fh, name_len, path).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, path))
            shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, path)) if rank else ()
            size = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(_read_exact(fh, 4 * size, path), dtype="<f4").reshape(shape)
            entries.append((name, values.astype(np.float32)))
    return entries
