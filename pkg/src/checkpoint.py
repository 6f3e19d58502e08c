"""
Бинарный формат чекпоинта.

Заголовок: магия b"MXGANCKP", версия (uint32), SHA-256 геометрии в hex
(64 байта ASCII), число записей (uint32). Каждая запись: длина имени
(uint32), имя в UTF-8, ранг (uint32), размеры (uint64 * ранг), данные
little-endian float64. Все целые little-endian.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np
from loguru import logger

from src.errors import CheckpointError

MAGIC = b"MXGANCKP"
VERSION = 1
HASH_LENGTH = 64
HEX_DIGITS = frozenset("0123456789abcdef")


@dataclass
class Checkpoint:
    geometry_hash: str
    entries: Dict[str, np.ndarray] = field(default_factory=dict)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    text = checkpoint.geometry_hash
    if len(text) != HASH_LENGTH or not set(text) <= HEX_DIGITS:
        raise CheckpointError(f"Хэш геометрии должен содержать {HASH_LENGTH} hex-символа")
    digest = text.encode("ascii")
    parts = [MAGIC, struct.pack("<I", VERSION), digest, struct.pack("<I", len(checkpoint.entries))]
    for name, array in checkpoint.entries.items():
        raw_name = name.encode("utf-8")
        array = np.asarray(array, dtype="<f8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array).tobytes())
    return b"".join(parts)


def _decode_text(raw: bytes, encoding: str, source: str, offset: int) -> str:
    try:
        return raw.decode(encoding)
    except UnicodeDecodeError as e:
        raise CheckpointError(f"Чекпоинт {source}: поврежденный текст на смещении {offset} ({e.reason})") from e


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    """
    Разбирает байты чекпоинта.

    Raises:
        CheckpointError: Неверная магия, версия или обрезанные данные
    """
    offset = 0

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(blob):
            raise CheckpointError(f"Чекпоинт {source} обрезан на смещении {offset}")
        chunk = blob[offset:offset + size]
        offset += size
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"Файл {source} не является чекпоинтом MixerGAN")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"Чекпоинт {source}: неподдерживаемая версия {version}")
    digest_offset = offset
    digest = _decode_text(take(HASH_LENGTH), "ascii", source, digest_offset)
    if any(ch not in HEX_DIGITS for ch in digest):
        raise CheckpointError(f"Чекпоинт {source}: хэш геометрии не в hex (смещение {digest_offset})")
    (count,) = struct.unpack("<I", take(4))

    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = struct.unpack("<I", take(4))
        name_offset = offset
        name = _decode_text(take(name_length), "utf-8", source, name_offset)
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape)) if rank else 1
        payload = np.frombuffer(take(8 * size), dtype="<f8")
        entries[name] = payload.astype(np.float64).reshape(shape)
    if offset != len(blob):
        raise CheckpointError(f"Чекпоинт {source}: лишние байты после смещения {offset}")
    return Checkpoint(digest, entries)


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """
    Атомарно записывает чекпоинт (через временный файл и os.replace).

    Raises:
        CheckpointError: При ошибке записи, с путем в сообщении
    """
    path = Path(path)
    tmp_path = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path.write_bytes(encode_checkpoint(checkpoint))
        os.replace(tmp_path, path)
    except OSError as e:
        logger.error(
            "Не удалось записать чекпоинт",
            path=str(path),
            error=str(e),
            error_type=type(e).__name__,
        )
        raise CheckpointError(f"Не удалось записать чекпоинт {path}: {e}") from e
    logger.debug("Чекпоинт сохранен", path=str(path), entries=len(checkpoint.entries))
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Не удалось прочитать чекпоинт {path}: {e}") from e
    return decode_checkpoint(blob, str(path))
