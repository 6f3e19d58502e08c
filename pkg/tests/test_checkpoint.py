"""
Тесты бинарного формата чекпоинта.
"""
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.checkpoint import (  # noqa: E402
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from src.errors import CheckpointError  # noqa: E402
from tests.runner import run_module_tests  # noqa: E402

HASH = "ab" * 32


def sample_checkpoint() -> Checkpoint:
    rng = np.random.default_rng(0)
    return Checkpoint(HASH, {
        "G/stem_w": rng.standard_normal((4, 3, 7, 7)),
        "adam/generators/step": np.asarray(12.0),
        "pool/X": np.zeros((0, 3, 8, 8)),
    })


def expect_error(blob: bytes, fragment: str) -> None:
    try:
        decode_checkpoint(blob)
    except CheckpointError as e:
        assert fragment in str(e), str(e)
        return
    raise AssertionError(f"Ожидалась CheckpointError с '{fragment}'")


def test_encode_decode_preserves_entries():
    checkpoint = sample_checkpoint()
    decoded = decode_checkpoint(encode_checkpoint(checkpoint))
    assert decoded.geometry_hash == HASH
    assert list(decoded.entries) == list(checkpoint.entries)
    for name, array in checkpoint.entries.items():
        assert decoded.entries[name].shape == array.shape
        assert np.array_equal(decoded.entries[name], array)


def test_header_layout():
    blob = encode_checkpoint(Checkpoint(HASH, {}))
    assert blob[:8] == MAGIC
    assert struct.unpack("<I", blob[8:12]) == (1,)
    assert blob[12:76] == HASH.encode("ascii")
    assert struct.unpack("<I", blob[76:80]) == (0,)
    assert len(blob) == 80


def test_bad_magic_rejected():
    blob = bytearray(encode_checkpoint(sample_checkpoint()))
    blob[0:8] = b"NOTACKPT"
    expect_error(bytes(blob), "не является чекпоинтом")


def test_unknown_version_rejected():
    blob = bytearray(encode_checkpoint(sample_checkpoint()))
    blob[8:12] = struct.pack("<I", 99)
    expect_error(bytes(blob), "версия 99")


def test_truncated_blob_rejected():
    blob = encode_checkpoint(sample_checkpoint())
    for cut in (4, 40, len(blob) - 1):
        expect_error(blob[:cut], "обрезан на смещении")


def test_trailing_bytes_rejected():
    blob = encode_checkpoint(sample_checkpoint()) + b"\x00"
    expect_error(blob, "лишние байты")


def test_corrupted_hash_byte_names_source():
    blob = bytearray(encode_checkpoint(sample_checkpoint()))
    blob[12] = 0xFF
    try:
        decode_checkpoint(bytes(blob), "runs/x/checkpoint_000002.ckpt")
    except CheckpointError as e:
        assert "runs/x/checkpoint_000002.ckpt" in str(e)
        assert "смещении 12" in str(e)
        return
    raise AssertionError("Ожидалась CheckpointError")


def test_non_hex_hash_rejected():
    blob = bytearray(encode_checkpoint(sample_checkpoint()))
    blob[12] = ord("z")
    expect_error(bytes(blob), "не в hex")


def test_corrupted_entry_name_rejected():
    blob = bytearray(encode_checkpoint(sample_checkpoint()))
    # первая запись: длина имени на смещении 80, имя с 84
    blob[84] = 0xFF
    expect_error(bytes(blob), "смещении 84")


def test_corrupted_file_on_disk_names_path():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "checkpoint_000001.ckpt"
        blob = bytearray(encode_checkpoint(sample_checkpoint()))
        blob[12] = 0xFF
        path.write_bytes(bytes(blob))
        try:
            load_checkpoint(path)
        except CheckpointError as e:
            assert str(path) in str(e)
            return
    raise AssertionError("Ожидалась CheckpointError")


def test_invalid_hash_length_rejected():
    try:
        encode_checkpoint(Checkpoint("abc", {}))
    except CheckpointError:
        return
    raise AssertionError("Ожидалась CheckpointError")


def test_save_and_load_file():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "nested" / "checkpoint_000001.ckpt"
        save_checkpoint(path, sample_checkpoint())
        assert path.exists()
        assert not path.with_name(path.name + ".tmp").exists()
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.entries["G/stem_w"], sample_checkpoint().entries["G/stem_w"])


def test_missing_file_names_path():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "absent.ckpt"
        try:
            load_checkpoint(path)
        except CheckpointError as e:
            assert str(path) in str(e)
            return
    raise AssertionError("Ожидалась CheckpointError")


if __name__ == "__main__":
    sys.exit(run_module_tests(dict(globals()), "Тесты формата чекпоинта"))
