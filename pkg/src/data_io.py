"""
Данные: синтетические домены, чтение/запись PPM (P6, 8 бит) и
непарная выборка батчей.

Раскладка набора данных на диске:
    <root>/trainA/*.ppm, <root>/trainB/*.ppm, <root>/testA, <root>/testB
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.errors import DimensionError, PpmFormatError, ValidationError

SPLITS = ("train", "test")
DOMAINS = ("A", "B")
HUE_RED = 0.0
HUE_BLUE = 2.0 / 3.0
_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass
class ImageRecord:
    """Трехканальное изображение [3, H, W] со значениями в [-1, 1]."""

    pixels: np.ndarray
    source: str = ""

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[0] != 3:
            raise DimensionError(f"Изображение должно иметь форму [3, H, W], получено {pixels.shape}")
        self.pixels = np.clip(pixels, -1.0, 1.0)

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class SyntheticDomainSpec:
    """Описание процедурного домена: фигуры заданного оттенка на текстурном фоне."""

    domain_id: str = "A"
    shape_family: str = "circles"
    hue_center: float = HUE_RED
    hue_width: float = 0.0
    texture_amplitude: float = 0.1
    count: int = 64
    seed: int = 0
    image_size: int = 32
    saturation: float = 0.8
    value: float = 0.9

    def descriptor(self, index: int) -> str:
        return (
            f"synthetic:{self.domain_id}/{self.shape_family}/hue={self.hue_center:.4f}"
            f"/seed={self.seed}/#{index}"
        )


# --- Синтез -------------------------------------------------------------------

def hsv_to_rgb(hue: np.ndarray, saturation: float, value: float) -> np.ndarray:
    """Векторизованный перевод HSV -> RGB в [0, 1]; возвращает [..., 3]."""
    hue = np.mod(np.asarray(hue, dtype=np.float64), 1.0)
    chroma = value * saturation
    h6 = hue * 6.0
    second = chroma * (1.0 - np.abs(np.mod(h6, 2.0) - 1.0))
    sector = np.floor(h6).astype(int) % 6
    zeros = np.zeros_like(hue)
    table = [
        (chroma + zeros, second, zeros),
        (second, chroma + zeros, zeros),
        (zeros, chroma + zeros, second),
        (zeros, second, chroma + zeros),
        (second, zeros, chroma + zeros),
        (chroma + zeros, zeros, second),
    ]
    rgb = np.zeros(hue.shape + (3,))
    for index, channels in enumerate(table):
        mask = sector == index
        for c in range(3):
            rgb[..., c] = np.where(mask, channels[c], rgb[..., c])
    return rgb + (value - chroma)


def _synthesize_one(spec: SyntheticDomainSpec, index: int) -> np.ndarray:
    size = spec.image_size
    rng = np.random.default_rng([spec.seed, index])
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    freq = rng.uniform(1.0, 3.0, size=2)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    texture = spec.texture_amplitude * np.sin(2.0 * math.pi * (freq[0] * xs + freq[1] * ys) / size + phase)
    background = -0.6 + texture
    image = np.repeat(background[None], 3, axis=0)

    shapes = int(rng.integers(1, 4))
    for _ in range(shapes):
        cx, cy = rng.uniform(0, size, size=2)
        radius = rng.uniform(size / 8.0, size / 4.0)
        hue = spec.hue_center + spec.hue_width * (rng.uniform() - 0.5)
        if spec.shape_family == "circles":
            mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2
        else:
            mask = (np.abs(xs - cx) <= radius) & (np.abs(ys - cy) <= radius)
        color = 2.0 * hsv_to_rgb(np.asarray(hue), spec.saturation, spec.value) - 1.0
        for c in range(3):
            image[c] = np.where(mask, color[c], image[c])
    return np.clip(image, -1.0, 1.0)


def synthesize_domain(spec: SyntheticDomainSpec) -> List[ImageRecord]:
    """
    Детерминированно порождает изображения домена.

    Генератор случайных чисел для i-го изображения - default_rng([seed, i]),
    поэтому домены с одинаковым seed и разными оттенками совпадают по
    геометрии фигур.

    Raises:
        ValidationError: Если count < 1 или параметры вне диапазона
    """
    if spec.count < 1:
        raise ValidationError(f"count должен быть >= 1, получено {spec.count}")
    if spec.shape_family not in ("circles", "squares"):
        raise ValidationError(f"Неизвестное семейство фигур: {spec.shape_family}")
    if spec.image_size < 4:
        raise ValidationError(f"Слишком маленький размер изображения: {spec.image_size}")
    records = [
        ImageRecord(_synthesize_one(spec, i), spec.descriptor(i)) for i in range(spec.count)
    ]
    logger.debug("Домен синтезирован", domain=spec.domain_id, count=spec.count, seed=spec.seed)
    return records


def palette_swap_oracle(pixels: np.ndarray) -> np.ndarray:
    """Меняет местами красный и синий каналы: точный перевод красного домена в синий."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim < 3 or pixels.shape[-3] != 3:
        raise DimensionError(f"Ожидается [..., 3, H, W], получено {pixels.shape}")
    return pixels[..., [2, 1, 0], :, :].copy()


def domain_specs(
    seed: int,
    count: int,
    image_size: int,
    shape_family: str = "circles",
    texture_amplitude: float = 0.1,
    hue_width: float = 0.0,
) -> Tuple[SyntheticDomainSpec, SyntheticDomainSpec]:
    """Пара доменов красный/синий для непарной задачи; у B свой seed."""
    common = dict(
        shape_family=shape_family,
        hue_width=hue_width,
        texture_amplitude=texture_amplitude,
        count=count,
        image_size=image_size,
    )
    return (
        SyntheticDomainSpec(domain_id="A", hue_center=HUE_RED, seed=seed, **common),
        SyntheticDomainSpec(domain_id="B", hue_center=HUE_BLUE, seed=seed + 1, **common),
    )


def stack_pixels(records: Sequence[ImageRecord]) -> np.ndarray:
    if not records:
        raise ValidationError("Пустой список изображений")
    shapes = {r.pixels.shape for r in records}
    if len(shapes) != 1:
        raise DimensionError(f"Изображения разного размера: {sorted(shapes)}")
    return np.stack([r.pixels for r in records])


# --- PPM ----------------------------------------------------------------------

def to_bytes(pixels: np.ndarray) -> np.ndarray:
    """[-1, 1] -> uint8 по правилу u = round((v + 1) * 127.5)."""
    values = np.round((np.clip(pixels, -1.0, 1.0) + 1.0) * 127.5)
    return np.clip(values, 0, 255).astype(np.uint8)


def from_bytes(values: np.ndarray) -> np.ndarray:
    """uint8 -> [-1, 1] по правилу v = u / 127.5 - 1."""
    return values.astype(np.float64) / 127.5 - 1.0


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise DimensionError(f"PPM ожидает [3, H, W], получено {pixels.shape}")
    height, width = pixels.shape[1:]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + to_bytes(pixels).transpose(1, 2, 0).tobytes()


def _read_token(blob: bytes, offset: int) -> Tuple[bytes, int]:
    """Следующий токен заголовка, пропуская пробелы и комментарии '#'."""
    while offset < len(blob):
        byte = blob[offset:offset + 1]
        if byte == b"#":
            end = blob.find(b"\n", offset)
            offset = len(blob) if end < 0 else end + 1
        elif byte in _WHITESPACE:
            offset += 1
        else:
            break
    start = offset
    while offset < len(blob) and blob[offset:offset + 1] not in _WHITESPACE and blob[offset:offset + 1] != b"#":
        offset += 1
    if start == offset:
        raise PpmFormatError("Заголовок PPM обрывается", start)
    return blob[start:offset], offset


def decode_ppm(blob: bytes) -> np.ndarray:
    """
    Разбирает PPM P6 с maxval 255.

    Returns:
        Массив [3, H, W] в [-1, 1]

    Raises:
        PpmFormatError: Неверный заголовок или длина данных, со смещением в байтах
    """
    magic, offset = _read_token(blob, 0)
    if magic != b"P6":
        raise PpmFormatError(f"Ожидалась сигнатура P6, получено {magic!r}", 0)
    numbers = []
    for label in ("ширина", "высота", "maxval"):
        token_start = offset
        token, offset = _read_token(blob, offset)
        if not token.isdigit():
            raise PpmFormatError(f"Некорректное поле '{label}': {token!r}", token_start)
        numbers.append(int(token))
    width, height, maxval = numbers
    if width < 1 or height < 1:
        raise PpmFormatError(f"Недопустимый размер {width}x{height}", offset)
    if maxval != 255:
        raise PpmFormatError(f"Поддерживается только maxval 255, получено {maxval}", offset)
    if offset >= len(blob) or blob[offset:offset + 1] not in _WHITESPACE:
        raise PpmFormatError("После заголовка ожидается один пробельный символ", offset)
    offset += 1
    expected = width * height * 3
    payload = blob[offset:]
    if len(payload) != expected:
        raise PpmFormatError(
            f"Длина данных {len(payload)} не совпадает с объявленной {expected} ({width}x{height})",
            offset + min(len(payload), expected),
        )
    values = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return from_bytes(values.transpose(2, 0, 1))


def save_image(path: Path, pixels: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_ppm(pixels))
    return path


def load_image(path: Path) -> ImageRecord:
    path = Path(path)
    return ImageRecord(decode_ppm(path.read_bytes()), str(path))


def load_image_dir(directory: Path) -> List[ImageRecord]:
    """Все *.ppm каталога в порядке имен файлов."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"Каталог с изображениями не найден: {directory}")
    return [load_image(path) for path in sorted(directory.glob("*.ppm"))]


def load_dataset(root: Path, split: str = "train") -> Tuple[List[ImageRecord], List[ImageRecord]]:
    """
    Загружает домены A и B раздела split.

    Raises:
        ValidationError: Если каталог отсутствует или домен пуст
    """
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"Каталог набора данных не найден: {root}")
    domains = []
    for domain in DOMAINS:
        directory = root / f"{split}{domain}"
        records = load_image_dir(directory)
        if not records:
            raise ValidationError(f"В каталоге {directory} нет PPM файлов")
        domains.append(records)
    logger.info("Набор данных загружен", root=str(root), split=split, size_a=len(domains[0]), size_b=len(domains[1]))
    return domains[0], domains[1]


def write_domain(directory: Path, records: Sequence[ImageRecord], prefix: str = "img") -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [
        save_image(directory / f"{prefix}_{index:04d}.ppm", record.pixels)
        for index, record in enumerate(records)
    ]


def make_grid(images: np.ndarray, columns: int) -> np.ndarray:
    """Склеивает [m, 3, H, W] в одно изображение сеткой по columns в строке."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[0] < 1:
        raise DimensionError(f"make_grid ожидает [m, 3, H, W], получено {images.shape}")
    count, _, height, width = images.shape
    columns = max(1, min(columns, count))
    rows = -(-count // columns)
    grid = -np.ones((3, rows * height, columns * width))
    for index in range(count):
        r, c = divmod(index, columns)
        grid[:, r * height:(r + 1) * height, c * width:(c + 1) * width] = images[index]
    return grid


# --- Непарная выборка -----------------------------------------------------------

class UnpairedSampler:
    """
    Непарная выборка батчей без возвращения в пределах эпохи.

    Перестановка эпохи e для домена d - default_rng([seed, d, e]); отражения -
    default_rng([seed, 2 + d, iteration]). Номер батча полностью определяет
    его содержимое, поэтому seek() восстанавливает состояние при резюме.
    """

    def __init__(self, size_x: int, size_y: int, batch_size: int, seed: int, flip: bool = False):
        if size_x < 1 or size_y < 1:
            raise ValidationError(f"Пустой домен: |X|={size_x}, |Y|={size_y}")
        if batch_size < 1:
            raise ValidationError(f"batch_size должен быть >= 1, получено {batch_size}")
        self.sizes = (size_x, size_y)
        self.batch_size = batch_size
        self.seed = seed
        self.flip = flip
        self.iteration = 0
        self._permutations: Dict[Tuple[int, int], np.ndarray] = {}

    def seek(self, iteration: int) -> None:
        self.iteration = int(iteration)

    def _permutation(self, domain: int, epoch: int) -> np.ndarray:
        key = (domain, epoch)
        if key not in self._permutations:
            if len(self._permutations) > 8:
                self._permutations.clear()
            rng = np.random.default_rng([self.seed, domain, epoch])
            self._permutations[key] = rng.permutation(self.sizes[domain])
        return self._permutations[key]

    def indices(self, domain: int, iteration: Optional[int] = None) -> np.ndarray:
        iteration = self.iteration if iteration is None else iteration
        size = self.sizes[domain]
        start = iteration * self.batch_size
        result = np.empty(self.batch_size, dtype=np.int64)
        for j in range(self.batch_size):
            epoch, position = divmod(start + j, size)
            result[j] = self._permutation(domain, epoch)[position]
        return result

    def flips(self, domain: int, iteration: Optional[int] = None) -> np.ndarray:
        iteration = self.iteration if iteration is None else iteration
        if not self.flip:
            return np.zeros(self.batch_size, dtype=bool)
        rng = np.random.default_rng([self.seed, 2 + domain, iteration])
        return rng.random(self.batch_size) < 0.5

    def _gather(self, images: np.ndarray, domain: int) -> np.ndarray:
        batch = images[self.indices(domain)].copy()
        flips = self.flips(domain)
        batch[flips] = batch[flips][..., ::-1]
        return batch

    def sample_unpaired_batch(self, images_x: np.ndarray, images_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Следующая пара непарных батчей.

        Args:
            images_x: Домен X [N_x, 3, H, W]
            images_y: Домен Y [N_y, 3, H, W]

        Returns:
            (batch_x, batch_y), каждый [batch, 3, H, W]
        """
        if len(images_x) != self.sizes[0] or len(images_y) != self.sizes[1]:
            raise ValidationError("Размеры доменов не совпадают с сэмплером")
        batch_x = self._gather(images_x, 0)
        batch_y = self._gather(images_y, 1)
        self.iteration += 1
        return batch_x, batch_y


def sample_unpaired_batch(
    dataset_x: np.ndarray,
    dataset_y: np.ndarray,
    batch: int,
    sampler: Optional[UnpairedSampler] = None,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Одна пара батчей; без сэмплера создается новый с заданным seed.

    Raises:
        ValidationError: Размер батча не совпадает с размером сэмплера
    """
    if sampler is None:
        sampler = UnpairedSampler(len(dataset_x), len(dataset_y), batch, seed)
    elif sampler.batch_size != batch:
        raise ValidationError(f"batch={batch} не совпадает с сэмплером (batch_size={sampler.batch_size})")
    return sampler.sample_unpaired_batch(dataset_x, dataset_y)
