"""
Функции потерь: LSGAN для генераторов и дискриминаторов, цикловая
согласованность, перцептивная (контентная) потеря и полная цель обучения.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from src.errors import DimensionError, ValidationError
from src.tensor import DTYPE, Tensor, abs_, add, conv2d, mean, relu, square, sub

Scalar = Union[Tensor, float]

EXTRACTOR_WIDTHS: Tuple[int, ...] = (16, 32, 64)
EXTRACTOR_STRIDES: Tuple[int, ...] = (1, 2, 2)


@dataclass(frozen=True)
class LossWeights:
    """Веса слагаемых полной цели."""

    lambda_cyc: float = 10.0
    lambda_perc: float = 0.0
    lambda_adv: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cyc", "lambda_perc", "lambda_adv"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} должен быть неотрицательным, получено {value}")


class FeatureExtractor:
    """
    Фиксированная сверточная пирамида из трех стадий со случайными весами.

    Веса порождаются из seed и не обучаются; отводы берутся после каждой
    стадии (свертка 3x3 + ReLU). Используется перцептивной потерей и
    как экстрактор признаков для KID/FID.
    """

    def __init__(self, seed: int = 1234, widths: Sequence[int] = EXTRACTOR_WIDTHS):
        self.seed = int(seed)
        self.widths = tuple(int(w) for w in widths)
        rng = np.random.default_rng(self.seed)
        self._layers: List[Tuple[Tensor, Tensor, int]] = []
        in_channels = 3
        for width, stride in zip(self.widths, EXTRACTOR_STRIDES):
            fan_in = in_channels * 9
            weight = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(width, in_channels, 3, 3))
            weight.setflags(write=False)
            bias = np.zeros(width, dtype=DTYPE)
            bias.setflags(write=False)
            self._layers.append((Tensor(weight), Tensor(bias), stride))
            in_channels = width

    @property
    def extractor_id(self) -> str:
        return f"conv-pyramid-{'-'.join(map(str, self.widths))}/seed={self.seed}"

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def taps(self, x: Tensor) -> List[Tensor]:
        """
        Признаки после каждой стадии.

        Args:
            x: Изображения [b, 3, H, W]

        Returns:
            Список из трех тензоров [b, w_i, H_i, W_i]
        """
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"Экстрактор ожидает [b, 3, H, W], получено {x.shape}")
        outputs = []
        h = x
        for weight, bias, stride in self._layers:
            h = relu(conv2d(h, weight, bias, stride=stride, pad=1))
            outputs.append(h)
        return outputs

    def pooled(self, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """
        Глобально усредненные признаки последней стадии.

        Args:
            images: Массив [m, 3, H, W]
            batch_size: Размер порции для прямого прохода

        Returns:
            Матрица [m, feature_dim]
        """
        images = np.asarray(images, dtype=DTYPE)
        if images.ndim != 4 or images.shape[1] != 3:
            raise DimensionError(f"Ожидается массив [m, 3, H, W], получено {images.shape}")
        chunks = []
        for start in range(0, images.shape[0], batch_size):
            last = self.taps(Tensor(images[start:start + batch_size]))[-1]
            chunks.append(last.data.mean(axis=(2, 3)))
        if not chunks:
            return np.zeros((0, self.feature_dim), dtype=DTYPE)
        return np.concatenate(chunks, axis=0)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: формы {a.shape} и {b.shape} не совпадают")


def loss_G(fake_scores: Tensor) -> Tensor:
    """LSGAN-потеря генератора: mean((D(G(x)) - 1)^2)."""
    return mean(square(sub(fake_scores, 1.0)))


def loss_D(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """
    LSGAN-потеря дискриминатора: mean((D(y) - 1)^2) + mean(D(G(x))^2).

    Оценки подделок должны быть получены на отсоединенном выходе генератора.
    """
    return add(mean(square(sub(real_scores, 1.0))), mean(square(fake_scores)))


def loss_cycle(x: Tensor, x_rec: Tensor, y: Tensor, y_rec: Tensor) -> Tensor:
    """L1 (попиксельное среднее) в обоих направлениях: |F(G(x)) - x| + |G(F(y)) - y|."""
    _check_same_shape("loss_cycle", x, x_rec)
    _check_same_shape("loss_cycle", y, y_rec)
    return add(mean(abs_(sub(x_rec, x))), mean(abs_(sub(y_rec, y))))


def loss_perceptual(x: Tensor, x_rec: Tensor, extractor: FeatureExtractor) -> Tensor:
    """
    Сумма по отводам экстрактора среднеквадратичных разностей признаков.

    Args:
        x: Исходные изображения
        x_rec: Реконструкции
        extractor: Фиксированный экстрактор признаков
    """
    _check_same_shape("loss_perceptual", x, x_rec)
    total = None
    for original, reconstructed in zip(extractor.taps(x), extractor.taps(x_rec)):
        term = mean(square(sub(reconstructed, original)))
        total = term if total is None else add(total, term)
    return total


def generator_objective(
    loss_g: Scalar,
    loss_f: Scalar,
    cycle: Scalar,
    perceptual: Scalar,
    weights: LossWeights,
) -> Scalar:
    """Часть полной цели, оптимизируемая генераторами."""
    objective = weights.lambda_adv * (loss_g + loss_f) + weights.lambda_cyc * cycle
    if weights.lambda_perc > 0:
        objective = objective + weights.lambda_perc * perceptual
    return objective


def loss_total(
    loss_g: Scalar,
    loss_f: Scalar,
    loss_dx: Scalar,
    loss_dy: Scalar,
    cycle: Scalar,
    perceptual: Scalar,
    weights: LossWeights,
) -> Scalar:
    """
    Полная цель: lambda_adv*(L_G + L_F) + L_DX + L_DY + lambda_cyc*L_cyc + lambda_perc*L_perc.

    Компоненты могут быть тензорами или числами.
    """
    total = generator_objective(loss_g, loss_f, cycle, perceptual, weights)
    return total + loss_dx + loss_dy


def mean_abs(a: np.ndarray, b: np.ndarray) -> float:
    """Среднее абсолютное отклонение двух массивов, без графа."""
    a, b = np.asarray(a, dtype=DTYPE), np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimensionError(f"mean_abs: формы {a.shape} и {b.shape} не совпадают")
    return float(np.abs(a - b).mean())
