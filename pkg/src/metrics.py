"""
Метрики качества перевода: KID (несмещенная оценка квадрата MMD с
полиномиальным ядром) и FID (расстояние Фреше между гауссианами).

Экстрактор признаков подключаемый; по умолчанию используется та же
фиксированная сверточная пирамида, что и в перцептивной потере.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from loguru import logger

from src.data_io import ImageRecord, stack_pixels
from src.errors import DimensionError, ValidationError
from src.losses import FeatureExtractor

KERNEL_DEGREE = 3
PSD_TOLERANCE = 1e-10
REPORT_CSV_HEADER = (
    "kid_mean_x100",
    "kid_std_x100",
    "fid",
    "kernel_degree",
    "subset_size",
    "n_subsets",
    "seed",
    "extractor",
    "real_count",
    "fake_count",
    "zero_variance",
)


@dataclass
class FeatureSet:
    """Матрица признаков [m, d] с указанием происхождения."""

    features: np.ndarray
    extractor_id: str = "external"
    seed: Optional[int] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionError(f"Признаки должны быть матрицей [m, d], получено {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ValidationError("Признаки содержат NaN/Inf")
        self.features = features

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def zero_variance(self) -> bool:
        """Все признаки постоянны по выборке."""
        return bool(self.count > 0 and np.all(np.ptp(self.features, axis=0) == 0))


def _pair(real: FeatureSet, fake: FeatureSet) -> None:
    if real.dim != fake.dim:
        raise DimensionError(f"Размерности признаков не совпадают: {real.dim} и {fake.dim}")


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """k(x, y) = (x^T y / d + 1)^3 для всех пар строк."""
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** KERNEL_DEGREE


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """
    Несмещенная оценка MMD^2 между выборками x [m, d] и y [n, d].

    Перекрестный член усредняется по k(x, y) и k(y, x), поэтому оценка
    точно симметрична относительно перестановки аргументов.
    """
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ValidationError(f"Для MMD нужно минимум по 2 образца, получено {m} и {n}")
    k_xx = polynomial_kernel(x, x)
    k_yy = polynomial_kernel(y, y)
    term_x = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    term_y = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    cross = 0.5 * (polynomial_kernel(x, y).mean() + polynomial_kernel(y, x).mean())
    return float((term_x + term_y) - 2.0 * cross)


def _subset(count: int, subset_size: int, seed: int, index: int, role: int) -> np.ndarray:
    if subset_size == count:
        return np.arange(count)
    rng = np.random.default_rng([seed, index, role])
    return rng.choice(count, size=subset_size, replace=False)


def kid(
    real: FeatureSet,
    fake: FeatureSet,
    subset_size: int = 50,
    n_subsets: int = 10,
    seed: int = 0,
) -> Tuple[float, float]:
    """
    KID: среднее и стандартное отклонение MMD^2 по случайным подмножествам.

    Подмножество k выбирается генератором default_rng([seed, k, 0]) для
    real и default_rng([seed, k, 1]) для fake; при subset_size == m
    берутся все образцы в исходном порядке.

    Returns:
        (mean, std) без масштабирования x100

    Raises:
        ValidationError: subset_size больше числа образцов или меньше 2
    """
    _pair(real, fake)
    if subset_size < 2:
        raise ValidationError(f"subset_size должен быть >= 2, получено {subset_size}")
    if n_subsets < 1:
        raise ValidationError(f"n_subsets должно быть >= 1, получено {n_subsets}")
    available = min(real.count, fake.count)
    if subset_size > available:
        raise ValidationError(
            f"subset_size={subset_size} больше числа образцов (real={real.count}, fake={fake.count})"
        )
    estimates = np.array([
        mmd2_unbiased(
            real.features[_subset(real.count, subset_size, seed, k, 0)],
            fake.features[_subset(fake.count, subset_size, seed, k, 1)],
        )
        for k in range(n_subsets)
    ])
    std = float(estimates.std(ddof=1)) if n_subsets > 1 else 0.0
    return float(estimates.mean()), std


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """
    Корень симметричной PSD матрицы.

    Отрицательные собственные числа в пределах PSD_TOLERANCE от наибольшего
    по модулю считаются шумом округления и обнуляются.

    Raises:
        ValidationError: Матрица заметно не положительно полуопределена
    """
    eigenvalues, vectors = scipy.linalg.eigh((matrix + matrix.T) / 2.0)
    scale = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    lowest = float(eigenvalues.min()) if eigenvalues.size else 0.0
    if lowest < -PSD_TOLERANCE * scale:
        raise ValidationError(
            f"Ковариация не положительно полуопределена: собственное число {lowest:.3e} при масштабе {scale:.3e}"
        )
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (vectors * np.sqrt(eigenvalues)) @ vectors.T


def fid_from_statistics(mu_r: np.ndarray, sigma_r: np.ndarray, mu_f: np.ndarray, sigma_f: np.ndarray) -> float:
    """
    ||mu_r - mu_f||^2 + tr(S_r + S_f - 2 (S_r S_f)^{1/2}).

    tr (S_r S_f)^{1/2} считается как сумма сингулярных чисел sqrt(S_r) sqrt(S_f).

    Raises:
        DimensionError: Несовместимые формы статистик
        ValidationError: Ковариация с заметно отрицательным собственным числом
    """
    mu_r, mu_f = np.atleast_1d(mu_r), np.atleast_1d(mu_f)
    sigma_r, sigma_f = np.atleast_2d(sigma_r), np.atleast_2d(sigma_f)
    if mu_r.shape != mu_f.shape or sigma_r.shape != sigma_f.shape or sigma_r.shape != (mu_r.size, mu_r.size):
        raise DimensionError(
            f"Несовместимые статистики: mu {mu_r.shape}/{mu_f.shape}, sigma {sigma_r.shape}/{sigma_f.shape}"
        )
    trace_sqrt = float(np.sum(scipy.linalg.svdvals(_sqrt_psd(sigma_r) @ _sqrt_psd(sigma_f))))
    diff = mu_r - mu_f
    value = float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_f) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def fid(real: FeatureSet, fake: FeatureSet) -> float:
    """
    FID между двумя наборами признаков; ковариация с нормировкой 1/(m-1).

    Raises:
        ValidationError: Меньше двух образцов в наборе
    """
    _pair(real, fake)
    if real.count < 2 or fake.count < 2:
        raise ValidationError(f"Для FID нужно минимум 2 образца, получено {real.count} и {fake.count}")
    if real.count <= real.dim or fake.count <= fake.dim:
        logger.warning("Образцов не больше размерности признаков, ковариация вырождена", real=real.count, fake=fake.count, dim=real.dim)
    return fid_from_statistics(
        real.features.mean(axis=0),
        np.cov(real.features, rowvar=False),
        fake.features.mean(axis=0),
        np.cov(fake.features, rowvar=False),
    )


def extract_features(
    images: Union[np.ndarray, Sequence[ImageRecord]],
    extractor: Optional[FeatureExtractor] = None,
) -> FeatureSet:
    """
    Признаки изображений: глобальное среднее последней стадии экстрактора.

    Raises:
        DimensionError: Изображения не имеют форму [m, 3, H, W]
        ValidationError: Значения вне [-1, 1]
    """
    if extractor is None:
        extractor = FeatureExtractor()
    if not isinstance(images, np.ndarray):
        images = stack_pixels(list(images))
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1] != 3:
        raise DimensionError(f"Ожидается [m, 3, H, W], получено {images.shape}")
    if images.size and (images.min() < -1.0 or images.max() > 1.0):
        raise ValidationError("Значения изображений должны лежать в [-1, 1]")
    return FeatureSet(extractor.pooled(images), extractor.extractor_id, extractor.seed)


@dataclass
class MetricReport:
    """KID (x100, как в таблицах) и FID вместе со всеми параметрами оценки."""

    kid_mean_x100: float
    kid_std_x100: float
    fid: float
    subset_size: int
    n_subsets: int
    seed: int
    extractor_id: str
    real_count: int
    fake_count: int
    zero_variance: bool = False
    kernel_degree: int = KERNEL_DEGREE

    def text(self) -> str:
        lines = [
            f"KID x100: {self.kid_mean_x100:.2f} ± {self.kid_std_x100:.2f}",
            f"FID: {self.fid:.4f}",
            f"Ядро: полиномиальное степени {self.kernel_degree}, подмножества {self.n_subsets} x {self.subset_size}, seed {self.seed}",
            f"Экстрактор: {self.extractor_id}, образцов real={self.real_count}, fake={self.fake_count}",
        ]
        if self.zero_variance:
            lines.append("Внимание: признаки имеют нулевую дисперсию")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_CSV_HEADER)
        writer.writerow([
            format(self.kid_mean_x100, ".17g"),
            format(self.kid_std_x100, ".17g"),
            format(self.fid, ".17g"),
            self.kernel_degree,
            self.subset_size,
            self.n_subsets,
            self.seed,
            self.extractor_id,
            self.real_count,
            self.fake_count,
            int(self.zero_variance),
        ])
        return buffer.getvalue()


def metric_report(
    real: FeatureSet,
    fake: FeatureSet,
    subset_size: int = 50,
    n_subsets: int = 10,
    seed: int = 0,
) -> MetricReport:
    kid_mean, kid_std = kid(real, fake, subset_size, n_subsets, seed)
    report = MetricReport(
        kid_mean_x100=100.0 * kid_mean,
        kid_std_x100=100.0 * kid_std,
        fid=fid(real, fake),
        subset_size=subset_size,
        n_subsets=n_subsets,
        seed=seed,
        extractor_id=real.extractor_id,
        real_count=real.count,
        fake_count=fake.count,
        zero_variance=real.zero_variance or fake.zero_variance,
    )
    if report.zero_variance:
        logger.warning("Признаки с нулевой дисперсией", extractor=real.extractor_id)
    return report
