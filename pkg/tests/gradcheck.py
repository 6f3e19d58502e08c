"""
Проверка градиентов центральными разностями (float64, eps=1e-5).

Ошибка считается векторно: ||a - n|| / max(||a||, ||n||) по выбранным
координатам всех проверяемых тензоров.
"""
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.tensor import Abs, LeakyRelu, Relu, Tensor

EPS = 1e-5
KINK_OPS = (Relu, LeakyRelu, Abs)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def kink_pattern(loss: Tensor) -> List[np.ndarray]:
    """Знаки входов кусочно-линейных операций в графе потери."""
    return [
        node.creator.tensors[0].data > 0
        for node in loss._topological_order()
        if isinstance(node.creator, KINK_OPS)
    ]


def _same_pattern(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    samples: Optional[int] = None,
    seed: int = 0,
    skip_kinks: bool = False,
) -> float:
    """
    Сравнивает backward с численным градиентом.

    Args:
        loss_fn: Строит скалярную потерю по текущим значениям tensors
        tensors: Листья с requires_grad=True
        samples: Число координат на тензор (None - все)
        skip_kinks: Пропускать координаты, для которых сдвиг на +-eps
            меняет ветвь ReLU/LeakyReLU/abs; вместо них берутся другие

    Returns:
        Относительная ошибка по всем выбранным координатам
    """
    for tensor in tensors:
        tensor.zero_grad()
    loss_fn().backward()
    analytic = [tensor.grad.copy() for tensor in tensors]

    rng = np.random.default_rng(seed)
    picked_analytic, picked_numeric = [], []
    for tensor, grad in zip(tensors, analytic):
        flat = tensor.data.reshape(-1)
        wanted = flat.size if samples is None else min(samples, flat.size)
        order = np.arange(flat.size) if samples is None else rng.permutation(flat.size)
        accepted = 0
        for index in order:
            if accepted == wanted:
                break
            original = flat[index]
            flat[index] = original + EPS
            plus = loss_fn()
            flat[index] = original - EPS
            minus = loss_fn()
            flat[index] = original
            if skip_kinks and not _same_pattern(kink_pattern(plus), kink_pattern(minus)):
                continue
            picked_numeric.append((plus.item() - minus.item()) / (2 * EPS))
            picked_analytic.append(grad.reshape(-1)[index])
            accepted += 1
    return relative_error(np.array(picked_analytic), np.array(picked_numeric))
