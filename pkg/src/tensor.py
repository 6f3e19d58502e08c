"""
Минимальный плотный тензор с обратным режимом автоматического дифференцирования.

Каждая операция - подкласс Function с методами forward/backward. Граф
строится во время прямого прохода, backward() обходит его в обратном
топологическом порядке и аддитивно накапливает градиенты в листьях.
Все данные хранятся в float64.
"""
from __future__ import annotations

import contextlib
import math
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from src.errors import DimensionError

DTYPE = np.float64
LAYERNORM_EPS = 1e-5
INSTANCE_NORM_EPS = 1e-5

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class ActivationCounter:
    """
    Счетчик активаций, сохраненных операциями для обратного прохода.

    Учитываются только промежуточные массивы: тензоры-листья (параметры и
    входы) не считаются. Один и тот же массив учитывается один раз.
    """

    def __init__(self):
        self._seen: Dict[int, np.ndarray] = {}
        self.floats = 0

    @property
    def arrays(self) -> int:
        return len(self._seen)

    def record(self, array: np.ndarray) -> None:
        key = id(array)
        if key in self._seen:
            return
        # Держим ссылку, чтобы id не переиспользовался до конца подсчета
        self._seen[key] = array
        self.floats += int(array.size)


_active_counter: Optional[ActivationCounter] = None


@contextlib.contextmanager
def count_activations() -> Iterator[ActivationCounter]:
    """
    Контекст, в котором все сохраненные для backward массивы подсчитываются.

    Yields:
        ActivationCounter с накопленным числом float
    """
    global _active_counter
    previous = _active_counter
    counter = ActivationCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = previous


class Function:
    """Базовый класс дифференцируемой операции."""

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors
        self.saved: Tuple[Any, ...] = ()

    def save_for_backward(self, *items: Any) -> None:
        """
        Сохраняет тензоры/массивы, нужные для backward.

        Args:
            items: Tensor или np.ndarray; листья не попадают в счетчик активаций
        """
        self.saved = items
        if _active_counter is None:
            return
        for item in items:
            if isinstance(item, Tensor):
                if not item.is_leaf:
                    _active_counter.record(item.data)
            elif isinstance(item, np.ndarray):
                _active_counter.record(item)

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("forward не реализован")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("backward не реализован")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=requires_grad, creator=func if requires_grad else None)
        result.is_leaf = False
        return result


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Суммирует градиент по осям, которые были размножены broadcasting-ом."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Плотный N-мерный массив float64, участвующий в графе autodiff."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.creator = creator
        self.name = name
        # Листья создаются пользователем; результаты операций помечает Function.apply
        self.is_leaf = True
        # Градиент хранится только у листьев, требующих градиента
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if requires_grad and creator is None else None
        )

    def __repr__(self):
        label = f", name={self.name}" if self.name else ""
        return f"<Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() возможен только для скаляра, форма {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        if self.requires_grad and self.creator is None:
            self.grad = np.zeros_like(self.data)

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Обратный проход от этого тензора.

        Args:
            grad: Начальный градиент; для скаляра по умолчанию 1

        Raises:
            DimensionError: Если тензор не скалярный и grad не передан
        """
        if not self.requires_grad:
            return
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward без grad возможен только для скаляра, форма {self.shape}"
                )
            grad = np.ones_like(self.data)
        grads: Dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}

        for node in reversed(self._topological_order()):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node.creator is None:
                node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
                continue
            parent_grads = node.creator.backward(node_grad)
            for parent, parent_grad in zip(node.creator.tensors, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.shape:
                    raise DimensionError(
                        f"{type(node.creator).__name__}: форма градиента {parent_grad.shape} "
                        f"не совпадает с формой тензора {parent.shape}"
                    )
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    # Операторы
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return sum_(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Создает лист графа, требующий градиента."""
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# --- Поэлементные операции ---------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.save_for_backward(*self.tensors)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: несовместимые формы {a.shape} и {b.shape}")


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return Mul.apply(a, b)


class Square(Function):
    def forward(self, x):
        self.save_for_backward(self.tensors[0])
        return x * x

    def backward(self, grad):
        (x,) = self.saved
        return (2.0 * x.data * grad,)


class Abs(Function):
    def forward(self, x):
        self.save_for_backward(self.tensors[0])
        return np.abs(x)

    def backward(self, grad):
        (x,) = self.saved
        return (np.sign(x.data) * grad,)


class Gelu(Function):
    """GELU на точной функции распределения: x * Phi(x)."""

    def forward(self, x):
        self.save_for_backward(self.tensors[0])
        return x * _normal_cdf(x)

    def backward(self, grad):
        (x,) = self.saved
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        return ((_normal_cdf(x.data) + x.data * pdf) * grad,)


def _normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


class Relu(Function):
    def forward(self, x):
        self.save_for_backward(self.tensors[0])
        return np.maximum(x, 0.0)

    def backward(self, grad):
        (x,) = self.saved
        return (np.where(x.data > 0, grad, 0.0),)


class LeakyRelu(Function):
    def forward(self, x, slope=0.2):
        self.slope = slope
        self.save_for_backward(self.tensors[0])
        return np.where(x > 0, x, slope * x)

    def backward(self, grad):
        (x,) = self.saved
        return (np.where(x.data > 0, grad, self.slope * grad),)


class Tanh(Function):
    def forward(self, x):
        out = np.tanh(x)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return ((1.0 - out * out) * grad,)


def square(x: Tensor) -> Tensor:
    return Square.apply(x)


def abs_(x: Tensor) -> Tensor:
    return Abs.apply(x)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return LeakyRelu.apply(x, slope=slope)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


# --- Редукции и перестановки -------------------------------------------------

class Sum(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.mean())

    def backward(self, grad):
        return (np.broadcast_to(grad / float(np.prod(self.shape)), self.shape).copy(),)


class Reshape(Function):
    def forward(self, x, shape=()):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Permute(Function):
    def forward(self, x, axes=()):
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(np.transpose(x, axes))

    def backward(self, grad):
        return (np.ascontiguousarray(np.transpose(grad, self.inverse)),)


def sum_(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise DimensionError("mean пустого тензора")
    return Mean.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: нельзя привести форму {x.shape} к {shape}")
    return Reshape.apply(x, shape=shape)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: оси {axes} не подходят для формы {x.shape}")
    return Permute.apply(x, axes=axes)


def transpose(x: Tensor) -> Tensor:
    """Транспонирование двух последних осей."""
    if x.ndim < 2:
        raise DimensionError(f"transpose требует минимум 2 оси, форма {x.shape}")
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


# --- Матричные операции -----------------------------------------------------

class MatMul(Function):
    def forward(self, a, b):
        self.save_for_backward(*self.tensors)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        grad_a = grad_b = None
        if a.requires_grad:
            grad_a = unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            grad_b = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape)
        return grad_a, grad_b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Матричное произведение; ведущие (батчевые) оси размножаются.

    Raises:
        DimensionError: Если внутренние размеры не совпадают
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: несовместимые формы {a.shape} и {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: несовместимые батчевые оси {a.shape} и {b.shape}")
    return MatMul.apply(a, b)


class Linear(Function):
    """y = x @ W^T + b, веса хранятся как [out, in]."""

    def forward(self, x, weight, bias):
        self.save_for_backward(self.tensors[0], self.tensors[1])
        return np.matmul(x, weight.T) + bias

    def backward(self, grad):
        x, weight = self.saved
        grad2 = grad.reshape(-1, grad.shape[-1])
        grad_x = np.matmul(grad, weight.data)
        grad_w = grad2.T @ x.data.reshape(-1, x.shape[-1])
        grad_b = grad2.sum(axis=0)
        return grad_x, grad_w, grad_b


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"linear: вход {x.shape}, веса {weight.shape}, смещение {bias.shape} несовместимы"
        )
    return Linear.apply(x, weight, bias)


# --- Нормализации ------------------------------------------------------------

class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps=LAYERNORM_EPS):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        rstd = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mu) * rstd
        self.save_for_backward(x_hat, rstd, self.tensors[1])
        return x_hat * gamma + beta

    def backward(self, grad):
        x_hat, rstd, gamma = self.saved
        lead = tuple(range(grad.ndim - 1))
        grad_gamma = (grad * x_hat).sum(axis=lead)
        grad_beta = grad.sum(axis=lead)
        d_hat = grad * gamma.data
        grad_x = rstd * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """
    Нормализация каждой строки (токена) по оси каналов.

    Args:
        x: Тензор [..., c]
        gamma, beta: Аффинные параметры формы [c]
        eps: Добавка к дисперсии
    """
    c = x.shape[-1] if x.ndim else 0
    if c < 1 or gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layernorm: вход {x.shape}, gamma {gamma.shape}, beta {beta.shape} несовместимы"
        )
    return LayerNorm.apply(x, gamma, beta, eps=eps)


class InstanceNorm(Function):
    def forward(self, x, eps=INSTANCE_NORM_EPS):
        mu = x.mean(axis=(2, 3), keepdims=True)
        var = ((x - mu) ** 2).mean(axis=(2, 3), keepdims=True)
        rstd = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mu) * rstd
        self.save_for_backward(x_hat, rstd)
        return x_hat

    def backward(self, grad):
        x_hat, rstd = self.saved
        grad_x = rstd * (
            grad
            - grad.mean(axis=(2, 3), keepdims=True)
            - x_hat * (grad * x_hat).mean(axis=(2, 3), keepdims=True)
        )
        return (grad_x,)


def instance_norm(x: Tensor, eps: float = INSTANCE_NORM_EPS) -> Tensor:
    """Нормализация каждой пары (образец, канал) по пространственным осям, без аффинных параметров."""
    if x.ndim != 4:
        raise DimensionError(f"instance_norm ожидает [b, c, H, W], получено {x.shape}")
    return InstanceNorm.apply(x, eps=eps)


# --- Свертки -----------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int, pad: int, out_h: int, out_w: int) -> np.ndarray:
    """[b, c, H, W] -> матрица окон [b*out_h*out_w, c*k*k]."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    b, c = x.shape[:2]
    windows = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * out_h * out_w, c * kernel * kernel)


def _col2im(
    dcols: np.ndarray,
    shape: Tuple[int, ...],
    kernel: int,
    stride: int,
    pad: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Сопряженная к _im2col операция: [b*oh*ow, c*k*k] -> [b, c, H, W]."""
    b, c, height, width = shape
    windows = dcols.reshape(b, out_h, out_w, c, kernel, kernel)
    xp = np.zeros((b, c, height + 2 * pad, width + 2 * pad), dtype=DTYPE)
    for i in range(kernel):
        for j in range(kernel):
            xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                windows[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return xp[:, :, pad:pad + height, pad:pad + width]


def _rows(grad_out: np.ndarray) -> np.ndarray:
    """[b, o, oh, ow] -> [b*oh*ow, o]."""
    return grad_out.transpose(0, 2, 3, 1).reshape(-1, grad_out.shape[1])


def _apply_kernel(cols: np.ndarray, weight: np.ndarray, b: int, out_h: int, out_w: int) -> np.ndarray:
    """cols [b*oh*ow, c*k*k] x weight [o, c, k, k] -> [b, o, oh, ow]."""
    out = cols @ weight.reshape(weight.shape[0], -1).T
    return np.ascontiguousarray(out.reshape(b, out_h, out_w, -1).transpose(0, 3, 1, 2))


def _kernel_grad(grad_out: np.ndarray, cols: np.ndarray, weight_shape: Tuple[int, ...]) -> np.ndarray:
    """grad_out [b, o, oh, ow] x cols [b*oh*ow, c*k*k] -> [o, c, k, k]."""
    return (_rows(grad_out).T @ cols).reshape(weight_shape)


def _spread_kernel(grad_out: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """grad_out [b, o, oh, ow] x weight [o, c, k, k] -> dcols [b*oh*ow, c*k*k]."""
    return _rows(grad_out) @ weight.reshape(weight.shape[0], -1)


class Conv2d(Function):
    def forward(self, x, weight, bias, stride=1, pad=0):
        self.stride, self.pad = stride, pad
        self.x_shape = x.shape
        kernel = weight.shape[-1]
        out_h = conv_output_size(x.shape[2], kernel, stride, pad)
        out_w = conv_output_size(x.shape[3], kernel, stride, pad)
        self.out_hw = (out_h, out_w)
        cols = _im2col(x, kernel, stride, pad, out_h, out_w)
        self.save_for_backward(cols, self.tensors[1])
        return _apply_kernel(cols, weight, x.shape[0], out_h, out_w) + bias[None, :, None, None]

    def backward(self, grad):
        cols, weight = self.saved
        kernel = weight.shape[-1]
        grad_x = None
        if self.tensors[0].requires_grad:
            grad_x = _col2im(
                _spread_kernel(grad, weight.data), self.x_shape, kernel, self.stride, self.pad, *self.out_hw
            )
        return grad_x, _kernel_grad(grad, cols, weight.shape), grad.sum(axis=(0, 2, 3))


class Conv2dTranspose(Function):
    def forward(self, x, weight, bias, stride=1, pad=0, output_padding=0):
        self.stride, self.pad = stride, pad
        kernel = weight.shape[-1]
        out_h = (x.shape[2] - 1) * stride - 2 * pad + kernel + output_padding
        out_w = (x.shape[3] - 1) * stride - 2 * pad + kernel + output_padding
        self.save_for_backward(self.tensors[0], self.tensors[1])
        out_shape = (x.shape[0], weight.shape[1], out_h, out_w)
        dcols = _spread_kernel(x, weight)
        return _col2im(dcols, out_shape, kernel, stride, pad, x.shape[2], x.shape[3]) + bias[None, :, None, None]

    def backward(self, grad):
        x, weight = self.saved
        kernel = weight.shape[-1]
        b, _, height, width = x.shape
        cols = _im2col(grad, kernel, self.stride, self.pad, height, width)
        grad_x = _apply_kernel(cols, weight.data, b, height, width) if x.requires_grad else None
        return grad_x, _kernel_grad(x.data, cols, weight.shape), grad.sum(axis=(0, 2, 3))


def _check_conv(op: str, x: Tensor, weight: Tensor, bias: Tensor, in_axis: int, out_axis: int, stride: int, pad: int) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"{op}: ожидаются 4D вход и ядро, получено {x.shape} и {weight.shape}")
    if weight.shape[2] != weight.shape[3] or weight.shape[2] < 1:
        raise DimensionError(f"{op}: ядро должно быть квадратным, получено {weight.shape}")
    if x.shape[1] != weight.shape[in_axis]:
        raise DimensionError(f"{op}: каналы входа {x.shape} не совпадают с ядром {weight.shape}")
    if bias.shape != (weight.shape[out_axis],):
        raise DimensionError(f"{op}: смещение {bias.shape} не подходит к ядру {weight.shape}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"{op}: недопустимые stride={stride}, pad={pad}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Свертка (кросс-корреляция) с нулевым дополнением.

    Args:
        x: Вход [b, c_in, H, W]
        weight: Ядро [c_out, c_in, k, k]
        bias: Смещение [c_out]
        stride: Шаг
        pad: Дополнение с каждой стороны

    Returns:
        Тензор [b, c_out, H', W'], H' = floor((H + 2*pad - k) / stride) + 1

    Raises:
        DimensionError: При недопустимой геометрии
    """
    _check_conv("conv2d", x, weight, bias, 1, 0, stride, pad)
    kernel = weight.shape[-1]
    if x.shape[2] + 2 * pad < kernel or x.shape[3] + 2 * pad < kernel:
        raise DimensionError(
            f"conv2d: вход {x.shape} с pad={pad} меньше ядра {kernel}x{kernel}"
        )
    return Conv2d.apply(x, weight, bias, stride=stride, pad=pad)


def conv2d_transpose(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    stride: int = 1,
    pad: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """
    Транспонированная свертка - точная сопряженная к conv2d с той же геометрией.

    Args:
        x: Вход [b, c_in, H, W]
        weight: Ядро [c_in, c_out, k, k] (то же, что у conv2d c_out -> c_in)
        bias: Смещение [c_out]
        output_padding: Дополнительные строки/столбцы снизу и справа, < stride

    Returns:
        Тензор [b, c_out, (H-1)*stride - 2*pad + k + output_padding, ...]
    """
    _check_conv("conv2d_transpose", x, weight, bias, 0, 1, stride, pad)
    if not 0 <= output_padding < stride:
        raise DimensionError(
            f"conv2d_transpose: output_padding={output_padding} должен быть меньше stride={stride}"
        )
    kernel = weight.shape[-1]
    out_h = (x.shape[2] - 1) * stride - 2 * pad + kernel + output_padding
    out_w = (x.shape[3] - 1) * stride - 2 * pad + kernel + output_padding
    if out_h < 1 or out_w < 1 or kernel - 1 < pad:
        raise DimensionError(
            f"conv2d_transpose: недопустимая геометрия для входа {x.shape}, k={kernel}, pad={pad}"
        )
    return Conv2dTranspose.apply(
        x, weight, bias, stride=stride, pad=pad, output_padding=output_padding
    )
