"""
Модель стоимости блоков: точное число параметров и сохраняемых для
обратного прохода активаций (float) для self-attention, token-mixing MLP
и сверточного residual-блока.

Учет активаций:
  self-attention: Q, K, V и контекст (по b*n*c), логиты и softmax
                  (по h*b*n^2): 4bnc + 2hbn^2
  token-mixer:    нормированный вход x_hat и выход LayerNorm (по b*n*c),
                  1/std на токен (b*n), скрытый слой до и после GELU
                  (по e*b*n*c): 2bnc + bn + 2ebnc
  conv-residual:  карты признаков двух слоев: 2bnc
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, List, Sequence

import numpy as np

from src.errors import ValidationError
from src.network import MixerBlockParams, token_mixing
from src.tensor import Tensor, count_activations

KINDS = ("self-attention", "token-mixer", "conv-residual")
KIND_ALIASES = {"sa": "self-attention", "tm": "token-mixer", "conv": "conv-residual"}
SWEEP_AXES = ("n", "c", "b", "h")
CSV_HEADER = ("kind", "axis", "value", "params", "activation_floats")

ASYMPTOTICS = {
    "self-attention": "params O(hc^2), activations O(hbn^2 + bnc)",
    "token-mixer": "params O(n^2), activations O(bnc)",
    "conv-residual": "params O(k^2c^2), activations O(bnc)",
}


@dataclass(frozen=True)
class BlockSpec:
    """Описание блока: число токенов n, каналов c, голов h, батч b, ядро k."""

    kind: str = "token-mixer"
    n: int = 64
    c: int = 128
    h: int = 8
    b: int = 1
    k: int = 3
    token_expansion: int = 2
    channel_expansion: int = 2

    def validated(self) -> "BlockSpec":
        kind = KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValidationError(f"Неизвестный тип блока: {self.kind}")
        for name in ("n", "c", "h", "b", "k", "token_expansion", "channel_expansion"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} должен быть >= 1, получено {getattr(self, name)}")
        if kind == "self-attention" and self.c % self.h:
            raise ValidationError(f"c={self.c} не делится на число голов h={self.h}")
        return replace(self, kind=kind)


@dataclass(frozen=True)
class CostReport:
    spec: BlockSpec
    parameter_count: int
    activation_floats: int
    asymptotic: str


def params_of(spec: BlockSpec) -> int:
    """
    Точное число параметров блока.

    Raises:
        ValidationError: Недопустимое описание (в т.ч. c не делится на h для SA)
    """
    spec = spec.validated()
    n, c, k = spec.n, spec.c, spec.k
    if spec.kind == "self-attention":
        # h голов по три проекции c x (c/h) с bias, плюс выходная c x c с bias
        qkv = spec.h * 3 * (c * (c // spec.h) + c // spec.h)
        return qkv + c * c + c
    if spec.kind == "token-mixer":
        hidden = spec.token_expansion * n
        return n * hidden + hidden + hidden * n + n
    return 2 * (k * k * c * c + c)


def activations_of(spec: BlockSpec) -> int:
    """Точное число float, сохраняемых между прямым и обратным проходом."""
    spec = spec.validated()
    n, c, b = spec.n, spec.c, spec.b
    if spec.kind == "self-attention":
        return 4 * b * n * c + 2 * spec.h * b * n * n
    if spec.kind == "token-mixer":
        return 2 * b * n * c + b * n + 2 * spec.token_expansion * b * n * c
    return 2 * b * n * c


def cost_report(spec: BlockSpec) -> CostReport:
    spec = spec.validated()
    return CostReport(spec, params_of(spec), activations_of(spec), ASYMPTOTICS[spec.kind])


def retention_ratio(patch_size: int, channel_multiplier: float) -> float:
    """
    Доля сохраняемой размерности при проекции патча p x p в m*c каналов: m / p^2.

    Raises:
        ValidationError: p < 1 или m < 1
    """
    if patch_size < 1 or channel_multiplier < 1:
        raise ValidationError(f"Нужны p >= 1 и m >= 1, получено p={patch_size}, m={channel_multiplier}")
    return channel_multiplier / float(patch_size * patch_size)


def sweep(template: BlockSpec, axis: str, values: Sequence[int]) -> List[CostReport]:
    """
    Отчеты по сетке значений одной оси.

    Raises:
        ValidationError: Неизвестная ось или значения не строго возрастают
    """
    if axis not in SWEEP_AXES:
        raise ValidationError(f"Недопустимая ось: {axis}, допустимо: {', '.join(SWEEP_AXES)}")
    values = [int(v) for v in values]
    if not values or any(b <= a for a, b in zip(values, values[1:])):
        raise ValidationError(f"Значения оси {axis} должны строго возрастать: {values}")
    return [cost_report(replace(template, **{axis: value})) for value in values]


def doubling_values(start: int, end: int) -> List[int]:
    """start, 2*start, ... <= end."""
    if start < 1 or end < start:
        raise ValidationError(f"Недопустимый диапазон {start}:{end}")
    values = []
    value = start
    while value <= end:
        values.append(value)
        value *= 2
    return values


def to_csv(axis: str, reports: Iterable[CostReport], header: bool = True) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if header:
        writer.writerow(CSV_HEADER)
    for report in reports:
        writer.writerow([
            report.spec.kind,
            axis,
            getattr(report.spec, axis),
            report.parameter_count,
            report.activation_floats,
        ])
    return buffer.getvalue()


def fit_loglog_slope(values: Sequence[float], counts: Sequence[float]) -> float:
    """Наклон прямой, подогнанной МНК в координатах log-log."""
    x = np.log(np.asarray(values, dtype=np.float64))
    y = np.log(np.asarray(counts, dtype=np.float64))
    if len(x) < 2:
        raise ValidationError("Для наклона нужно минимум два значения")
    return float(np.polyfit(x, y, 1)[0])


def gnuplot_script(csv_name: str, axis: str, output: str = "cost.png") -> str:
    """Скрипт gnuplot: активации и параметры по оси в логарифмическом масштабе."""
    return "\n".join([
        "set datafile separator ','",
        "set terminal pngcairo size 1200,500",
        f"set output '{output}'",
        "set multiplot layout 1,2",
        "set logscale xy",
        f"set xlabel '{axis}'",
        "set key left top",
        "set title 'activation floats'",
        f"plot for [k in 'self-attention token-mixer conv-residual'] '{csv_name}' "
        "using 3:(strcol(1) eq k ? $5 : 1/0) with linespoints title k",
        "set title 'parameters'",
        f"plot for [k in 'self-attention token-mixer conv-residual'] '{csv_name}' "
        "using 3:(strcol(1) eq k ? $4 : 1/0) with linespoints title k",
        "unset multiplot",
        "",
    ])


def instrumented_token_mixing_activations(n: int, c: int, b: int, expansion: int = 2, seed: int = 0) -> int:
    """
    Число float, реально сохраненных половиной mixer-блока, смешивающей
    токены, при прямом проходе на случайном входе [b, n, c].
    """
    rng = np.random.default_rng(seed)
    params = MixerBlockParams.initialize(rng, n, c, expansion, expansion)
    x = Tensor(rng.standard_normal((b, n, c)))
    with count_activations() as counter:
        token_mixing(x, params)
    return counter.floats


def enumerated_token_mixing_params(n: int, c: int, expansion: int = 2) -> int:
    """Число параметров MLP, смешивающего токены, в реальном MixerBlockParams."""
    params = MixerBlockParams.initialize(np.random.default_rng(0), n, c, expansion, expansion)
    return sum(t.size for t in params.token_mixing_parameters())
