"""
Генератор на mixer-блоках и PatchGAN-дискриминатор.

Параметры хранятся в dataclass-контейнерах, которые умеют перечислять
свои тензоры под стабильными иерархическими именами ("blocks/3/token_w1").
Эти имена используются оптимизатором и форматом чекпоинта.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy.stats import truncnorm

from src.errors import DimensionError
from src.tensor import (
    INSTANCE_NORM_EPS,
    LAYERNORM_EPS,
    Tensor,
    add,
    conv2d,
    conv2d_transpose,
    conv_output_size,
    gelu,
    instance_norm,
    layernorm,
    leaky_relu,
    linear,
    matmul,
    parameter,
    permute,
    relu,
    reshape,
    tanh,
    transpose,
)

CONV_INIT_STD = 0.02
MIXER_ORDERS = ("token_first", "channel_first")
DISCRIMINATOR_KINDS = ("patchgan", "mixer")


class ParamContainer:
    """Базовый класс контейнера параметров."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for item in fields(self):
            value = getattr(self, item.name)
            name = f"{prefix}{item.name}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, ParamContainer):
                yield from value.named_parameters(f"{name}/")
            elif isinstance(value, list):
                for index, child in enumerate(value):
                    yield from child.named_parameters(f"{name}/{index}/")

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.parameters())

    def set_requires_grad(self, flag: bool) -> None:
        for tensor in self.parameters():
            tensor.requires_grad = flag
            if flag and tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()


# --- Инициализация ----------------------------------------------------------

def _conv_weight(rng: np.random.Generator, shape: Tuple[int, ...], name: str) -> Tensor:
    values = truncnorm.rvs(-2.0, 2.0, scale=CONV_INIT_STD, size=shape, random_state=rng)
    return parameter(values, name=name)


def _mlp_weight(rng: np.random.Generator, shape: Tuple[int, int], fan_in: int, name: str) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape), name=name)


def _zeros(shape: Tuple[int, ...], name: str) -> Tensor:
    return parameter(np.zeros(shape), name=name)


def _ones(shape: Tuple[int, ...], name: str) -> Tensor:
    return parameter(np.ones(shape), name=name)


# --- Mixer-блок -------------------------------------------------------------

@dataclass
class MixerBlockParams(ParamContainer):
    """
    Веса одного mixer-блока.

    token_w1 [d_hidden_token x n], token_w2 [n x d_hidden_token] смешивают
    токены (столбцы); channel_w3 [d_hidden_chan x c], channel_w4
    [c x d_hidden_chan] смешивают каналы каждого токена.
    """

    ln1_gamma: Tensor
    ln1_beta: Tensor
    token_w1: Tensor
    token_b1: Tensor
    token_w2: Tensor
    token_b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    channel_w3: Tensor
    channel_b3: Tensor
    channel_w4: Tensor
    channel_b4: Tensor

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        tokens: int,
        channels: int,
        token_expansion: int = 2,
        channel_expansion: int = 2,
    ) -> "MixerBlockParams":
        if tokens < 1 or channels < 1 or token_expansion < 1 or channel_expansion < 1:
            raise DimensionError(
                f"Недопустимые размеры mixer-блока: n={tokens}, c={channels}, "
                f"e_token={token_expansion}, e_chan={channel_expansion}"
            )
        hidden_t = token_expansion * tokens
        hidden_c = channel_expansion * channels
        return cls(
            ln1_gamma=_ones((channels,), "ln1_gamma"),
            ln1_beta=_zeros((channels,), "ln1_beta"),
            token_w1=_mlp_weight(rng, (hidden_t, tokens), tokens, "token_w1"),
            token_b1=_zeros((hidden_t,), "token_b1"),
            token_w2=_mlp_weight(rng, (tokens, hidden_t), hidden_t, "token_w2"),
            token_b2=_zeros((tokens,), "token_b2"),
            ln2_gamma=_ones((channels,), "ln2_gamma"),
            ln2_beta=_zeros((channels,), "ln2_beta"),
            channel_w3=_mlp_weight(rng, (hidden_c, channels), channels, "channel_w3"),
            channel_b3=_zeros((hidden_c,), "channel_b3"),
            channel_w4=_mlp_weight(rng, (channels, hidden_c), hidden_c, "channel_w4"),
            channel_b4=_zeros((channels,), "channel_b4"),
        )

    @property
    def tokens(self) -> int:
        return self.token_w1.shape[1]

    @property
    def channels(self) -> int:
        return self.channel_w3.shape[1]

    def token_mixing_parameters(self) -> List[Tensor]:
        """Параметры MLP, смешивающего токены (без LayerNorm)."""
        return [self.token_w1, self.token_b1, self.token_w2, self.token_b2]

    def channel_mixing_parameters(self) -> List[Tensor]:
        return [self.channel_w3, self.channel_b3, self.channel_w4, self.channel_b4]


def _check_tokens(x: Tensor, params: MixerBlockParams) -> None:
    if x.ndim not in (2, 3) or x.shape[-2] != params.tokens or x.shape[-1] != params.channels:
        raise DimensionError(
            f"mixer_block: вход {x.shape} не совпадает с весами "
            f"(n={params.tokens}, c={params.channels})"
        )


def token_mixing_mlp(z: Tensor, params: MixerBlockParams) -> Tensor:
    """W2 . GELU(W1 . Z + b1) + b2 вдоль оси токенов, Z имеет форму [..., n, c]."""
    hidden_t = params.token_w1.shape[0]
    h = add(matmul(params.token_w1, z), reshape(params.token_b1, (hidden_t, 1)))
    out = matmul(params.token_w2, gelu(h))
    return add(out, reshape(params.token_b2, (params.tokens, 1)))


def channel_mixing_mlp(z: Tensor, params: MixerBlockParams) -> Tensor:
    """MLP по каналам каждого токена: GELU(Z W3^T + b3) W4^T + b4."""
    h = linear(z, params.channel_w3, params.channel_b3)
    return linear(gelu(h), params.channel_w4, params.channel_b4)


def token_mixing(x: Tensor, params: MixerBlockParams, eps: float = LAYERNORM_EPS) -> Tensor:
    """U = X + TokenMLP(LayerNorm(X))."""
    _check_tokens(x, params)
    return add(x, token_mixing_mlp(layernorm(x, params.ln1_gamma, params.ln1_beta, eps), params))


def channel_mixing(x: Tensor, params: MixerBlockParams, eps: float = LAYERNORM_EPS) -> Tensor:
    """Y = U + ChannelMLP(LayerNorm(U))."""
    _check_tokens(x, params)
    return add(x, channel_mixing_mlp(layernorm(x, params.ln2_gamma, params.ln2_beta, eps), params))


def mixer_block(
    x: Tensor,
    params: MixerBlockParams,
    order: str = "token_first",
    eps: float = LAYERNORM_EPS,
) -> Tensor:
    """
    Изотропный mixer-блок.

    Args:
        x: Токены [n, c] или батч [b, n, c]
        params: Веса блока
        order: "token_first" (как в MLP-Mixer) или "channel_first"
        eps: eps для LayerNorm

    Returns:
        Тензор той же формы, что и x

    Raises:
        DimensionError: Если размеры не совпадают с весами
    """
    if order == "token_first":
        return channel_mixing(token_mixing(x, params, eps), params, eps)
    if order == "channel_first":
        return token_mixing(channel_mixing(x, params, eps), params, eps)
    raise DimensionError(f"Неизвестный порядок смешивания: {order}")


# --- Проекция патчей ---------------------------------------------------------

def patch_project(features: Tensor, weight: Tensor, bias: Tensor, patch_size: int) -> Tensor:
    """
    Разбивает карту признаков на непересекающиеся патчи p x p и линейно
    проецирует каждый в токен.

    Args:
        features: [b, c, H, W]
        weight: P_in [(p*p*c) x d_token]
        bias: [d_token]
        patch_size: p

    Returns:
        Токены [b, n, d_token], n = (H/p) * (W/p)
    """
    if features.ndim != 4:
        raise DimensionError(f"patch_project ожидает [b, c, H, W], получено {features.shape}")
    b, c, height, width = features.shape
    p = patch_size
    if p < 1 or height % p or width % p:
        raise DimensionError(
            f"patch_project: размер {height}x{width} не делится на размер патча {p}"
        )
    if weight.shape[0] != c * p * p:
        raise DimensionError(
            f"patch_project: проекция {weight.shape} не подходит к патчу {c}x{p}x{p}"
        )
    hp, wp = height // p, width // p
    patches = reshape(features, (b, c, hp, p, wp, p))
    patches = permute(patches, (0, 2, 4, 1, 3, 5))
    tokens = reshape(patches, (b, hp * wp, c * p * p))
    return add(matmul(tokens, weight), bias)


def patch_unproject(
    tokens: Tensor,
    weight: Tensor,
    bias: Tensor,
    patch_size: int,
    grid: Tuple[int, int],
    channels: int,
) -> Tensor:
    """Обратная к patch_project раскладка: [b, n, d] -> [b, c, H, W]."""
    b = tokens.shape[0]
    hp, wp = grid
    p = patch_size
    if tokens.shape[1] != hp * wp or weight.shape[1] != channels * p * p:
        raise DimensionError(
            f"patch_unproject: токены {tokens.shape} и проекция {weight.shape} "
            f"не подходят к сетке {hp}x{wp}"
        )
    flat = add(matmul(tokens, weight), bias)
    patches = reshape(flat, (b, hp, wp, channels, p, p))
    patches = permute(patches, (0, 3, 1, 4, 2, 5))
    return reshape(patches, (b, channels, hp * p, wp * p))


# --- Генератор ----------------------------------------------------------------

@dataclass
class GeneratorParams(ParamContainer):
    """Веса генератора: сверточный stem, mixer-ядро и сверточный декодер."""

    stem_w: Tensor
    stem_b: Tensor
    down1_w: Tensor
    down1_b: Tensor
    down2_w: Tensor
    down2_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    blocks: List[MixerBlockParams]
    unproj_w: Tensor
    unproj_b: Tensor
    up1_w: Tensor
    up1_b: Tensor
    up2_w: Tensor
    up2_b: Tensor
    final_w: Tensor
    final_b: Tensor
    image_size: int = 32
    patch_size: int = 2

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        image_size: int,
        patch_size: int,
        feature_channels: int,
        latent_channels: int,
        mixer_blocks: int,
        token_expansion: int = 2,
        channel_expansion: int = 2,
    ) -> "GeneratorParams":
        """
        Создает генератор со случайными весами.

        Args:
            rng: Генератор случайных чисел
            image_size: Сторона входного изображения, кратна 4p
            patch_size: p
            feature_channels: c_feat после двух понижающих сверток (кратно 4)
            latent_channels: d_token
            mixer_blocks: Количество mixer-блоков

        Raises:
            DimensionError: При недопустимой геометрии
        """
        if feature_channels < 4 or feature_channels % 4:
            raise DimensionError(f"feature_channels={feature_channels} должно быть кратно 4")
        grid = token_grid(image_size, patch_size)
        tokens = grid[0] * grid[1]
        c0 = feature_channels // 4
        c1 = feature_channels // 2
        c2 = feature_channels
        flat = c2 * patch_size * patch_size
        return cls(
            stem_w=_conv_weight(rng, (c0, 3, 7, 7), "stem_w"),
            stem_b=_zeros((c0,), "stem_b"),
            down1_w=_conv_weight(rng, (c1, c0, 3, 3), "down1_w"),
            down1_b=_zeros((c1,), "down1_b"),
            down2_w=_conv_weight(rng, (c2, c1, 3, 3), "down2_w"),
            down2_b=_zeros((c2,), "down2_b"),
            proj_w=_mlp_weight(rng, (flat, latent_channels), flat, "proj_w"),
            proj_b=_zeros((latent_channels,), "proj_b"),
            blocks=[
                MixerBlockParams.initialize(
                    rng, tokens, latent_channels, token_expansion, channel_expansion
                )
                for _ in range(mixer_blocks)
            ],
            unproj_w=_mlp_weight(rng, (latent_channels, flat), latent_channels, "unproj_w"),
            unproj_b=_zeros((flat,), "unproj_b"),
            up1_w=_conv_weight(rng, (c2, c1, 3, 3), "up1_w"),
            up1_b=_zeros((c1,), "up1_b"),
            up2_w=_conv_weight(rng, (c1, c0, 3, 3), "up2_w"),
            up2_b=_zeros((c0,), "up2_b"),
            final_w=_conv_weight(rng, (3, c0, 7, 7), "final_w"),
            final_b=_zeros((3,), "final_b"),
            image_size=image_size,
            patch_size=patch_size,
        )

    @property
    def feature_channels(self) -> int:
        return self.down2_w.shape[0]


def token_grid(image_size: int, patch_size: int) -> Tuple[int, int]:
    """Сетка токенов (H/(4p), W/(4p)) для квадратного изображения."""
    step = 4 * patch_size
    if patch_size < 1 or image_size < step or image_size % step:
        raise DimensionError(
            f"Размер изображения {image_size} должен делиться на 4p = {step}"
        )
    side = image_size // step
    return side, side


def _norm_relu(x: Tensor, eps: float) -> Tensor:
    return relu(instance_norm(x, eps))


def generator_forward(
    x: Tensor,
    params: GeneratorParams,
    order: str = "token_first",
    layernorm_eps: float = LAYERNORM_EPS,
    instance_norm_eps: float = INSTANCE_NORM_EPS,
) -> Tensor:
    """
    Перевод изображения: stem -> 2 понижения -> патчи -> mixer-блоки ->
    обратная раскладка -> 2 повышения -> финальная свертка -> tanh.

    Args:
        x: Изображения [b, 3, H, W] в [-1, 1]
        params: Веса генератора

    Returns:
        Тензор той же формы со значениями в [-1, 1]

    Raises:
        DimensionError: Если геометрия входа не подходит, до любых вычислений
    """
    p = params.patch_size
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"Генератор ожидает [b, 3, H, W], получено {x.shape}")
    height, width = x.shape[2], x.shape[3]
    if height % (4 * p) or width % (4 * p):
        raise DimensionError(
            f"Размер входа {height}x{width} должен делиться на 4p = {4 * p}"
        )
    grid = (height // (4 * p), width // (4 * p))
    if params.blocks and grid[0] * grid[1] != params.blocks[0].tokens:
        raise DimensionError(
            f"Вход {height}x{width} дает {grid[0] * grid[1]} токенов, "
            f"генератор обучен на {params.blocks[0].tokens}"
        )

    h = _norm_relu(conv2d(x, params.stem_w, params.stem_b, stride=1, pad=3), instance_norm_eps)
    h = _norm_relu(conv2d(h, params.down1_w, params.down1_b, stride=2, pad=1), instance_norm_eps)
    h = _norm_relu(conv2d(h, params.down2_w, params.down2_b, stride=2, pad=1), instance_norm_eps)

    tokens = patch_project(h, params.proj_w, params.proj_b, p)
    for block in params.blocks:
        tokens = mixer_block(tokens, block, order, layernorm_eps)
    h = patch_unproject(tokens, params.unproj_w, params.unproj_b, p, grid, params.feature_channels)

    h = _norm_relu(
        conv2d_transpose(h, params.up1_w, params.up1_b, stride=2, pad=1, output_padding=1),
        instance_norm_eps,
    )
    h = _norm_relu(
        conv2d_transpose(h, params.up2_w, params.up2_b, stride=2, pad=1, output_padding=1),
        instance_norm_eps,
    )
    return tanh(conv2d(h, params.final_w, params.final_b, stride=1, pad=3))


# --- Дискриминатор ------------------------------------------------------------

@dataclass
class ConvLayer(ParamContainer):
    weight: Tensor
    bias: Tensor


# (stride, pad, instance norm) для каждой свертки PatchGAN; ядро 4x4
PATCHGAN_LAYOUT: Tuple[Tuple[int, int, bool], ...] = (
    (2, 1, False),
    (2, 1, True),
    (2, 1, True),
    (1, 1, True),
)
PATCHGAN_KERNEL = 4
# Mixer-вариант использует первые три свертки и mixer-блоки вместо остальных
MIXER_DISC_CONVS = 3


@dataclass
class DiscriminatorParams(ParamContainer):
    """
    PatchGAN: три свертки 4x4 со stride 2 (c -> 2c -> 4c), свертка 4x4 со
    stride 1 (8c) и одноканальная голова. Mixer-вариант заменяет последние
    слои mixer-блоками над пространственными позициями.
    """

    convs: List[ConvLayer]
    blocks: List[MixerBlockParams] = field(default_factory=list)
    head_w: Optional[Tensor] = None
    head_b: Optional[Tensor] = None
    kind: str = "patchgan"

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        base_channels: int = 64,
        kind: str = "patchgan",
        image_size: int = 32,
        mixer_blocks: int = 2,
        token_expansion: int = 2,
        channel_expansion: int = 2,
    ) -> "DiscriminatorParams":
        if kind not in DISCRIMINATOR_KINDS:
            raise DimensionError(f"Неизвестный тип дискриминатора: {kind}")
        if base_channels < 1:
            raise DimensionError(f"disc_channels={base_channels} должно быть >= 1")
        widths = [3, base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels]
        k = PATCHGAN_KERNEL
        if kind == "patchgan":
            convs = [
                ConvLayer(
                    _conv_weight(rng, (widths[i + 1], widths[i], k, k), f"conv{i}_w"),
                    _zeros((widths[i + 1],), f"conv{i}_b"),
                )
                for i in range(len(PATCHGAN_LAYOUT))
            ]
            convs.append(ConvLayer(
                _conv_weight(rng, (1, widths[-1], k, k), "head_w"),
                _zeros((1,), "head_b"),
            ))
            return cls(convs=convs, kind=kind)

        convs = [
            ConvLayer(
                _conv_weight(rng, (widths[i + 1], widths[i], k, k), f"conv{i}_w"),
                _zeros((widths[i + 1],), f"conv{i}_b"),
            )
            for i in range(MIXER_DISC_CONVS)
        ]
        side = _mixer_disc_side(image_size)
        channels = widths[MIXER_DISC_CONVS]
        blocks = [
            MixerBlockParams.initialize(rng, side * side, channels, token_expansion, channel_expansion)
            for _ in range(mixer_blocks)
        ]
        return cls(
            convs=convs,
            blocks=blocks,
            head_w=_mlp_weight(rng, (1, channels), channels, "head_w"),
            head_b=_zeros((1,), "head_b"),
            kind=kind,
        )


def _mixer_disc_side(image_size: int) -> int:
    side = image_size
    for stride, pad, _ in PATCHGAN_LAYOUT[:MIXER_DISC_CONVS]:
        side = conv_output_size(side, PATCHGAN_KERNEL, stride, pad)
    if side < 1:
        raise DimensionError(f"Изображение {image_size}x{image_size} слишком мало для дискриминатора")
    return side


def score_map_size(size: int, kind: str = "patchgan") -> int:
    """Сторона карты оценок дискриминатора для входа size x size."""
    layout = PATCHGAN_LAYOUT + ((1, 1, False),)
    if kind == "mixer":
        layout = PATCHGAN_LAYOUT[:MIXER_DISC_CONVS]
    for stride, pad, _ in layout:
        if size + 2 * pad < PATCHGAN_KERNEL:
            return 0
        size = conv_output_size(size, PATCHGAN_KERNEL, stride, pad)
    return size


def discriminator_forward(
    x: Tensor,
    params: DiscriminatorParams,
    order: str = "token_first",
    layernorm_eps: float = LAYERNORM_EPS,
    instance_norm_eps: float = INSTANCE_NORM_EPS,
) -> Tensor:
    """
    Карта оценок "настоящий/поддельный" для каждого патча, без сигмоиды.

    Args:
        x: Изображения [b, 3, H, W]

    Returns:
        Тензор [b, 1, h_p, w_p]

    Raises:
        DimensionError: Если вход слишком мал и карта оценок была бы пустой
            (PatchGAN: меньше 24x24, mixer-вариант: меньше 16x16)
    """
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"Дискриминатор ожидает [b, 3, H, W], получено {x.shape}")
    out_h = score_map_size(x.shape[2], params.kind)
    out_w = score_map_size(x.shape[3], params.kind)
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"Вход {x.shape} слишком мал для дискриминатора: карта оценок была бы пустой"
        )

    h = x
    for layer, (stride, pad, use_norm) in zip(params.convs, PATCHGAN_LAYOUT):
        h = conv2d(h, layer.weight, layer.bias, stride=stride, pad=pad)
        if use_norm:
            h = instance_norm(h, instance_norm_eps)
        h = leaky_relu(h, 0.2)

    if params.kind == "patchgan":
        head = params.convs[-1]
        return conv2d(h, head.weight, head.bias, stride=1, pad=1)

    b, c, height, width = h.shape
    if params.blocks and params.blocks[0].tokens != height * width:
        raise DimensionError(
            f"Вход {x.shape} дает {height * width} токенов, дискриминатор обучен на "
            f"{params.blocks[0].tokens}"
        )
    tokens = transpose(reshape(h, (b, c, height * width)))
    for block in params.blocks:
        tokens = mixer_block(tokens, block, order, layernorm_eps)
    scores = linear(tokens, params.head_w, params.head_b)
    return reshape(transpose(scores), (b, 1, height, width))


def parameter_names(container: ParamContainer) -> List[str]:
    return [name for name, _ in container.named_parameters()]


def state_dict(container: ParamContainer, prefix: str = "") -> Dict[str, np.ndarray]:
    return {f"{prefix}{name}": tensor.data for name, tensor in container.named_parameters()}


def load_state(container: ParamContainer, state: Dict[str, np.ndarray], prefix: str = "") -> None:
    """
    Загружает массивы в параметры контейнера по именам.

    Raises:
        DimensionError: Если параметр отсутствует или форма не совпадает
    """
    for name, tensor in container.named_parameters():
        key = f"{prefix}{name}"
        if key not in state:
            raise DimensionError(f"В состоянии нет параметра {key}")
        value = np.asarray(state[key], dtype=np.float64)
        if value.shape != tensor.shape:
            raise DimensionError(
                f"Параметр {key}: форма {value.shape} не совпадает с {tensor.shape}"
            )
        tensor.data = value.copy()
