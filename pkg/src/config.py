"""
Конфигурация MixerGAN: плоский файл key=value.

Приоритет источников: значения по умолчанию < файл конфигурации <
переменные окружения < флаги командной строки (--set key=value).
"""
from __future__ import annotations

import hashlib
import os
import platform
from dataclasses import asdict, dataclass, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from dotenv import dotenv_values
from loguru import logger

from src import __version__
from src.errors import ConfigError
from src.losses import LossWeights
from src.network import DISCRIMINATOR_KINDS, MIXER_ORDERS, score_map_size

SHAPE_FAMILIES = ("circles", "squares")

# Ключи, определяющие форму весов; хэш от них хранится в чекпоинте
GEOMETRY_KEYS = (
    "image_size",
    "patch_size",
    "feature_channels",
    "latent_channels",
    "mixer_blocks",
    "token_expansion",
    "channel_expansion",
    "disc_channels",
    "discriminator_kind",
    "disc_mixer_blocks",
    "mixer_order",
)

ENV_OVERRIDES = {
    "MIXERGAN_SEED": "seed",
    "MIXERGAN_RUN_ROOT": "run_root",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class TrainingConfig:
    """Все гиперпараметры обучения и геометрии сетей."""

    learning_rate: float = 0.0003
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    total_iterations: int = 2000
    decay_start_iteration: int = -1
    batch_size: int = 4
    image_size: int = 32
    patch_size: int = 2
    feature_channels: int = 32
    latent_channels: int = 64
    mixer_blocks: int = 9
    token_expansion: int = 2
    channel_expansion: int = 2
    mixer_order: str = "token_first"
    disc_channels: int = 64
    discriminator_kind: str = "patchgan"
    disc_mixer_blocks: int = 2
    lambda_cyc: float = 10.0
    lambda_perc: float = 0.0
    lambda_adv: float = 1.0
    layernorm_eps: float = 1e-5
    instance_norm_eps: float = 1e-5
    image_pool_size: int = 0
    flip: bool = False
    extractor_seed: int = 1234
    seed: int = 0
    checkpoint_interval: int = 500
    report_interval: int = 10
    sample_interval: int = 500

    @property
    def decay_start(self) -> int:
        """Итерация начала линейного спада; -1 означает половину обучения."""
        if self.decay_start_iteration < 0:
            return self.total_iterations // 2
        return self.decay_start_iteration

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cyc, self.lambda_perc, self.lambda_adv)

    def geometry(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in GEOMETRY_KEYS}

    def geometry_hash(self) -> str:
        """SHA-256 от геометрических ключей в каноническом виде."""
        canonical = "\n".join(f"{key}={_format_value(getattr(self, key))}" for key in GEOMETRY_KEYS)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def validate(self) -> "TrainingConfig":
        """
        Проверяет согласованность параметров.

        Raises:
            ConfigError: С именем первого недопустимого ключа
        """
        _require(self.learning_rate > 0, "learning_rate", "должен быть > 0")
        _require(
            len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas),
            "betas",
            "должны быть два числа в [0, 1)",
        )
        _require(self.adam_eps > 0, "adam_eps", "должен быть > 0")
        _require(self.total_iterations >= 0, "total_iterations", "должно быть >= 0")
        _require(
            self.decay_start <= self.total_iterations,
            "decay_start_iteration",
            "не может превышать total_iterations",
        )
        _require(self.batch_size >= 1, "batch_size", "должен быть >= 1")
        _require(self.patch_size >= 1, "patch_size", "должен быть >= 1")
        _require(
            self.image_size >= 4 * self.patch_size and self.image_size % (4 * self.patch_size) == 0,
            "image_size",
            f"должен делиться на 4p = {4 * self.patch_size}",
        )
        _require(
            self.feature_channels >= 4 and self.feature_channels % 4 == 0,
            "feature_channels",
            "должно быть кратно 4",
        )
        for key in ("latent_channels", "token_expansion", "channel_expansion", "disc_channels"):
            _require(getattr(self, key) >= 1, key, "должно быть >= 1")
        _require(self.mixer_blocks >= 0, "mixer_blocks", "должно быть >= 0")
        _require(self.disc_mixer_blocks >= 0, "disc_mixer_blocks", "должно быть >= 0")
        _require(self.mixer_order in MIXER_ORDERS, "mixer_order", f"допустимо: {', '.join(MIXER_ORDERS)}")
        _require(
            self.discriminator_kind in DISCRIMINATOR_KINDS,
            "discriminator_kind",
            f"допустимо: {', '.join(DISCRIMINATOR_KINDS)}",
        )
        _require(
            score_map_size(self.image_size, self.discriminator_kind) >= 1,
            "image_size",
            "слишком мал для дискриминатора",
        )
        for key in ("lambda_cyc", "lambda_perc", "lambda_adv"):
            _require(getattr(self, key) >= 0, key, "должен быть >= 0")
        _require(self.layernorm_eps > 0, "layernorm_eps", "должен быть > 0")
        _require(self.instance_norm_eps > 0, "instance_norm_eps", "должен быть > 0")
        _require(self.image_pool_size >= 0, "image_pool_size", "должен быть >= 0")
        for key in ("checkpoint_interval", "report_interval", "sample_interval"):
            _require(getattr(self, key) >= 1, key, "должен быть >= 1")
        return self


@dataclass
class RunConfig(TrainingConfig):
    """Конфигурация запуска CLI: обучение плюс данные, пути и метрики."""

    data_root: str = ""
    synthetic: bool = False
    synth_count: int = 64
    synth_shape: str = "circles"
    synth_texture: float = 0.1
    synth_hue_width: float = 0.0
    run_root: str = "runs"
    kid_subset_size: int = 50
    kid_subsets: int = 10

    def validate(self) -> "RunConfig":
        super().validate()
        _require(self.synth_count >= 1, "synth_count", "должно быть >= 1")
        _require(self.synth_shape in SHAPE_FAMILIES, "synth_shape", f"допустимо: {', '.join(SHAPE_FAMILIES)}")
        _require(self.synth_texture >= 0, "synth_texture", "должна быть >= 0")
        _require(0 <= self.synth_hue_width <= 1, "synth_hue_width", "должна быть в [0, 1]")
        _require(self.kid_subset_size >= 2, "kid_subset_size", "должен быть >= 2")
        _require(self.kid_subsets >= 1, "kid_subsets", "должно быть >= 1")
        return self


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"Недопустимое значение {key}: {message}", key=key)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def coerce_value(config_cls: type, key: str, raw: Any) -> Any:
    """
    Приводит строковое значение к типу поля конфигурации.

    Raises:
        ConfigError: Если ключ неизвестен или значение не приводится
    """
    field_types = {f.name: f.type for f in fields(config_cls)}
    if key not in field_types:
        raise ConfigError(f"Неизвестный ключ конфигурации: {key}", key=key)
    if not isinstance(raw, str):
        return raw
    kind = str(field_types[key])
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("Tuple"):
            return tuple(float(part) for part in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"Ключ {key}: не удалось разобрать значение '{raw}' как {kind}", key=key)


def load_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
    config_cls: type = RunConfig,
) -> Any:
    """
    Собирает конфигурацию из всех источников.

    Args:
        path: Файл key=value (необязателен)
        overrides: Значения из командной строки
        environ: Окружение; по умолчанию os.environ
        config_cls: Класс конфигурации

    Returns:
        Проверенный экземпляр config_cls

    Raises:
        ConfigError: Неизвестный ключ, нечитаемый файл или недопустимое значение
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Файл конфигурации не найден: {path}", key="config")
        for key, raw in dotenv_values(path).items():
            if raw is None:
                raise ConfigError(f"Ключ {key} в {path} не имеет значения", key=key)
            values[key] = coerce_value(config_cls, key, raw)

    environ = os.environ if environ is None else environ
    for env_key, key in ENV_OVERRIDES.items():
        if environ.get(env_key):
            values[key] = coerce_value(config_cls, key, environ[env_key])
            logger.debug("Значение взято из окружения", variable=env_key, key=key)

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = coerce_value(config_cls, key, raw)

    return config_cls(**values).validate()


def parse_assignments(items: Optional[list]) -> Dict[str, str]:
    """Разбирает список строк "key=value" из --set."""
    result: Dict[str, str] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"Ожидается key=value, получено '{item}'", key=item)
        key, value = item.split("=", 1)
        result[key.strip()] = value.strip()
    return result


def config_to_text(config: TrainingConfig) -> str:
    lines = [f"{key}={_format_value(value)}" for key, value in asdict(config).items()]
    return "\n".join(lines) + "\n"


def write_config(config: TrainingConfig, path: Path) -> Path:
    path = Path(path)
    path.write_text(config_to_text(config), encoding="utf-8")
    return path


def create_run_dir(run_root: Path, command: str) -> Path:
    """
    Создает новый каталог запуска runs/<command>_<timestamp>.

    Существующие каталоги никогда не перезаписываются: при совпадении
    времени добавляется числовой суффикс.
    """
    run_root = Path(run_root)
    run_root.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    candidate = run_root / f"{command}_{stamp}"
    suffix = 1
    while True:
        try:
            candidate.mkdir(parents=False, exist_ok=False)
            return candidate
        except FileExistsError:
            candidate = run_root / f"{command}_{stamp}_{suffix}"
            suffix += 1


def write_run_meta(run_dir: Path, config: TrainingConfig, command: str) -> Path:
    """Пишет run_meta.env: версия пакета, seed, версии окружения."""
    meta = {
        "command": command,
        "mixergan_version": __version__,
        "seed": str(config.seed),
        "geometry_hash": config.geometry_hash(),
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
    }
    path = Path(run_dir) / "run_meta.env"
    path.write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")
    return path
