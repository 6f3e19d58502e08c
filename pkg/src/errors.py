"""
Иерархия исключений MixerGAN.

Все ошибки предметной области наследуются от MixerGanError, а также от
подходящего встроенного исключения, чтобы вызывающий код мог ловить
ValueError / IOError так же, как раньше.
"""
from typing import Optional


class MixerGanError(Exception):
    """Базовое исключение проекта."""


class DimensionError(MixerGanError, ValueError):
    """Несовпадение форм тензоров или недопустимая геометрия."""


class ConfigError(MixerGanError, ValueError):
    """Ошибка конфигурации: неизвестный ключ или недопустимое значение."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class ValidationError(MixerGanError, ValueError):
    """Нарушено предусловие операции."""


class PpmFormatError(MixerGanError, ValueError):
    """Некорректный PPM файл."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (смещение {offset} байт)")
        self.offset = offset


class NonFiniteError(MixerGanError, FloatingPointError):
    """В градиенте или функции потерь появились NaN/Inf."""

    def __init__(self, message: str, name: str):
        super().__init__(message)
        self.name = name


class CheckpointError(MixerGanError, IOError):
    """Ошибка чтения или записи чекпоинта."""
