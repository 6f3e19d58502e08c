"""
Обучение: Adam, расписание скорости обучения и чередующийся цикл
CycleGAN (сначала генераторы, затем дискриминаторы).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.config import TrainingConfig
from src.data_io import UnpairedSampler, make_grid, sample_unpaired_batch, save_image
from src.errors import CheckpointError, DimensionError, NonFiniteError, ValidationError
from src.losses import (
    FeatureExtractor,
    generator_objective,
    loss_cycle,
    loss_D,
    loss_G,
    loss_perceptual,
    mean_abs,
)
from src.network import (
    DiscriminatorParams,
    GeneratorParams,
    ParamContainer,
    discriminator_forward,
    generator_forward,
    load_state,
    state_dict,
)
from src.tensor import Tensor, add

CSV_HEADER = ("iter", "loss_G", "loss_F", "loss_DX", "loss_DY", "loss_cyc", "loss_perc", "lr")
GENERATOR_NAMES = ("G", "F")
DISCRIMINATOR_NAMES = ("D_X", "D_Y")


# --- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    """Моменты Adam для каждого именованного параметра и счетчик шагов."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """
    Один шаг Adam с коррекцией смещения.

    Все градиенты проверяются на конечность до изменения параметров, так
    что при ошибке ни один параметр не меняется.

    Args:
        params: Имя -> параметр
        grads: Имя -> градиент той же формы
        state: Моменты; заменяются новыми массивами
        lr: Скорость обучения, > 0

    Returns:
        Обновленное состояние

    Raises:
        NonFiniteError: Градиент содержит NaN/Inf (с именем параметра)
        ValidationError: lr <= 0 или форма градиента не совпадает
    """
    if not lr > 0:
        raise ValidationError(f"Скорость обучения должна быть > 0, получено {lr}")
    for name, tensor in params.items():
        grad = grads[name]
        if grad.shape != tensor.shape:
            raise ValidationError(f"Градиент {name}: форма {grad.shape} вместо {tensor.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Неконечный градиент параметра {name}", name=name)

    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, tensor in params.items():
        grad = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        tensor.data = tensor.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state


def lr_at(iteration: int, config: TrainingConfig) -> float:
    """
    Скорость обучения: постоянная до decay_start, затем линейно до 0 к total_iterations.

    Raises:
        ValidationError: Если итерация вне [0, total_iterations]
    """
    total = config.total_iterations
    if not 0 <= iteration <= total:
        raise ValidationError(f"Итерация {iteration} вне диапазона [0, {total}]")
    start = config.decay_start
    if iteration < start:
        return config.learning_rate
    if total == start:
        return config.learning_rate if iteration < total else 0.0
    return config.learning_rate * (total - iteration) / (total - start)


# --- Модели -------------------------------------------------------------------

@dataclass
class CycleGanModels:
    """Два генератора (G: X->Y, F: Y->X) и два дискриминатора."""

    G: GeneratorParams
    F: GeneratorParams
    D_X: DiscriminatorParams
    D_Y: DiscriminatorParams

    def networks(self) -> Dict[str, ParamContainer]:
        return {"G": self.G, "F": self.F, "D_X": self.D_X, "D_Y": self.D_Y}

    def named_parameters(self, names: Sequence[str] = GENERATOR_NAMES + DISCRIMINATOR_NAMES) -> Dict[str, Tensor]:
        result: Dict[str, Tensor] = {}
        for net_name in names:
            for name, tensor in self.networks()[net_name].named_parameters(f"{net_name}/"):
                result[name] = tensor
        return result

    def generator_parameters(self) -> Dict[str, Tensor]:
        return self.named_parameters(GENERATOR_NAMES)

    def discriminator_parameters(self) -> Dict[str, Tensor]:
        return self.named_parameters(DISCRIMINATOR_NAMES)

    def set_trainable(self, names: Sequence[str], flag: bool) -> None:
        for net_name in names:
            self.networks()[net_name].set_requires_grad(flag)


def build_models(config: TrainingConfig) -> CycleGanModels:
    """Инициализирует все четыре сети из config.seed."""
    def generator(index: int) -> GeneratorParams:
        return GeneratorParams.initialize(
            np.random.default_rng([config.seed, index]),
            config.image_size,
            config.patch_size,
            config.feature_channels,
            config.latent_channels,
            config.mixer_blocks,
            config.token_expansion,
            config.channel_expansion,
        )

    def discriminator(index: int) -> DiscriminatorParams:
        return DiscriminatorParams.initialize(
            np.random.default_rng([config.seed, index]),
            config.disc_channels,
            config.discriminator_kind,
            config.image_size,
            config.disc_mixer_blocks,
            config.token_expansion,
            config.channel_expansion,
        )

    return CycleGanModels(G=generator(0), F=generator(1), D_X=discriminator(2), D_Y=discriminator(3))


def translate(generator: GeneratorParams, images: np.ndarray, config: TrainingConfig, batch_size: int = 8) -> np.ndarray:
    """Прогоняет массив изображений [m, 3, H, W] через генератор порциями."""
    images = np.asarray(images, dtype=np.float64)
    outputs = []
    flags = [t.requires_grad for t in generator.parameters()]
    generator.set_requires_grad(False)
    try:
        for start in range(0, len(images), batch_size):
            out = generator_forward(
                Tensor(images[start:start + batch_size]),
                generator,
                config.mixer_order,
                config.layernorm_eps,
                config.instance_norm_eps,
            )
            outputs.append(out.data)
    finally:
        for tensor, flag in zip(generator.parameters(), flags):
            tensor.requires_grad = flag
    if not outputs:
        return np.zeros((0,) + images.shape[1:])
    return np.concatenate(outputs, axis=0)


def cycle_loss_value(models: CycleGanModels, images_x: np.ndarray, images_y: np.ndarray, config: TrainingConfig) -> float:
    """L_cyc на полном наборе изображений без построения графа."""
    rec_x = translate(models.F, translate(models.G, images_x, config), config)
    rec_y = translate(models.G, translate(models.F, images_y, config), config)
    return mean_abs(rec_x, images_x) + mean_abs(rec_y, images_y)


# --- Буфер истории подделок -----------------------------------------------------

class ImagePool:
    """
    Буфер ранее сгенерированных изображений для шага дискриминатора.

    При size == 0 буфер выключен и возвращает вход без изменений. Решения
    о подмене берутся из default_rng([seed, 4 + domain, iteration]).
    """

    def __init__(self, size: int, seed: int, domain: int, image_shape: Tuple[int, int, int]):
        self.size = size
        self.seed = seed
        self.domain = domain
        self.images = np.zeros((0,) + tuple(image_shape))

    def query(self, images: np.ndarray, iteration: int) -> np.ndarray:
        if self.size == 0:
            return images
        rng = np.random.default_rng([self.seed, 4 + self.domain, iteration])
        result = []
        for image in images:
            if len(self.images) < self.size:
                self.images = np.concatenate([self.images, image[None]], axis=0)
                result.append(image)
            elif rng.random() < 0.5:
                index = int(rng.integers(self.size))
                result.append(self.images[index].copy())
                stored = self.images.copy()
                stored[index] = image
                self.images = stored
            else:
                result.append(image)
        return np.stack(result)


# --- Шаг обучения ----------------------------------------------------------------

@dataclass
class OptimizerStates:
    generators: AdamState
    discriminators: AdamState

    @classmethod
    def for_models(cls, models: CycleGanModels) -> "OptimizerStates":
        return cls(
            generators=AdamState.zeros(models.generator_parameters()),
            discriminators=AdamState.zeros(models.discriminator_parameters()),
        )


@dataclass
class StepReport:
    iteration: int
    loss_G: float
    loss_F: float
    loss_DX: float
    loss_DY: float
    loss_cyc: float
    loss_perc: float
    lr: float

    def csv_row(self) -> List[str]:
        values = [self.loss_G, self.loss_F, self.loss_DX, self.loss_DY, self.loss_cyc, self.loss_perc, self.lr]
        return [str(self.iteration)] + [format(v, ".17g") for v in values]


def _check_finite(value: Tensor, name: str) -> None:
    if not np.all(np.isfinite(value.data)):
        raise NonFiniteError(f"Неконечное значение потери {name}", name=name)


def _grads(params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    return {name: tensor.grad for name, tensor in params.items()}


def train_step(
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    models: CycleGanModels,
    opt_states: OptimizerStates,
    config: TrainingConfig,
    iteration: int = 0,
    extractor: Optional[FeatureExtractor] = None,
    pools: Optional[Tuple[ImagePool, ImagePool]] = None,
) -> StepReport:
    """
    Одна итерация: шаг генераторов при замороженных дискриминаторах,
    затем шаг дискриминаторов на отсоединенных подделках.

    Raises:
        NonFiniteError: Потеря или градиент не конечны; параметры не изменены
    """
    weights = config.loss_weights
    lr = lr_at(iteration, config)
    order, ln_eps, in_eps = config.mixer_order, config.layernorm_eps, config.instance_norm_eps

    def G(t: Tensor) -> Tensor:
        return generator_forward(t, models.G, order, ln_eps, in_eps)

    def F(t: Tensor) -> Tensor:
        return generator_forward(t, models.F, order, ln_eps, in_eps)

    def D_X(t: Tensor) -> Tensor:
        return discriminator_forward(t, models.D_X, order, ln_eps, in_eps)

    def D_Y(t: Tensor) -> Tensor:
        return discriminator_forward(t, models.D_Y, order, ln_eps, in_eps)

    x, y = Tensor(batch_x), Tensor(batch_y)

    # Генераторы
    models.set_trainable(DISCRIMINATOR_NAMES, False)
    models.set_trainable(GENERATOR_NAMES, True)
    gen_params = models.generator_parameters()
    for tensor in gen_params.values():
        tensor.zero_grad()
    try:
        fake_y = G(x)
        rec_x = F(fake_y)
        fake_x = F(y)
        rec_y = G(fake_x)
        l_g = loss_G(D_Y(fake_y))
        l_f = loss_G(D_X(fake_x))
        l_cyc = loss_cycle(x, rec_x, y, rec_y)
        l_perc = 0.0
        if weights.lambda_perc > 0:
            if extractor is None:
                raise ValidationError("Для lambda_perc > 0 нужен экстрактор признаков")
            l_perc = add(loss_perceptual(x, rec_x, extractor), loss_perceptual(y, rec_y, extractor))
        objective = generator_objective(l_g, l_f, l_cyc, l_perc, weights)
        _check_finite(objective, "generators")
        objective.backward()
        adam_step(gen_params, _grads(gen_params), opt_states.generators, lr, config.betas, config.adam_eps)
    finally:
        models.set_trainable(DISCRIMINATOR_NAMES, True)

    # Дискриминаторы
    fakes_y, fakes_x = fake_y.data, fake_x.data
    if pools is not None:
        fakes_x = pools[0].query(fakes_x, iteration)
        fakes_y = pools[1].query(fakes_y, iteration)
    models.set_trainable(GENERATOR_NAMES, False)
    disc_params = models.discriminator_parameters()
    for tensor in disc_params.values():
        tensor.zero_grad()
    try:
        l_dx = loss_D(D_X(x), D_X(Tensor(fakes_x)))
        l_dy = loss_D(D_Y(y), D_Y(Tensor(fakes_y)))
        disc_objective = add(l_dx, l_dy)
        _check_finite(disc_objective, "discriminators")
        disc_objective.backward()
        adam_step(disc_params, _grads(disc_params), opt_states.discriminators, lr, config.betas, config.adam_eps)
    finally:
        models.set_trainable(GENERATOR_NAMES, True)

    return StepReport(
        iteration=iteration,
        loss_G=l_g.item(),
        loss_F=l_f.item(),
        loss_DX=l_dx.item(),
        loss_DY=l_dy.item(),
        loss_cyc=l_cyc.item(),
        loss_perc=l_perc.item() if isinstance(l_perc, Tensor) else float(l_perc),
        lr=lr,
    )


# --- Состояние для чекпоинта ---------------------------------------------------

def training_state(
    models: CycleGanModels,
    opt_states: OptimizerStates,
    config: TrainingConfig,
    iteration: int,
    pools: Optional[Tuple[ImagePool, ImagePool]] = None,
) -> Checkpoint:
    """Собирает все состояние обучения в именованные массивы."""
    entries: Dict[str, np.ndarray] = {}
    for net_name, net in models.networks().items():
        entries.update(state_dict(net, f"{net_name}/"))
    for group, state in (("generators", opt_states.generators), ("discriminators", opt_states.discriminators)):
        entries[f"adam/{group}/step"] = np.asarray(float(state.step))
        for name in state.m:
            entries[f"adam/{group}/m/{name}"] = state.m[name]
            entries[f"adam/{group}/v/{name}"] = state.v[name]
    entries["meta/iteration"] = np.asarray(float(iteration))
    entries["meta/seed"] = np.asarray(float(config.seed))
    entries["meta/lambda_cyc"] = np.asarray(config.lambda_cyc)
    entries["meta/lambda_perc"] = np.asarray(config.lambda_perc)
    entries["meta/lambda_adv"] = np.asarray(config.lambda_adv)
    if pools is not None:
        entries["pool/X"] = pools[0].images
        entries["pool/Y"] = pools[1].images
    return Checkpoint(config.geometry_hash(), entries)


def restore_training_state(
    checkpoint: Checkpoint,
    models: CycleGanModels,
    opt_states: Optional[OptimizerStates],
    config: TrainingConfig,
    pools: Optional[Tuple[ImagePool, ImagePool]] = None,
) -> int:
    """
    Восстанавливает параметры (и, если переданы, Adam и буферы).

    Returns:
        Номер итерации, с которой продолжать

    Raises:
        CheckpointError: Хэш геометрии не совпадает с текущей конфигурацией
    """
    expected = config.geometry_hash()
    if checkpoint.geometry_hash != expected:
        raise CheckpointError(
            f"Геометрия чекпоинта не совпадает с конфигурацией: "
            f"в чекпоинте {checkpoint.geometry_hash}, в конфигурации {expected}"
        )
    entries = checkpoint.entries
    try:
        for net_name, net in models.networks().items():
            load_state(net, entries, f"{net_name}/")
    except DimensionError as e:
        raise CheckpointError(f"Чекпоинт не подходит к моделям: {e}") from e
    if opt_states is not None:
        for group, state in (("generators", opt_states.generators), ("discriminators", opt_states.discriminators)):
            state.step = int(entries[f"adam/{group}/step"])
            for name in state.m:
                state.m[name] = entries[f"adam/{group}/m/{name}"].copy()
                state.v[name] = entries[f"adam/{group}/v/{name}"].copy()
    if pools is not None:
        pools[0].images = entries.get("pool/X", pools[0].images).copy()
        pools[1].images = entries.get("pool/Y", pools[1].images).copy()
    return int(entries["meta/iteration"])


# --- Цикл обучения -----------------------------------------------------------------

@dataclass
class TrainingArtifacts:
    run_dir: Path
    checkpoints: List[Path]
    loss_csv: Path
    reports: List[StepReport]
    samples: List[Path]


def checkpoint_path(run_dir: Path, iteration: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"checkpoint_{iteration:06d}.ckpt"


def _write_samples(models: CycleGanModels, preview: Tuple[np.ndarray, np.ndarray], config: TrainingConfig, run_dir: Path, iteration: int) -> Path:
    preview_x, preview_y = preview
    fake_y = translate(models.G, preview_x, config)
    rec_x = translate(models.F, fake_y, config)
    fake_x = translate(models.F, preview_y, config)
    rec_y = translate(models.G, fake_x, config)
    rows = np.concatenate([preview_x, fake_y, rec_x, preview_y, fake_x, rec_y], axis=0)
    path = Path(run_dir) / "samples" / f"sample_{iteration:06d}.ppm"
    path.parent.mkdir(parents=True, exist_ok=True)
    return save_image(path, make_grid(rows, len(preview_x)))


def train(
    config: TrainingConfig,
    dataset_x: np.ndarray,
    dataset_y: np.ndarray,
    run_dir: Path,
    resume: Optional[Path] = None,
    extractor: Optional[FeatureExtractor] = None,
) -> TrainingArtifacts:
    """
    Полный цикл обучения с периодическими отчетами, чекпоинтами и образцами.

    Args:
        config: Проверенная конфигурация
        dataset_x, dataset_y: Домены [N, 3, H, W]
        run_dir: Каталог запуска
        resume: Чекпоинт для продолжения

    Raises:
        ValidationError: Пустой домен
        DimensionError: Размер изображений не совпадает с image_size
        CheckpointError: Ошибки ввода-вывода или несовпадение геометрии
    """
    dataset_x = np.asarray(dataset_x, dtype=np.float64)
    dataset_y = np.asarray(dataset_y, dtype=np.float64)
    if len(dataset_x) == 0 or len(dataset_y) == 0:
        raise ValidationError("Оба домена должны содержать хотя бы одно изображение")
    expected_shape = (3, config.image_size, config.image_size)
    for name, data in (("X", dataset_x), ("Y", dataset_y)):
        if data.shape[1:] != expected_shape:
            raise DimensionError(f"Домен {name}: изображения {data.shape[1:]}, ожидалось {expected_shape}")

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if extractor is None and config.lambda_perc > 0:
        extractor = FeatureExtractor(config.extractor_seed)

    models = build_models(config)
    opt_states = OptimizerStates.for_models(models)
    pools = None
    if config.image_pool_size > 0:
        pools = (
            ImagePool(config.image_pool_size, config.seed, 0, expected_shape),
            ImagePool(config.image_pool_size, config.seed, 1, expected_shape),
        )
    sampler = UnpairedSampler(len(dataset_x), len(dataset_y), config.batch_size, config.seed, config.flip)

    start = 0
    if resume is not None:
        start = restore_training_state(load_checkpoint(resume), models, opt_states, config, pools)
        if start > config.total_iterations:
            raise CheckpointError(
                f"Чекпоинт {resume} на итерации {start} дальше total_iterations={config.total_iterations}"
            )
        logger.info("Обучение продолжено из чекпоинта", checkpoint=str(resume), iteration=start)
    sampler.seek(start)

    preview_count = min(4, len(dataset_x), len(dataset_y))
    preview = (dataset_x[:preview_count], dataset_y[:preview_count])
    checkpoints: List[Path] = []
    samples: List[Path] = []
    reports: List[StepReport] = []
    loss_csv = run_dir / "losses.csv"

    def save(iteration: int) -> None:
        path = save_checkpoint(checkpoint_path(run_dir, iteration), training_state(models, opt_states, config, iteration, pools))
        checkpoints.append(path)
        logger.info("Чекпоинт записан", path=str(path), iteration=iteration)

    logger.info(
        "Начало обучения",
        total_iterations=config.total_iterations,
        start=start,
        batch_size=config.batch_size,
        parameters=sum(t.size for t in models.named_parameters().values()),
    )
    try:
        with loss_csv.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            if config.total_iterations == start:
                save(start)
            for iteration in range(start, config.total_iterations):
                batch_x, batch_y = sample_unpaired_batch(dataset_x, dataset_y, config.batch_size, sampler)
                try:
                    report = train_step(batch_x, batch_y, models, opt_states, config, iteration, extractor, pools)
                except NonFiniteError as e:
                    logger.exception(
                        "Обучение остановлено: неконечные значения",
                        iteration=iteration,
                        error=str(e),
                        error_type=type(e).__name__,
                    )
                    raise
                if iteration % config.report_interval == 0:
                    reports.append(report)
                    writer.writerow(report.csv_row())
                    handle.flush()
                    logger.info(
                        "Итерация завершена",
                        iteration=iteration,
                        loss_G=round(report.loss_G, 5),
                        loss_F=round(report.loss_F, 5),
                        loss_DX=round(report.loss_DX, 5),
                        loss_DY=round(report.loss_DY, 5),
                        loss_cyc=round(report.loss_cyc, 5),
                        lr=report.lr,
                    )
                done = iteration + 1
                if done % config.checkpoint_interval == 0 or done == config.total_iterations:
                    save(done)
                if done % config.sample_interval == 0 or done == config.total_iterations:
                    samples.append(_write_samples(models, preview, config, run_dir, done))
    except OSError as e:
        logger.error("Ошибка ввода-вывода при обучении", path=str(run_dir), error=str(e), error_type=type(e).__name__)
        raise CheckpointError(f"Ошибка записи в {run_dir}: {e}") from e

    logger.info("Обучение завершено", checkpoints=len(checkpoints), run_dir=str(run_dir))
    return TrainingArtifacts(run_dir, checkpoints, loss_csv, reports, samples)


def load_models(checkpoint: Path, config: TrainingConfig) -> Tuple[CycleGanModels, int]:
    """Модели из чекпоинта (без состояния оптимизатора)."""
    models = build_models(config)
    iteration = restore_training_state(load_checkpoint(checkpoint), models, None, config)
    return models, iteration