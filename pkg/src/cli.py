"""
Точка входа командной строки MixerGAN.

Подкоманды:
    train         обучение CycleGAN с mixer-генераторами
    translate     пакетный перевод каталога PPM изображений
    analyze-cost  таблица стоимости блоков (параметры и активации)
    metrics       KID и FID между двумя каталогами изображений
    synth-data    запись синтетического набора trainA/trainB/testA/testB

Использование:
    python -m src.cli train --synthetic --iters 10
    python -m src.cli analyze-cost --kind tm --sweep n 64:512
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv
from loguru import logger

from src import __version__
from src.config import (
    RunConfig,
    create_run_dir,
    load_config,
    parse_assignments,
    write_config,
    write_run_meta,
)
from src.cost_model import (
    KIND_ALIASES,
    KINDS,
    SWEEP_AXES,
    BlockSpec,
    cost_report,
    doubling_values,
    fit_loglog_slope,
    gnuplot_script,
    retention_ratio,
    sweep,
    to_csv,
)
from src.data_io import (
    domain_specs,
    load_dataset,
    load_image_dir,
    save_image,
    stack_pixels,
    synthesize_domain,
    write_domain,
)
from src.errors import ConfigError, MixerGanError, ValidationError
from src.losses import FeatureExtractor
from src.metrics import extract_features, metric_report
from src.training import load_models, train, translate

DIRECTIONS = ("X2Y", "Y2X")
BANNER_KEYS = (
    "learning_rate",
    "betas",
    "batch_size",
    "total_iterations",
    "decay_start",
    "image_size",
    "patch_size",
    "feature_channels",
    "latent_channels",
    "mixer_blocks",
    "mixer_order",
    "discriminator_kind",
    "lambda_cyc",
    "lambda_perc",
    "lambda_adv",
    "seed",
)

# Флаг командной строки -> ключ конфигурации
FLAG_KEYS = {
    "lr": "learning_rate",
    "batch": "batch_size",
    "channels": "latent_channels",
    "iters": "total_iterations",
    "patch": "patch_size",
    "image_size": "image_size",
    "lambda_cyc": "lambda_cyc",
    "lambda_perc": "lambda_perc",
    "seed": "seed",
    "data_root": "data_root",
    "run_root": "run_root",
    "extractor_seed": "extractor_seed",
    "subset_size": "kid_subset_size",
    "subsets": "kid_subsets",
}

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level> | {extra}"
)
FILE_LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | {message} | {extra}"


# --- Логирование -----------------------------------------------------------------

def configure_logging() -> None:
    """Консольный обработчик loguru; уровень из MIXERGAN_LOG_LEVEL."""
    logger.remove()
    logger.add(
        sys.stderr,
        format=LOG_FORMAT,
        level=os.getenv("MIXERGAN_LOG_LEVEL", "INFO").upper(),
        colorize=True,
    )


def attach_run_log(run_dir: Path) -> int:
    """Подробный лог запуска в <run_dir>/logs; возвращает id обработчика."""
    logs_dir = Path(run_dir) / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    return logger.add(
        logs_dir / "mixergan_{time:YYYY-MM-DD}.log",
        format=FILE_LOG_FORMAT,
        level="DEBUG",
        rotation="00:00",
        retention="30 days",
        compression="zip",
        encoding="utf-8",
        backtrace=True,
        diagnose=True,
    )


# --- Конфигурация ------------------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Конфигурация запуска из --config, окружения, --set и флагов.

    Raises:
        ConfigError: Неизвестный ключ или недопустимое значение
    """
    overrides: Dict[str, Any] = parse_assignments(getattr(args, "set", None))
    options = vars(args)
    for flag, key in FLAG_KEYS.items():
        value = options.get(flag)
        if value is not None:
            overrides[key] = value
    if options.get("synthetic"):
        overrides["synthetic"] = True
    config_path = options.get("config")
    return load_config(Path(config_path) if config_path else None, overrides)


def settings_banner(config: RunConfig) -> str:
    lines = ["=" * 70, f"MixerGAN {__version__}: параметры обучения"]
    for key in BANNER_KEYS:
        lines.append(f"  {key} = {getattr(config, key)}")
    lines.append(f"  geometry_hash = {config.geometry_hash()}")
    lines.append("=" * 70)
    return "\n".join(lines)


def start_run(config: RunConfig, command: str) -> Path:
    """Новый каталог запуска с config.env и run_meta.env до начала работы."""
    run_dir = create_run_dir(Path(config.run_root), command)
    write_config(config, run_dir / "config.env")
    write_run_meta(run_dir, config, command)
    return run_dir


def _training_domains(config: RunConfig):
    if config.synthetic:
        spec_a, spec_b = domain_specs(
            config.seed,
            config.synth_count,
            config.image_size,
            config.synth_shape,
            config.synth_texture,
            config.synth_hue_width,
        )
        return stack_pixels(synthesize_domain(spec_a)), stack_pixels(synthesize_domain(spec_b))
    if not config.data_root:
        raise ConfigError("Не задан data_root (или используйте --synthetic)", key="data_root")
    records_a, records_b = load_dataset(Path(config.data_root), "train")
    return stack_pixels(records_a), stack_pixels(records_b)


# --- Подкоманды --------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = start_run(config, "train")
    handler = attach_run_log(run_dir)
    try:
        print(settings_banner(config))
        logger.info("Параметры обучения", run_dir=str(run_dir), **{k: getattr(config, k) for k in BANNER_KEYS})
        dataset_x, dataset_y = _training_domains(config)
        artifacts = train(
            config,
            dataset_x,
            dataset_y,
            run_dir,
            resume=Path(args.resume) if args.resume else None,
        )
        print(f"Каталог запуска: {run_dir}")
        print(f"Чекпоинтов: {len(artifacts.checkpoints)}")
        for path in artifacts.checkpoints:
            print(f"  {path}")
        return 0
    finally:
        logger.remove(handler)


def cmd_translate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = start_run(config, "translate")
    handler = attach_run_log(run_dir)
    try:
        records = load_image_dir(Path(args.input_dir))
        if not records:
            logger.warning("Во входном каталоге нет PPM изображений", input_dir=args.input_dir)
            print("Переведено изображений: 0")
            return 0
        models, iteration = load_models(Path(args.checkpoint), config)
        generator = models.G if args.direction == "X2Y" else models.F
        outputs = translate(generator, stack_pixels(records), config)
        output_dir = Path(args.output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        for record, pixels in zip(records, outputs):
            save_image(output_dir / Path(record.source).name, pixels)
        logger.info(
            "Перевод завершен",
            direction=args.direction,
            count=len(records),
            iteration=iteration,
            output_dir=str(output_dir),
        )
        print(f"Переведено изображений: {len(records)}")
        return 0
    finally:
        logger.remove(handler)


def _sweep_values(args: argparse.Namespace) -> List[int]:
    if args.values:
        try:
            return [int(v) for v in args.values.split(",")]
        except ValueError:
            raise ValidationError(f"--values ожидает целые через запятую, получено '{args.values}'")
    start, _, end = args.sweep[1].partition(":")
    try:
        return doubling_values(int(start), int(end))
    except ValueError:
        raise ValidationError(f"Диапазон ожидается как START:END, получено '{args.sweep[1]}'")


def cmd_analyze_cost(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = start_run(config, "analyze-cost")
    handler = attach_run_log(run_dir)
    try:
        kinds = list(KINDS) if args.kind == "all" else [KIND_ALIASES[args.kind]]
        template = BlockSpec(n=args.n, c=args.c, h=args.heads, b=args.b, k=args.k)

        print(f"Доля сохраняемой размерности патча: {retention_ratio(args.retention_patch, args.multiplier)}")
        if args.sweep is None:
            axis = "n"
            reports = [cost_report(replace(template, kind=kind)) for kind in kinds]
        else:
            axis = args.sweep[0]
            values = _sweep_values(args)
            reports = []
            for kind in kinds:
                reports.extend(sweep(replace(template, kind=kind), axis, values))

        table = to_csv(axis, reports)
        csv_path = run_dir / f"cost_{axis}.csv"
        csv_path.write_text(table, encoding="utf-8")
        (run_dir / f"cost_{axis}.gnuplot").write_text(
            gnuplot_script(csv_path.name, axis, f"cost_{axis}.png"), encoding="utf-8"
        )
        print(table, end="")

        if args.sweep is not None and axis == "n":
            for kind in kinds:
                rows = [r for r in reports if r.spec.kind == kind]
                slope = fit_loglog_slope([r.spec.n for r in rows], [r.activation_floats for r in rows])
                print(f"Наклон log-log активаций ({kind}): {slope:.3f}")
                logger.info("Наклон по n", kind=kind, slope=round(slope, 4))
        logger.info("Таблица стоимости записана", path=str(csv_path), rows=len(reports))
        return 0
    finally:
        logger.remove(handler)


def cmd_metrics(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    run_dir = start_run(config, "metrics")
    handler = attach_run_log(run_dir)
    try:
        extractor = FeatureExtractor(config.extractor_seed)
        real = extract_features(load_image_dir(Path(args.real_dir)), extractor)
        fake = extract_features(load_image_dir(Path(args.fake_dir)), extractor)
        report = metric_report(real, fake, config.kid_subset_size, config.kid_subsets, config.seed)
        (run_dir / "metrics.csv").write_text(report.csv(), encoding="utf-8")
        (run_dir / "metrics.txt").write_text(report.text(), encoding="utf-8")
        logger.info(
            "Метрики посчитаны",
            kid_x100=round(report.kid_mean_x100, 4),
            kid_std_x100=round(report.kid_std_x100, 4),
            fid=round(report.fid, 6),
        )
        print(report.text(), end="")
        return 0
    finally:
        logger.remove(handler)


def cmd_synth_data(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    output_root = Path(args.output_root)
    test_count = args.test_count if args.test_count is not None else max(1, config.synth_count // 4)
    splits = (("train", config.seed, config.synth_count), ("test", config.seed + 2, test_count))
    for split, seed, count in splits:
        specs = domain_specs(
            seed,
            count,
            config.image_size,
            config.synth_shape,
            config.synth_texture,
            config.synth_hue_width,
        )
        for spec in specs:
            write_domain(output_root / f"{split}{spec.domain_id}", synthesize_domain(spec))
    logger.info("Синтетический набор записан", root=str(output_root), train=config.synth_count, test=test_count)
    print(f"Набор записан: {output_root}")
    return 0


# --- Разбор аргументов ---------------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="Файл key=value с настройками")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="Переопределить ключ конфигурации")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--run-root", dest="run_root", help="Каталог для запусков (по умолчанию runs)")
    return parser


def _geometry_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--lr", type=float, help="Скорость обучения Adam")
    parser.add_argument("--batch", type=int, help="Размер батча")
    parser.add_argument("--channels", type=int, help="Ширина латентных каналов mixer-блоков")
    parser.add_argument("--iters", type=int, help="Число итераций обучения")
    parser.add_argument("--patch", type=int, help="Размер патча p")
    parser.add_argument("--image-size", dest="image_size", type=int)
    parser.add_argument("--lambda-cyc", dest="lambda_cyc", type=float)
    parser.add_argument("--lambda-perc", dest="lambda_perc", type=float)
    parser.add_argument("--synthetic", action="store_true", default=None, help="Синтетические домены вместо data_root")
    parser.add_argument("--data-root", dest="data_root", help="Каталог с trainA/trainB")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    geometry = _geometry_parser()
    parser = argparse.ArgumentParser(prog="mixergan", description="MixerGAN: непарный перевод изображений")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", parents=[common, geometry], help="Обучение")
    train_parser.add_argument("--resume", help="Продолжить с чекпоинта")
    train_parser.set_defaults(handler=cmd_train)

    translate_parser = commands.add_parser("translate", parents=[common, geometry], help="Пакетный перевод")
    translate_parser.add_argument("checkpoint")
    translate_parser.add_argument("input_dir")
    translate_parser.add_argument("output_dir")
    translate_parser.add_argument("direction", choices=DIRECTIONS)
    translate_parser.set_defaults(handler=cmd_translate)

    cost_parser = commands.add_parser("analyze-cost", parents=[common], help="Модель стоимости блоков")
    cost_parser.add_argument("--kind", choices=sorted(KIND_ALIASES) + ["all"], default="all")
    cost_parser.add_argument("--sweep", nargs=2, metavar=("AXIS", "START:END"))
    cost_parser.add_argument("--values", help="Явные значения оси через запятую")
    cost_parser.add_argument("--n", type=int, default=64)
    cost_parser.add_argument("--c", type=int, default=128)
    cost_parser.add_argument("--heads", type=int, default=8)
    cost_parser.add_argument("--b", type=int, default=1)
    cost_parser.add_argument("--k", type=int, default=3)
    cost_parser.add_argument("--patch", dest="retention_patch", type=int, default=8)
    cost_parser.add_argument("--multiplier", type=float, default=2.0)
    cost_parser.set_defaults(handler=cmd_analyze_cost)

    metrics_parser = commands.add_parser("metrics", parents=[common], help="KID и FID")
    metrics_parser.add_argument("real_dir")
    metrics_parser.add_argument("fake_dir")
    metrics_parser.add_argument("--extractor-seed", dest="extractor_seed", type=int)
    metrics_parser.add_argument("--subset-size", dest="subset_size", type=int)
    metrics_parser.add_argument("--subsets", type=int)
    metrics_parser.set_defaults(handler=cmd_metrics)

    synth_parser = commands.add_parser("synth-data", parents=[common], help="Синтетический набор данных")
    synth_parser.add_argument("output_root")
    synth_parser.add_argument("--image-size", dest="image_size", type=int)
    synth_parser.add_argument("--test-count", dest="test_count", type=int)
    synth_parser.set_defaults(handler=cmd_synth_data)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Разбирает аргументы и выполняет подкоманду; ошибки MixerGAN дают код 1."""
    load_dotenv()
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "analyze-cost" and args.sweep is not None and args.sweep[0] not in SWEEP_AXES:
        parser.error(f"недопустимая ось {args.sweep[0]}, допустимо: {', '.join(SWEEP_AXES)}")
    try:
        return args.handler(args)
    except MixerGanError as e:
        logger.error("Команда завершилась с ошибкой", command=args.command, error=str(e), error_type=type(e).__name__)
        print(f"Ошибка: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        logger.info("Остановлено пользователем")
        return 130
    except Exception as e:
        logger.exception("Непредвиденная ошибка", command=args.command, error=str(e), error_type=type(e).__name__)
        raise


if __name__ == "__main__":
    sys.exit(main())
