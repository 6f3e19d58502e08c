"""
Сетка абляций: ширина каналов x размер патча x lambda_perc.

Каждый запуск обучается на синтетических доменах, пишет свой losses.csv,
затем переводит тестовый домен X и считает KID/FID против тестового Y.
Сводка записывается в ablation.csv каталога сетки.

Использование:
    python scripts/run_ablation.py
    python scripts/run_ablation.py --channels 32,64 --patches 2,4 --perc 0.001,0.0005,0 --iters 200
"""
import argparse
import csv
import itertools
import sys
from dataclasses import replace
from pathlib import Path

from dotenv import load_dotenv
from loguru import logger

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.cli import attach_run_log, configure_logging  # noqa: E402
from src.config import RunConfig, create_run_dir, write_config  # noqa: E402
from src.data_io import domain_specs, stack_pixels, synthesize_domain  # noqa: E402
from src.errors import MixerGanError  # noqa: E402
from src.losses import FeatureExtractor  # noqa: E402
from src.metrics import extract_features, metric_report  # noqa: E402
from src.training import load_models, train, translate  # noqa: E402

SUMMARY_HEADER = ("channels", "patch", "lambda_perc", "final_loss_cyc", "kid_x100", "kid_std_x100", "fid", "run_dir")


def parse_list(text: str, cast):
    return [cast(part) for part in text.split(",") if part.strip()]


def run_cell(grid_dir: Path, base: RunConfig, channels: int, patch: int, lambda_perc: float, test_domains) -> list:
    """Один запуск сетки; возвращает строку сводки."""
    config = replace(base, latent_channels=channels, patch_size=patch, lambda_perc=lambda_perc).validate()
    run_dir = grid_dir / f"c{channels}_p{patch}_perc{lambda_perc:g}"
    run_dir.mkdir(parents=True, exist_ok=False)
    write_config(config, run_dir / "config.env")
    handler = attach_run_log(run_dir)
    try:
        spec_a, spec_b = domain_specs(config.seed, config.synth_count, config.image_size)
        images_x = stack_pixels(synthesize_domain(spec_a))
        images_y = stack_pixels(synthesize_domain(spec_b))
        artifacts = train(config, images_x, images_y, run_dir)

        models, _ = load_models(artifacts.checkpoints[-1], config)
        test_x, test_y = test_domains
        extractor = FeatureExtractor(config.extractor_seed)
        real = extract_features(test_y, extractor)
        fake = extract_features(translate(models.G, test_x, config), extractor)
        subset = min(config.kid_subset_size, real.count, fake.count)
        report = metric_report(real, fake, subset, config.kid_subsets, config.seed)
        (run_dir / "metrics.txt").write_text(report.text(), encoding="utf-8")
        (run_dir / "metrics.csv").write_text(report.csv(), encoding="utf-8")

        final_cyc = artifacts.reports[-1].loss_cyc if artifacts.reports else float("nan")
        logger.info(
            "Ячейка сетки завершена",
            channels=channels,
            patch=patch,
            lambda_perc=lambda_perc,
            kid_x100=round(report.kid_mean_x100, 4),
            fid=round(report.fid, 4),
        )
        return [channels, patch, lambda_perc, final_cyc, report.kid_mean_x100, report.kid_std_x100, report.fid, str(run_dir)]
    finally:
        logger.remove(handler)


def main() -> int:
    parser = argparse.ArgumentParser(description="Сетка абляций MixerGAN")
    parser.add_argument("--channels", default="32,64")
    parser.add_argument("--patches", default="2,4")
    parser.add_argument("--perc", default="0.001,0.0005,0")
    parser.add_argument("--iters", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--test-count", type=int, default=32)
    parser.add_argument("--run-root", default="runs")
    args = parser.parse_args()

    load_dotenv()
    configure_logging()

    base = RunConfig(
        image_size=32,
        batch_size=4,
        total_iterations=args.iters,
        checkpoint_interval=max(1, args.iters),
        sample_interval=max(1, args.iters),
        report_interval=max(1, args.iters // 50),
        synthetic=True,
        seed=args.seed,
        run_root=args.run_root,
        kid_subset_size=16,
    ).validate()
    test_a, test_b = domain_specs(args.seed + 2, args.test_count, base.image_size)
    test_domains = (stack_pixels(synthesize_domain(test_a)), stack_pixels(synthesize_domain(test_b)))

    grid_dir = create_run_dir(Path(args.run_root), "ablation")
    grid = list(itertools.product(parse_list(args.channels, int), parse_list(args.patches, int), parse_list(args.perc, float)))
    print("=" * 70)
    print(f"СЕТКА АБЛЯЦИЙ: {len(grid)} запусков, каталог {grid_dir}")
    print("=" * 70)

    rows = []
    for channels, patch, lambda_perc in grid:
        print(f"Запуск: channels={channels}, patch={patch}, lambda_perc={lambda_perc}")
        try:
            rows.append(run_cell(grid_dir, base, channels, patch, lambda_perc, test_domains))
        except MixerGanError as e:
            logger.exception(
                "Ячейка сетки завершилась ошибкой",
                channels=channels,
                patch=patch,
                lambda_perc=lambda_perc,
                error=str(e),
                error_type=type(e).__name__,
            )
            print(f"❌ Ошибка: {e}")

    summary = grid_dir / "ablation.csv"
    with summary.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(rows)

    print("=" * 70)
    print(f"Готово: {len(rows)}/{len(grid)}, сводка {summary}")
    print("=" * 70)
    return 0 if len(rows) == len(grid) else 1


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nОстановлено пользователем.")
        sys.exit(130)
