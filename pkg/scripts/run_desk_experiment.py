"""
Эксперимент на синтетической задаче красный <-> синий (32x32).

Для каждого seed обучает CycleGAN с mixer-генераторами и проверяет:
  (a) цикловая потеря на обучающих изображениях < 0.05;
  (b) разрыв средних каналов mean(red - blue) у G(X) противоположен по знаку
      исходному домену и по модулю не меньше половины разрыва домена Y;
  (c) KID между G(X) и Y падает ниже 25% от значения на итерации 0.

Эксперимент считается пройденным, если критерии выполнены хотя бы для двух seed.

Использование:
    python scripts/run_desk_experiment.py
    python scripts/run_desk_experiment.py --seeds 0,1,2 --iters 2000
"""
import argparse
import csv
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from dotenv import load_dotenv
from loguru import logger

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.cli import attach_run_log, configure_logging  # noqa: E402
from src.config import RunConfig, create_run_dir, write_config, write_run_meta  # noqa: E402
from src.data_io import domain_specs, stack_pixels, synthesize_domain  # noqa: E402
from src.errors import MixerGanError  # noqa: E402
from src.losses import FeatureExtractor  # noqa: E402
from src.metrics import extract_features, kid  # noqa: E402
from src.training import build_models, cycle_loss_value, load_models, train, translate  # noqa: E402

CYCLE_THRESHOLD = 0.05
GAP_FRACTION = 0.5
KID_RATIO = 0.25
REQUIRED_PASSES = 2
TIME_LIMIT_MINUTES = 30.0

# Ширина каналов задачи: c_feat = 64, d_token = 2 * c_feat
DESK_CHANNELS = 64
RESULT_HEADER = (
    "seed", "cycle_loss", "source_gap", "translated_gap", "target_gap",
    "kid_start", "kid_final", "kid_ratio", "minutes", "passed",
)


@dataclass
class SeedResult:
    seed: int
    cycle_loss: float
    source_gap: float
    translated_gap: float
    target_gap: float
    kid_start: float
    kid_final: float
    minutes: float = 0.0

    @property
    def kid_ratio(self) -> float:
        if self.kid_start <= 0:
            return float("inf")
        return self.kid_final / self.kid_start

    @property
    def cycle_ok(self) -> bool:
        return self.cycle_loss < CYCLE_THRESHOLD

    @property
    def gap_ok(self) -> bool:
        opposite = np.sign(self.translated_gap) == -np.sign(self.source_gap)
        return bool(opposite and abs(self.translated_gap) >= GAP_FRACTION * abs(self.target_gap))

    @property
    def kid_ok(self) -> bool:
        return self.kid_ratio < KID_RATIO

    @property
    def time_ok(self) -> bool:
        return self.minutes < TIME_LIMIT_MINUTES

    @property
    def passed(self) -> bool:
        return self.cycle_ok and self.gap_ok and self.kid_ok and self.time_ok

    def row(self) -> list:
        return [
            self.seed, self.cycle_loss, self.source_gap, self.translated_gap, self.target_gap,
            self.kid_start, self.kid_final, self.kid_ratio, round(self.minutes, 2), int(self.passed),
        ]


def channel_gap(images: np.ndarray) -> float:
    """Среднее (red - blue) по всем пикселям."""
    return float((images[:, 0] - images[:, 2]).mean())


def desk_config(seed: int, iterations: int, run_root: str) -> RunConfig:
    return RunConfig(
        image_size=32,
        patch_size=2,
        feature_channels=DESK_CHANNELS,
        latent_channels=2 * DESK_CHANNELS,
        disc_channels=DESK_CHANNELS // 2,
        batch_size=4,
        learning_rate=0.0003,
        lambda_cyc=10.0,
        lambda_perc=0.0,
        total_iterations=iterations,
        checkpoint_interval=max(1, iterations),
        sample_interval=max(1, iterations // 4),
        report_interval=max(1, iterations // 100),
        synthetic=True,
        synth_count=64,
        seed=seed,
        run_root=run_root,
    ).validate()


def kid_value(extractor: FeatureExtractor, fake: np.ndarray, target: np.ndarray, seed: int) -> float:
    subset = min(50, len(fake), len(target))
    mean, _ = kid(extract_features(target, extractor), extract_features(fake, extractor), subset, 10, seed)
    return mean


def run_seed(seed: int, iterations: int, run_root: Path) -> SeedResult:
    started = time.perf_counter()
    config = desk_config(seed, iterations, str(run_root))
    run_dir = create_run_dir(run_root, f"desk_seed{seed}")
    write_config(config, run_dir / "config.env")
    write_run_meta(run_dir, config, "desk-experiment")
    handler = attach_run_log(run_dir)
    try:
        spec_a, spec_b = domain_specs(seed, config.synth_count, config.image_size)
        images_x = stack_pixels(synthesize_domain(spec_a))
        images_y = stack_pixels(synthesize_domain(spec_b))
        extractor = FeatureExtractor(config.extractor_seed)

        initial = build_models(config)
        kid_start = kid_value(extractor, translate(initial.G, images_x, config), images_y, seed)

        artifacts = train(config, images_x, images_y, run_dir)
        models, _ = load_models(artifacts.checkpoints[-1], config)
        fake_y = translate(models.G, images_x, config)

        result = SeedResult(
            seed=seed,
            cycle_loss=cycle_loss_value(models, images_x, images_y, config),
            source_gap=channel_gap(images_x),
            translated_gap=channel_gap(fake_y),
            target_gap=channel_gap(images_y),
            kid_start=kid_start,
            kid_final=kid_value(extractor, fake_y, images_y, seed),
            minutes=(time.perf_counter() - started) / 60.0,
        )
        logger.info(
            "Seed завершен",
            seed=seed,
            cycle_loss=round(result.cycle_loss, 5),
            translated_gap=round(result.translated_gap, 4),
            kid_ratio=round(result.kid_ratio, 4),
            minutes=round(result.minutes, 2),
            passed=result.passed,
        )
        return result
    finally:
        logger.remove(handler)


def print_result(result: SeedResult) -> None:
    mark = "✅" if result.passed else "❌"
    print(f"{mark} seed {result.seed}")
    print(f"   цикловая потеря: {result.cycle_loss:.4f} (порог {CYCLE_THRESHOLD})")
    print(
        f"   разрыв каналов: X {result.source_gap:+.4f}, G(X) {result.translated_gap:+.4f}, "
        f"Y {result.target_gap:+.4f}"
    )
    print(f"   KID: {result.kid_start:.5f} -> {result.kid_final:.5f} (отношение {result.kid_ratio:.3f})")
    print(f"   время: {result.minutes:.1f} мин (лимит {TIME_LIMIT_MINUTES:.0f})")


def write_results(results: list, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RESULT_HEADER)
        for result in results:
            writer.writerow(result.row())
    logger.info("Итоги эксперимента записаны", path=str(path), seeds=len(results))
    return path


def main() -> int:
    parser = argparse.ArgumentParser(description="Эксперимент красный <-> синий")
    parser.add_argument("--seeds", default="0,1,2", help="Seed через запятую")
    parser.add_argument("--iters", type=int, default=2000)
    parser.add_argument("--run-root", default="runs")
    args = parser.parse_args()

    load_dotenv()
    configure_logging()
    seeds = [int(s) for s in args.seeds.split(",")]

    print("=" * 70)
    print("ЭКСПЕРИМЕНТ: красный <-> синий, 32x32")
    print("=" * 70)
    results = []
    for seed in seeds:
        try:
            result = run_seed(seed, args.iters, Path(args.run_root))
        except MixerGanError as e:
            logger.exception("Seed завершился ошибкой", seed=seed, error=str(e), error_type=type(e).__name__)
            print(f"❌ seed {seed}: {e}")
            continue
        results.append(result)
        print_result(result)

    summary = write_results(results, Path(args.run_root) / "desk_results.csv")
    passed = sum(1 for r in results if r.passed)
    print("=" * 70)
    print(f"Пройдено: {passed}/{len(seeds)} (нужно {REQUIRED_PASSES})")
    print(f"Итоги: {summary}")
    print("=" * 70)
    return 0 if passed >= min(REQUIRED_PASSES, len(seeds)) else 1


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nОстановлено пользователем.")
        sys.exit(130)
