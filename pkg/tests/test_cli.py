"""
Сквозные тесты командной строки: train, translate, analyze-cost, metrics,
synth-data. Все запуски пишутся во временный каталог (--run-root).
"""
import io
import sys
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import numpy as np
from loguru import logger

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.cli import build_parser, configure_logging, main, resolve_config, settings_banner  # noqa: E402
from src.config import load_config  # noqa: E402
from src.data_io import (  # noqa: E402
    SyntheticDomainSpec,
    domain_specs,
    load_image_dir,
    stack_pixels,
    synthesize_domain,
    write_domain,
)
from src.training import load_models, translate  # noqa: E402
from tests.runner import run_module_tests  # noqa: E402

TINY = [
    "--image-size", "32",
    "--patch", "4",
    "--channels", "8",
    "--batch", "2",
    "--set", "feature_channels=4",
    "--set", "mixer_blocks=1",
    "--set", "disc_channels=2",
    "--set", "synth_count=4",
    "--set", "checkpoint_interval=1000",
    "--set", "sample_interval=1000",
]


def run_cli(argv):
    stdout, stderr = io.StringIO(), io.StringIO()
    with redirect_stdout(stdout), redirect_stderr(stderr):
        try:
            code = main(argv)
        except SystemExit as e:
            code = e.code
    return code, stdout.getvalue(), stderr.getvalue()


def find_checkpoints(run_root: Path):
    return sorted(run_root.glob("train_*/checkpoints/*.ckpt"))


def test_train_synthetic_emits_checkpoint():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        code, out, err = run_cli(["train", "--synthetic", "--iters", "10", "--run-root", str(root)] + TINY)
        assert code == 0, err
        assert "Чекпоинтов: 1" in out
        checkpoints = find_checkpoints(root)
        assert [p.name for p in checkpoints] == ["checkpoint_000010.ckpt"]
        run_dir = checkpoints[0].parent.parent
        assert (run_dir / "config.env").exists()
        assert (run_dir / "run_meta.env").exists()
        assert (run_dir / "losses.csv").exists()
        assert list((run_dir / "logs").glob("mixergan_*.log"))


def test_settings_banner_reflects_flags():
    args = build_parser().parse_args(["train", "--lr", "0.0003", "--batch", "16", "--channels", "256"])
    banner = settings_banner(resolve_config(args))
    assert "learning_rate = 0.0003" in banner
    assert "batch_size = 16" in banner
    assert "latent_channels = 256" in banner
    assert "geometry_hash = " in banner


def test_console_log_shows_structured_fields():
    stderr = io.StringIO()
    with redirect_stderr(stderr):
        configure_logging()
        logger.warning("Итерация завершена", iteration=17, loss_G=0.4321)
    configure_logging()
    line = stderr.getvalue()
    assert "Итерация завершена" in line
    assert "'iteration': 17" in line
    assert "'loss_G': 0.4321" in line


def test_train_missing_data_root_names_path():
    with tempfile.TemporaryDirectory() as tmp:
        missing = Path(tmp) / "no_such_data"
        code, _, err = run_cli(
            ["train", "--data-root", str(missing), "--iters", "1", "--run-root", str(Path(tmp) / "runs")] + TINY
        )
        assert code == 1
        assert str(missing) in err


def test_unknown_config_key_fails():
    with tempfile.TemporaryDirectory() as tmp:
        code, _, err = run_cli(["train", "--synthetic", "--set", "mixer_depth=3", "--run-root", tmp])
        assert code == 1
        assert "mixer_depth" in err


def test_translate_round_trip_matches_cycle_loss():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        code, _, err = run_cli(["train", "--synthetic", "--iters", "2", "--run-root", str(root / "runs")] + TINY)
        assert code == 0, err
        checkpoint = find_checkpoints(root / "runs")[-1]

        spec_a, _ = domain_specs(seed=0, count=3, image_size=32)
        write_domain(root / "input", synthesize_domain(spec_a))
        common = ["--run-root", str(root / "runs")] + TINY
        code, out, err = run_cli(["translate", str(checkpoint), str(root / "input"), str(root / "fake"), "X2Y"] + common)
        assert code == 0, err
        assert "Переведено изображений: 3" in out
        code, _, err = run_cli(["translate", str(checkpoint), str(root / "fake"), str(root / "rec"), "Y2X"] + common)
        assert code == 0, err

        inputs = load_image_dir(root / "input")
        fakes = load_image_dir(root / "fake")
        recs = load_image_dir(root / "rec")
        assert [Path(r.source).name for r in fakes] == [Path(r.source).name for r in inputs]
        assert all(r.pixels.shape == (3, 32, 32) for r in fakes + recs)

        x = stack_pixels(inputs)
        round_trip = float(np.abs(stack_pixels(recs) - x).mean())
        config = load_config(overrides=dict(
            image_size=32, patch_size=4, latent_channels=8, batch_size=2,
            feature_channels=4, mixer_blocks=1, disc_channels=2,
        ), environ={})
        models, _ = load_models(checkpoint, config)
        direct = float(np.abs(translate(models.F, translate(models.G, x, config), config) - x).mean())
        assert abs(round_trip - direct) < 0.05, (round_trip, direct)


def test_translate_empty_directory():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        (root / "empty").mkdir()
        code, out, _ = run_cli(
            ["translate", str(root / "none.ckpt"), str(root / "empty"), str(root / "out"), "X2Y", "--run-root", str(root / "runs")]
        )
        assert code == 0
        assert "Переведено изображений: 0" in out


def test_translate_corrupted_checkpoint_exits_cleanly():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        spec_a, _ = domain_specs(seed=0, count=1, image_size=32)
        write_domain(root / "input", synthesize_domain(spec_a))
        broken = root / "broken.ckpt"
        broken.write_bytes(b"MXGANCKP" + (1).to_bytes(4, "little") + b"\xff" * 64 + bytes(4))
        code, _, err = run_cli(
            ["translate", str(broken), str(root / "input"), str(root / "out"), "X2Y", "--run-root", str(root / "runs")]
            + TINY
        )
        assert code == 1
        assert str(broken) in err
        assert "Traceback" not in err


def test_translate_rejects_bad_direction():
    code, _, _ = run_cli(["translate", "a.ckpt", "in", "out", "SIDEWAYS"])
    assert code == 2


def test_analyze_cost_token_mixer_sweep():
    with tempfile.TemporaryDirectory() as tmp:
        code, out, err = run_cli(["analyze-cost", "--kind", "tm", "--sweep", "n", "64:512", "--run-root", tmp])
        assert code == 0, err
        rows = [line for line in out.splitlines() if line.startswith("token-mixer,")]
        assert len(rows) == 4
        assert "Доля сохраняемой размерности патча: 0.03125" in out
        assert "Наклон log-log активаций (token-mixer): 1.000" in out
        csv_files = list(Path(tmp).glob("analyze-cost_*/cost_n.csv"))
        assert len(csv_files) == 1
        assert len(csv_files[0].read_text(encoding="utf-8").strip().splitlines()) == 5
        assert list(Path(tmp).glob("analyze-cost_*/cost_n.gnuplot"))


def test_analyze_cost_all_kinds_default():
    with tempfile.TemporaryDirectory() as tmp:
        code, out, _ = run_cli(["analyze-cost", "--run-root", tmp])
        assert code == 0
        for kind in ("self-attention", "token-mixer", "conv-residual"):
            assert f"{kind},n,64," in out


def test_analyze_cost_rejects_invalid_input():
    for argv in (["analyze-cost", "--kind", "rnn"], ["analyze-cost", "--sweep", "q", "1:4"]):
        code, _, _ = run_cli(argv)
        assert code == 2, argv


def test_metrics_same_directory_twice():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        write_domain(root / "images", synthesize_domain(SyntheticDomainSpec(count=64, image_size=16, seed=5)))
        code, out, err = run_cli([
            "metrics", str(root / "images"), str(root / "images"),
            "--subset-size", "16", "--subsets", "10", "--run-root", str(root / "runs"),
        ])
        assert code == 0, err
        assert "KID x100: " in out
        csv_path = next((root / "runs").glob("metrics_*/metrics.csv"))
        header, row = csv_path.read_text(encoding="utf-8").strip().splitlines()
        values = dict(zip(header.split(","), row.split(",")))
        kid_mean, kid_std, fid = float(values["kid_mean_x100"]), float(values["kid_std_x100"]), float(values["fid"])
        assert fid < 1e-8, fid
        assert abs(kid_mean) < 3 * kid_std, (kid_mean, kid_std)


def test_metrics_rejects_too_few_images():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        write_domain(root / "images", synthesize_domain(SyntheticDomainSpec(count=8, image_size=16)))
        code, _, err = run_cli([
            "metrics", str(root / "images"), str(root / "images"),
            "--subset-size", "16", "--run-root", str(root / "runs"),
        ])
        assert code == 1
        assert "subset_size=16" in err


def test_synth_data_layout():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "data"
        code, _, err = run_cli([
            "synth-data", str(root), "--image-size", "16", "--test-count", "2",
            "--set", "synth_count=3", "--run-root", tmp,
        ])
        assert code == 0, err
        counts = {name: len(list((root / name).glob("*.ppm"))) for name in ("trainA", "trainB", "testA", "testB")}
        assert counts == {"trainA": 3, "trainB": 3, "testA": 2, "testB": 2}
        assert not np.array_equal(
            load_image_dir(root / "trainA")[0].pixels, load_image_dir(root / "testA")[0].pixels
        )


if __name__ == "__main__":
    sys.exit(run_module_tests(dict(globals()), "Тесты командной строки"))
