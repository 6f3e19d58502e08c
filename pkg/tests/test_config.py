"""
Тесты конфигурации: приоритет источников, проверка значений, хэш геометрии,
каталоги запусков.
"""
import sys
import tempfile
from pathlib import Path

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.config import (  # noqa: E402
    RunConfig,
    TrainingConfig,
    coerce_value,
    config_to_text,
    create_run_dir,
    load_config,
    parse_assignments,
    write_config,
    write_run_meta,
)
from src.errors import ConfigError  # noqa: E402
from tests.runner import run_module_tests  # noqa: E402


def test_defaults():
    config = load_config(environ={})
    assert config.learning_rate == 0.0003
    assert config.betas == (0.9, 0.999)
    assert config.lambda_cyc == 10.0
    assert config.image_pool_size == 0
    assert config.decay_start == config.total_iterations // 2


def test_precedence_file_env_flags():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "mixergan.env"
        path.write_text("seed=3\nbatch_size=4\nlearning_rate=0.001\n", encoding="utf-8")

        from_file = load_config(path, environ={})
        assert (from_file.seed, from_file.batch_size, from_file.learning_rate) == (3, 4, 0.001)

        from_env = load_config(path, environ={"MIXERGAN_SEED": "11"})
        assert from_env.seed == 11
        assert from_env.batch_size == 4

        from_flags = load_config(path, {"seed": "21", "batch_size": 8}, environ={"MIXERGAN_SEED": "11"})
        assert from_flags.seed == 21
        assert from_flags.batch_size == 8
        assert from_flags.learning_rate == 0.001


def test_unknown_key_reports_key():
    try:
        load_config(overrides={"learning_rte": "0.1"}, environ={})
    except ConfigError as e:
        assert e.key == "learning_rte"
        return
    raise AssertionError("Ожидалась ConfigError")


def test_unknown_key_in_file_reports_key():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bad.env"
        path.write_text("mixer_depth=4\n", encoding="utf-8")
        try:
            load_config(path, environ={})
        except ConfigError as e:
            assert e.key == "mixer_depth"
            return
    raise AssertionError("Ожидалась ConfigError")


def test_missing_config_file():
    try:
        load_config(Path("/nonexistent/mixergan.env"), environ={})
    except ConfigError as e:
        assert e.key == "config"
        return
    raise AssertionError("Ожидалась ConfigError")


def test_invalid_values_name_key():
    cases = {
        "learning_rate": "0",
        "image_size": "30",
        "feature_channels": "6",
        "mixer_order": "sideways",
        "lambda_cyc": "-1",
        "kid_subset_size": "1",
    }
    for key, raw in cases.items():
        try:
            load_config(overrides={key: raw}, environ={})
        except ConfigError as e:
            assert e.key == key, (key, e.key)
            continue
        raise AssertionError(f"Ожидалась ConfigError для {key}")


def test_coerce_types():
    assert coerce_value(RunConfig, "synthetic", "yes") is True
    assert coerce_value(RunConfig, "synthetic", "off") is False
    assert coerce_value(RunConfig, "betas", "0.5,0.999") == (0.5, 0.999)
    assert coerce_value(RunConfig, "batch_size", "16") == 16
    try:
        coerce_value(RunConfig, "batch_size", "many")
    except ConfigError as e:
        assert e.key == "batch_size"
        return
    raise AssertionError("Ожидалась ConfigError")


def test_parse_assignments():
    assert parse_assignments(["a=1", " b = x=y "]) == {"a": "1", "b": "x=y"}
    assert parse_assignments(None) == {}
    try:
        parse_assignments(["novalue"])
    except ConfigError:
        return
    raise AssertionError("Ожидалась ConfigError")


def test_geometry_hash_tracks_only_geometry():
    base = TrainingConfig()
    assert len(base.geometry_hash()) == 64
    assert TrainingConfig(learning_rate=0.1, seed=5).geometry_hash() == base.geometry_hash()
    assert TrainingConfig(latent_channels=128).geometry_hash() != base.geometry_hash()
    assert TrainingConfig(disc_mixer_blocks=3).geometry_hash() != base.geometry_hash()


def test_explicit_decay_start():
    config = TrainingConfig(total_iterations=100, decay_start_iteration=80)
    assert config.decay_start == 80
    try:
        TrainingConfig(total_iterations=10, decay_start_iteration=20).validate()
    except ConfigError as e:
        assert e.key == "decay_start_iteration"
        return
    raise AssertionError("Ожидалась ConfigError")


def test_written_config_reloads_identically():
    config = load_config(overrides={"seed": "9", "lambda_perc": "0.0005", "synthetic": "true"}, environ={})
    with tempfile.TemporaryDirectory() as tmp:
        path = write_config(config, Path(tmp) / "config.env")
        reloaded = load_config(path, environ={})
    assert reloaded == config
    assert "lambda_perc=0.0005" in config_to_text(config)


def test_run_dirs_never_overwrite():
    with tempfile.TemporaryDirectory() as tmp:
        first = create_run_dir(Path(tmp), "train")
        (first / "marker").write_text("x", encoding="utf-8")
        second = create_run_dir(Path(tmp), "train")
        assert first != second
        assert (first / "marker").exists()
        assert not any(second.iterdir())


def test_run_meta_contents():
    config = TrainingConfig(seed=4)
    with tempfile.TemporaryDirectory() as tmp:
        text = write_run_meta(Path(tmp), config, "train").read_text(encoding="utf-8")
    assert "command=train" in text
    assert "seed=4" in text
    assert f"geometry_hash={config.geometry_hash()}" in text


if __name__ == "__main__":
    sys.exit(run_module_tests(dict(globals()), "Тесты конфигурации"))
