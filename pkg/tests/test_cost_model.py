"""
Тесты модели стоимости блоков: формулы, проходы по осям, наклоны log-log,
сверка с реально сохраненными активациями.
"""
import sys
from dataclasses import replace
from pathlib import Path

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.cost_model import (  # noqa: E402
    CSV_HEADER,
    BlockSpec,
    activations_of,
    cost_report,
    doubling_values,
    enumerated_token_mixing_params,
    fit_loglog_slope,
    gnuplot_script,
    instrumented_token_mixing_activations,
    params_of,
    retention_ratio,
    sweep,
    to_csv,
)
from src.errors import ValidationError  # noqa: E402
from tests.runner import run_module_tests  # noqa: E402


def test_conv_residual_hand_count():
    assert params_of(BlockSpec("conv", c=4, k=3)) == 296
    assert activations_of(BlockSpec("conv", n=16, c=4, b=2)) == 2 * 2 * 16 * 4


def test_token_mixer_hand_count():
    assert params_of(BlockSpec("tm", n=64)) == 16576
    assert activations_of(BlockSpec("tm", n=64, c=128, b=1)) == 2 * 64 * 128 + 64 + 4 * 64 * 128


def test_self_attention_hand_count():
    c = 128
    assert params_of(BlockSpec("sa", c=c, h=8)) == 4 * c * c + 4 * c
    assert activations_of(BlockSpec("sa", n=64, c=c, h=8, b=1)) == 4 * 64 * c + 2 * 8 * 64 * 64


def test_token_mixer_params_ignore_channels_and_batch():
    base = params_of(BlockSpec("tm", n=32, c=16, b=1))
    for c, b in ((64, 1), (256, 4), (16, 32)):
        assert params_of(BlockSpec("tm", n=32, c=c, b=b)) == base


def test_doubling_n_growth():
    sa = [activations_of(BlockSpec("sa", n=n, c=128, h=8)) for n in (64, 128)]
    tm = [activations_of(BlockSpec("tm", n=n, c=128)) for n in (64, 128)]
    quadratic = [2 * 8 * n * n for n in (64, 128)]
    assert quadratic[1] == 4 * quadratic[0]
    tm_growth = tm[1] / tm[0]
    assert 2 <= tm_growth < 4
    assert tm_growth < sa[1] / sa[0]


def test_instrumented_count_matches_formula():
    for n in (16, 64, 256):
        for c in (8, 64):
            for b in (1, 4):
                expected = activations_of(BlockSpec("tm", n=n, c=c, b=b))
                assert instrumented_token_mixing_activations(n, c, b) == expected, (n, c, b)


def test_enumerated_params_match_formula():
    for n in (16, 64, 256):
        for c in (8, 64):
            assert enumerated_token_mixing_params(n, c) == params_of(BlockSpec("tm", n=n, c=c))


def test_retention_ratio_values():
    assert retention_ratio(8, 2) == 0.03125
    assert retention_ratio(1, 1) == 1.0
    assert retention_ratio(4, 2) == 0.125
    try:
        retention_ratio(0, 2)
    except ValidationError:
        return
    raise AssertionError("Ожидалась ValidationError")


def test_loglog_slopes_along_n():
    values = doubling_values(64, 512)
    assert values == [64, 128, 256, 512]
    sa = sweep(BlockSpec("sa", c=16, h=8), "n", values)
    tm = sweep(BlockSpec("tm", c=16), "n", values)
    sa_slope = fit_loglog_slope(values, [r.activation_floats for r in sa])
    tm_slope = fit_loglog_slope(values, [r.activation_floats for r in tm])
    assert abs(sa_slope - 2.0) <= 0.1, sa_slope
    assert abs(tm_slope - 1.0) <= 0.1, tm_slope


def test_default_sa_slope_band():
    values = doubling_values(64, 512)
    reports = sweep(BlockSpec("sa", c=128, h=8), "n", values)
    slope = fit_loglog_slope(values, [r.activation_floats for r in reports])
    assert 1.8 <= slope <= 2.0, slope


def test_wide_n_sweep_bands():
    values = doubling_values(64, 1024)
    sa = sweep(BlockSpec("sa", c=128, b=8, h=8), "n", values)
    tm = sweep(BlockSpec("tm", c=128, b=8), "n", values)
    sa_slope = fit_loglog_slope(values, [r.activation_floats for r in sa])
    tm_slope = fit_loglog_slope(values, [r.activation_floats for r in tm])
    tm_param_slope = fit_loglog_slope(values, [r.parameter_count for r in tm])
    assert 1.8 <= sa_slope <= 2.0, sa_slope
    assert 1.0 - 1e-9 <= tm_slope <= 1.2, tm_slope
    assert 1.8 <= tm_param_slope <= 2.0, tm_param_slope
    assert len({r.parameter_count for r in sa}) == 1


def test_batch_sweep_is_linear():
    values = [1, 2, 4, 8]
    for kind in ("sa", "tm", "conv"):
        reports = sweep(BlockSpec(kind, n=64, c=32, h=4), "b", values)
        first = reports[0].activation_floats
        for value, report in zip(values, reports):
            assert report.activation_floats == value * first, (kind, value)


def test_sa_params_constant_along_n():
    reports = sweep(BlockSpec("sa", c=32, h=4), "n", [16, 32, 64])
    assert len({r.parameter_count for r in reports}) == 1


def test_sweep_rejects_bad_input():
    for axis, values in (("k", [1, 2]), ("n", [64, 32]), ("n", [])):
        try:
            sweep(BlockSpec(), axis, values)
        except ValidationError:
            continue
        raise AssertionError(f"Ожидалась ValidationError для {axis} {values}")


def test_sa_requires_divisible_heads():
    try:
        params_of(BlockSpec("sa", c=30, h=8))
    except ValidationError:
        return
    raise AssertionError("Ожидалась ValidationError")


def test_csv_layout():
    reports = sweep(BlockSpec("tm", c=128), "n", doubling_values(64, 512))
    lines = to_csv("n", reports).strip().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 5
    assert lines[1].startswith("token-mixer,n,64,16576,")
    assert to_csv("n", reports, header=False).count("\n") == 4


def test_cost_report_normalizes_kind():
    report = cost_report(replace(BlockSpec(), kind="conv"))
    assert report.spec.kind == "conv-residual"
    assert "k^2c^2" in report.asymptotic


def test_gnuplot_script_references_csv():
    script = gnuplot_script("cost_n.csv", "n")
    assert "'cost_n.csv'" in script
    assert "set logscale xy" in script


if __name__ == "__main__":
    sys.exit(run_module_tests(dict(globals()), "Тесты модели стоимости"))
