"""
Тесты сетей: mixer-блок, проекция патчей, генератор и дискриминатор.
"""
import sys
from pathlib import Path

import numpy as np

# Добавляем корневую директорию проекта в путь
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.cost_model import retention_ratio  # noqa: E402
from src.errors import DimensionError  # noqa: E402
from src.network import (  # noqa: E402
    DiscriminatorParams,
    GeneratorParams,
    MixerBlockParams,
    channel_mixing_mlp,
    discriminator_forward,
    generator_forward,
    load_state,
    mixer_block,
    patch_project,
    patch_unproject,
    score_map_size,
    state_dict,
    token_grid,
    token_mixing_mlp,
)
from src.tensor import Tensor, mean, square, sub  # noqa: E402
from tests.gradcheck import check_gradients  # noqa: E402
from tests.runner import run_module_tests  # noqa: E402


def _block(n=4, c=3, seed=0):
    return MixerBlockParams.initialize(np.random.default_rng(seed), n, c, 2, 2)


def test_mixer_block_zero_weights_is_identity():
    params = _block(5, 4)
    for tensor in params.token_mixing_parameters() + params.channel_mixing_parameters():
        tensor.data = np.zeros_like(tensor.data)
    x = Tensor(np.random.default_rng(1).standard_normal((5, 4)))
    assert np.array_equal(mixer_block(x, params).data, x.data)


def test_mixer_block_is_isotropic():
    params = _block(64, 128)
    x = Tensor(np.random.default_rng(2).standard_normal((64, 128)))
    assert mixer_block(x, params).shape == (64, 128)
    batch = Tensor(np.random.default_rng(3).standard_normal((2, 64, 128)))
    assert mixer_block(batch, params).shape == (2, 64, 128)


def test_mixer_block_rejects_wrong_token_count():
    params = _block(4, 3)
    try:
        mixer_block(Tensor(np.zeros((5, 3))), params)
    except DimensionError as e:
        assert "n=4" in str(e)
        return
    raise AssertionError("Ожидалась DimensionError")


def test_mixer_block_gradient():
    params = _block(4, 3, seed=4)
    x = Tensor(np.random.default_rng(5).standard_normal((2, 4, 3)))
    weights = [params.token_w1, params.token_w2, params.channel_w3, params.channel_w4]
    error = check_gradients(lambda: mixer_block(x, params).sum(), weights)
    assert error < 1e-4, error


def test_mixer_block_gradient_sampled_coordinates():
    params = _block(16, 8, seed=25)
    x = Tensor(np.random.default_rng(26).standard_normal((2, 16, 8)))
    checked = [params.token_w1, params.token_b1, params.channel_w3, params.channel_w4, params.ln1_gamma]
    error = check_gradients(lambda: mean(square(mixer_block(x, params))), checked, samples=24, seed=1)
    assert error < 1e-4, error


def test_mixer_orders_differ():
    params = _block(4, 3, seed=6)
    x = Tensor(np.random.default_rng(7).standard_normal((4, 3)))
    token_first = mixer_block(x, params, "token_first").data
    channel_first = mixer_block(x, params, "channel_first").data
    assert token_first.shape == channel_first.shape
    assert not np.allclose(token_first, channel_first)


def test_token_mixing_acts_per_channel():
    params = _block(6, 5, seed=8)
    rng = np.random.default_rng(9)
    z = rng.standard_normal((6, 5))
    changed = z.copy()
    changed[:, 2] += rng.standard_normal(6)
    diff = token_mixing_mlp(Tensor(changed), params).data - token_mixing_mlp(Tensor(z), params).data
    assert np.abs(diff[:, 2]).max() > 0
    assert np.abs(np.delete(diff, 2, axis=1)).max() < 1e-12


def test_channel_mixing_acts_per_token():
    params = _block(6, 5, seed=10)
    rng = np.random.default_rng(11)
    z = rng.standard_normal((6, 5))
    changed = z.copy()
    changed[3] += rng.standard_normal(5)
    diff = channel_mixing_mlp(Tensor(changed), params).data - channel_mixing_mlp(Tensor(z), params).data
    assert np.abs(diff[3]).max() > 0
    assert np.abs(np.delete(diff, 3, axis=0)).max() < 1e-12


def test_patch_project_token_count():
    features = Tensor(np.zeros((1, 4, 64, 64)))
    weight = Tensor(np.zeros((4 * 8 * 8, 8)))
    tokens = patch_project(features, weight, Tensor(np.zeros(8)), 8)
    assert tokens.shape == (1, 64, 8)
    assert retention_ratio(8, 2) == 2.0 / 64.0


def test_patch_project_unit_patch_identity():
    rng = np.random.default_rng(12)
    values = rng.standard_normal((2, 3, 4, 5))
    tokens = patch_project(Tensor(values), Tensor(np.eye(3)), Tensor(np.zeros(3)), 1).data
    assert tokens.shape == (2, 20, 3)
    for r in range(4):
        for c in range(5):
            assert np.array_equal(tokens[:, r * 5 + c, :], values[:, :, r, c])


def test_patch_unproject_inverts_identity_projection():
    rng = np.random.default_rng(13)
    values = rng.standard_normal((2, 3, 4, 6))
    eye = Tensor(np.eye(3 * 2 * 2))
    zeros = Tensor(np.zeros(12))
    tokens = patch_project(Tensor(values), eye, zeros, 2)
    restored = patch_unproject(tokens, eye, zeros, 2, (2, 3), 3)
    assert np.array_equal(restored.data, values)


def test_patch_project_rejects_indivisible_size():
    try:
        patch_project(Tensor(np.zeros((1, 2, 6, 6))), Tensor(np.zeros((8, 4))), Tensor(np.zeros(4)), 4)
    except DimensionError:
        return
    raise AssertionError("Ожидалась DimensionError")


def _generator(image_size=32, patch_size=2, seed=0):
    return GeneratorParams.initialize(np.random.default_rng(seed), image_size, patch_size, 8, 8, 2)


def test_generator_shape_and_range():
    params = _generator()
    x = Tensor(np.random.default_rng(14).uniform(-1, 1, (2, 3, 32, 32)))
    out = generator_forward(x, params).data
    assert out.shape == (2, 3, 32, 32)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_generator_rejects_wrong_size_before_compute():
    params = _generator()
    for shape in ((1, 3, 30, 30), (1, 3, 16, 16), (1, 1, 32, 32)):
        try:
            generator_forward(Tensor(np.zeros(shape)), params)
        except DimensionError:
            continue
        raise AssertionError(f"Ожидалась DimensionError для {shape}")


def test_token_grid_geometry():
    assert token_grid(32, 2) == (4, 4)
    assert token_grid(256, 8) == (8, 8)
    try:
        token_grid(20, 2)
    except DimensionError:
        return
    raise AssertionError("Ожидалась DimensionError")


def test_generator_gradient():
    params = GeneratorParams.initialize(np.random.default_rng(15), 16, 2, 4, 4, 1)
    rng = np.random.default_rng(16)
    x = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)))
    target = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)))
    checked = [params.stem_w, params.proj_w, params.blocks[0].token_w1, params.blocks[0].channel_w4, params.up1_w, params.final_w]
    # 6 тензоров x 17 координат = 102 точки
    error = check_gradients(
        lambda: mean(square(sub(generator_forward(x, params), target))), checked, samples=17, skip_kinks=True
    )
    assert error < 1e-4, error


def test_patchgan_score_map_sizes():
    assert score_map_size(64) == 6
    assert score_map_size(32) == 2
    assert score_map_size(128) == 14
    assert score_map_size(16) == 0
    params = DiscriminatorParams.initialize(np.random.default_rng(17), base_channels=2)
    assert len(params.convs) == 5
    out = discriminator_forward(Tensor(np.zeros((2, 3, 64, 64))), params)
    assert out.shape == (2, 1, 6, 6)


def test_patchgan_rejects_tiny_input():
    params = DiscriminatorParams.initialize(np.random.default_rng(18), base_channels=2)
    try:
        discriminator_forward(Tensor(np.zeros((1, 3, 16, 16))), params)
    except DimensionError:
        return
    raise AssertionError("Ожидалась DimensionError")


def test_discriminator_minimum_input_size():
    assert score_map_size(23) == 0
    assert score_map_size(24) == 1
    patchgan = DiscriminatorParams.initialize(np.random.default_rng(18), base_channels=2)
    assert discriminator_forward(Tensor(np.zeros((1, 3, 24, 24))), patchgan).shape == (1, 1, 1, 1)

    assert score_map_size(16, "mixer") == 2
    mixer = DiscriminatorParams.initialize(
        np.random.default_rng(18), base_channels=2, kind="mixer", image_size=16, mixer_blocks=1
    )
    assert discriminator_forward(Tensor(np.zeros((1, 3, 16, 16))), mixer).shape == (1, 1, 2, 2)


def test_patchgan_gradient():
    params = DiscriminatorParams.initialize(np.random.default_rng(19), base_channels=2)
    rng = np.random.default_rng(20)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)))
    checked = [layer.weight for layer in params.convs] + [params.convs[-1].bias]
    error = check_gradients(lambda: mean(square(discriminator_forward(x, params))), checked, samples=8)
    assert error < 1e-4, error


def test_mixer_discriminator_shape():
    params = DiscriminatorParams.initialize(
        np.random.default_rng(21), base_channels=2, kind="mixer", image_size=32, mixer_blocks=1
    )
    assert params.blocks[0].tokens == 16
    out = discriminator_forward(Tensor(np.zeros((2, 3, 32, 32))), params)
    assert out.shape == (2, 1, 4, 4)
    assert score_map_size(32, "mixer") == 4


def test_state_dict_round_trip():
    source = _generator(seed=22)
    target = _generator(seed=23)
    load_state(target, state_dict(source))
    x = Tensor(np.random.default_rng(24).uniform(-1, 1, (1, 3, 32, 32)))
    assert np.array_equal(generator_forward(x, source).data, generator_forward(x, target).data)


def test_load_state_rejects_shape_mismatch():
    state = state_dict(_generator())
    other = GeneratorParams.initialize(np.random.default_rng(0), 32, 2, 8, 16, 2)
    try:
        load_state(other, state)
    except DimensionError:
        return
    raise AssertionError("Ожидалась DimensionError")


def test_parameter_names_are_unique():
    params = _generator()
    names = [name for name, _ in params.named_parameters()]
    assert len(names) == len(set(names))
    assert "blocks/1/token_w1" in names


if __name__ == "__main__":
    sys.exit(run_module_tests(dict(globals()), "Тесты сетей"))
