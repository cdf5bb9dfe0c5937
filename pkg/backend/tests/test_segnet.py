# tests/test_segnet.py

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import ConfigurationError, ShapeError
from app.core.gradcheck import grad_check
from app.core.losses import total_loss
from app.core.params import ModelParams
from app.core.segnet import cross_conv_block, expected_param_shapes, forward, forward_tensors, init_params
from app.core.tensor import Tensor, sigmoid
from app.schemas.dataset import Episode
from app.schemas.network import NetworkConfig
from app.schemas.training import LossWeights


def _episode(rng, k: int, size: int) -> Episode:
    masks = [Tensor((rng.random((1, size, size)) > 0.6).astype(np.float32)) for _ in range(k)]
    return Episode(
        query_image=Tensor(rng.random((1, size, size))),
        query_mask=Tensor((rng.random((1, size, size)) > 0.6).astype(np.float32)),
        support_images=[Tensor(rng.random((1, size, size))) for _ in range(k)],
        support_masks=masks,
    )


def _conv3x3_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    cin, h, wd = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[0], h, wd))
    for i in range(h):
        for j in range(wd):
            patch = padded[:, i:i + 3, j:j + 3]
            out[:, i, j] = np.tensordot(w, patch, axes=([1, 2, 3], [0, 1, 2])) + b
    return out


def test_output_shape(rng):
    config = NetworkConfig()
    params = init_params(config, seed=0)
    logits = forward(_episode(rng, k=2, size=32), params, config)
    assert logits.shape == (1, 32, 32)
    assert logits.is_finite()


def test_forward_is_deterministic(rng, tiny_network):
    params = init_params(tiny_network, seed=3)
    episode = _episode(rng, k=3, size=16)
    first = forward(episode, params, tiny_network)
    second = forward(episode, params, tiny_network)
    assert first.data.tobytes() == second.data.tobytes()


@pytest.mark.parametrize("use_attention", [True, False])
def test_support_permutation_leaves_logits_unchanged(rng, tiny_network, use_attention):
    network = tiny_network.model_copy(update={"use_attention": use_attention})
    params = init_params(network, seed=1)
    episode = _episode(rng, k=3, size=16)
    order = [2, 0, 1]
    permuted = episode.model_copy(
        update={
            "support_images": [episode.support_images[j] for j in order],
            "support_masks": [episode.support_masks[j] for j in order],
        }
    )
    np.testing.assert_allclose(
        forward(permuted, params, network).data, forward(episode, params, network).data, atol=1e-5
    )


def test_attention_switch_changes_parameter_set(tiny_network):
    with_attention = init_params(tiny_network, seed=0)
    without = init_params(tiny_network.model_copy(update={"use_attention": False}), seed=0)
    assert any("attention" in name for name in with_attention.names())
    assert not any("attention" in name for name in without.names())
    assert without.num_parameters() < with_attention.num_parameters()


def test_init_params_deterministic(tiny_network):
    assert init_params(tiny_network, seed=5).equals(init_params(tiny_network, seed=5))
    assert not init_params(tiny_network, seed=5).equals(init_params(tiny_network, seed=6))


def test_init_params_biases_zero_and_weights_he_scaled():
    params = init_params(NetworkConfig(), seed=0)
    for name, tensor in params.items():
        if name.endswith("bias"):
            assert not np.any(tensor.data)
    weight = params["decoder.0.cross.weight"].data.astype(np.float64)
    fan_in = int(np.prod(weight.shape[1:]))
    assert weight.size > 10000
    assert abs(weight.var() - 2.0 / fan_in) < 0.2 * (2.0 / fan_in)


@pytest.mark.parametrize("use_attention", [True, False])
def test_all_zero_weights_give_zero_logits(rng, tiny_network, use_attention):
    config = tiny_network.model_copy(update={"use_attention": use_attention})
    params = init_params(config, seed=0)
    zeroed = ModelParams({name: Tensor.zeros(tensor.shape, dtype=tensor.dtype) for name, tensor in params.items()})
    logits = forward(_episode(rng, k=3, size=16), zeroed, config)
    assert logits.shape == (1, 16, 16)
    assert not np.any(logits.data)


def test_expected_param_shapes_match_init(tiny_network):
    params = init_params(tiny_network, seed=9)
    assert {n: t.shape for n, t in params.items()} == expected_param_shapes(tiny_network)


def test_cross_conv_block_matches_per_item_oracle(rng):
    support = rng.normal(size=(2, 3, 5, 5))
    query = rng.normal(size=(2, 5, 5))
    weight = rng.normal(size=(4, 5, 3, 3))
    bias = rng.normal(size=4)
    s_out, q_out = cross_conv_block(
        Tensor(support, dtype=np.float64), Tensor(query, dtype=np.float64),
        Tensor(weight, dtype=np.float64), Tensor(bias, dtype=np.float64), 0.01,
    )
    expected = []
    for j in range(2):
        z = _conv3x3_oracle(np.concatenate([query, support[j]]), weight, bias)
        expected.append(np.where(z > 0, z, 0.01 * z))
    expected = np.stack(expected)
    np.testing.assert_allclose(s_out.data, expected, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(q_out.data, expected.mean(axis=0), rtol=1e-5, atol=1e-8)


def test_cross_conv_block_single_item(rng):
    weight = Tensor(rng.normal(size=(4, 3, 3, 3)))
    s_out, q_out = cross_conv_block(
        Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 4, 4))), weight, Tensor.zeros((4,)), 0.01
    )
    np.testing.assert_array_equal(q_out.data, s_out.data[0])


def test_cross_conv_block_identical_items(rng):
    item = rng.normal(size=(2, 4, 4))
    s_out, q_out = cross_conv_block(
        Tensor(np.stack([item, item])), Tensor(rng.normal(size=(1, 4, 4))),
        Tensor(rng.normal(size=(3, 3, 3, 3))), Tensor.zeros((3,)), 0.01,
    )
    np.testing.assert_array_equal(s_out.data[0], s_out.data[1])
    np.testing.assert_allclose(q_out.data, s_out.data[0], atol=1e-6)


def test_cross_conv_block_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        cross_conv_block(
            Tensor.zeros((2, 3, 4, 4)), Tensor.zeros((2, 4, 4)), Tensor.zeros((4, 4, 3, 3)), Tensor.zeros((4,)), 0.01
        )


def test_indivisible_input_size_is_configuration_error(rng):
    config = NetworkConfig()
    with pytest.raises(ConfigurationError, match="2\\^\\(levels-1\\)"):
        forward(_episode(rng, k=1, size=18), init_params(config, seed=0), config)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"levels": 2, "channels": [4, 8, 16]},
        {"levels": 2, "channels": [4, 6], "ratio": 4},
        {"levels": 1, "channels": [4]},
    ],
)
def test_invalid_network_config(kwargs):
    with pytest.raises(ValidationError):
        NetworkConfig(**kwargs)


def _loss_fn(network: NetworkConfig, params: ModelParams, episode: Episode, replace: str | None = None):
    weights = LossWeights()
    support_images = Tensor(np.stack([t.data for t in episode.support_images]), dtype=np.float64)
    support_masks = Tensor(np.stack([t.data for t in episode.support_masks]), dtype=np.float64)
    query_image = Tensor(episode.query_image.data, dtype=np.float64)

    def fn(t: Tensor) -> Tensor:
        if replace is None:
            used, image = params, t
        else:
            used = ModelParams({n: (t if n == replace else p) for n, p in params.items()})
            image = query_image
        logits = forward_tensors(image, support_images, support_masks, used, network)
        return total_loss(sigmoid(logits), episode.query_mask, weights)

    return fn


@pytest.mark.parametrize("name", ["head.weight", "query_stem.weight", "encoder.1.attention.q.weight"])
def test_full_forward_grad_check_weights(rng, tiny_network, name):
    params = init_params(tiny_network, seed=0).astype(np.float64)
    episode = _episode(rng, k=2, size=16)
    fn = _loss_fn(tiny_network, params, episode, replace=name)
    assert grad_check(fn, params[name], eps=1e-5) < 1e-2


def test_full_forward_grad_check_query_image(rng, tiny_network):
    params = init_params(tiny_network, seed=0).astype(np.float64)
    episode = _episode(rng, k=2, size=16)
    fn = _loss_fn(tiny_network, params, episode)
    assert grad_check(fn, Tensor(episode.query_image.data, dtype=np.float64), eps=1e-5) < 1e-2
