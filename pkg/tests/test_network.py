import time

import numpy as np
import pytest

from cloudifier import ops
from cloudifier.blocks import (
    DepthwiseSeparableConv2d,
    DsResBlock,
    IncResBlock,
    Readout,
    UpsampleBranch,
    build_readout,
)
from cloudifier.errors import BuildError, ShapeError
from cloudifier.network import (
    BlockSpec,
    NetworkConfig,
    build_network,
    count_layers_and_params,
    has_pooling,
    variant_config,
)
from cloudifier.tensor import Tensor, no_grad


def zero_weights(module):
    for name, p in module.named_parameters():
        if not name.endswith(("gamma", "beta")):
            p.data[...] = 0


def x_of(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


# ------------------------------------------------------------ blocks


def test_inc_res_shape_and_layers():
    block = IncResBlock(8, 8)
    assert block(x_of((1, 16, 16, 8))).shape == (1, 16, 16, 8)
    assert block.layer_count() == 7


def test_inc_res_layer_enumeration():
    # stem, A, B(2), C(2), bottleneck
    block = IncResBlock(8, 8)
    convs = [m for m in block.modules() if m.counted_layers]
    assert len(convs) == 7


@pytest.mark.parametrize("training", [True, False])
def test_inc_res_zero_weights_is_identity(training):
    block = IncResBlock(8, 8, np.random.default_rng(1))
    zero_weights(block)
    block.train(training)
    x = x_of((2, 6, 6, 8))
    np.testing.assert_array_equal(block(x).data, x.data)


@pytest.mark.parametrize("training", [True, False])
def test_ds_res_zero_weights_is_identity(training):
    block = DsResBlock(6, 6, np.random.default_rng(1))
    zero_weights(block)
    block.train(training)
    x = x_of((2, 5, 7, 6))
    np.testing.assert_array_equal(block(x).data, x.data)


def test_ds_res_shape():
    assert DsResBlock(16, 32)(x_of((1, 12, 12, 16))).shape == (1, 12, 12, 32)


@pytest.mark.parametrize("c_in,c_out", [(16, 32), (8, 8), (4, 12), (32, 16), (1, 1)])
def test_ds_res_param_closed_form(c_in, c_out):
    block = DsResBlock(c_in, c_out)
    expected = 9 * c_in + c_in * c_out + c_out + 2 * c_out + (c_in * c_out if c_in != c_out else 0)
    assert block.param_count() == expected
    assert block.param_count() == sum(p.size for p in block.parameters())


def test_ds_res_layer_counts():
    assert DsResBlock(8, 8).layer_count() == 2
    assert DsResBlock(8, 16).layer_count() == 3
    assert DepthwiseSeparableConv2d(4, 4).layer_count() == 2


def test_block_rejects_bad_channels():
    with pytest.raises(ValueError):
        IncResBlock(0, 4)
    with pytest.raises(ValueError):
        DsResBlock(4, -1)


# ------------------------------------------------------------ upsampling


def test_upsample_stride_one_is_1x1():
    up = UpsampleBranch(6, 3, 1)
    assert up.kernel.shape == (1, 1, 3, 6)
    assert up(x_of((1, 9, 7, 6))).shape == (1, 9, 7, 3)


def test_upsample_stride_8_to_352():
    up = UpsampleBranch(64, 8, 8)
    assert up.kernel.shape == (16, 16, 8, 64)
    with no_grad():
        assert up(x_of((1, 44, 44, 64))).shape == (1, 352, 352, 8)


def test_upsample_stride_4_to_20():
    assert UpsampleBranch(4, 2, 4)(x_of((1, 5, 5, 4))).shape == (1, 20, 20, 2)


def test_upsample_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        UpsampleBranch(4, 2, 3)


# ------------------------------------------------------------ readout


def test_readout_identity():
    r = Readout(4, 4)
    r.weight.data[...] = np.eye(4)
    x = x_of((2, 3, 5, 4))
    np.testing.assert_array_equal(r([x]).data, x.data)


def test_readout_weight_shape():
    assert build_readout([3, 5], 10).weight.shape == (8, 10)


def test_readout_matches_loop_oracle():
    rng = np.random.default_rng(2)
    r = Readout(5, 3, rng)
    r.bias.data[...] = rng.standard_normal(3)
    a, b = x_of((2, 4, 3, 2), 1), x_of((2, 4, 3, 3), 2)
    out = r([a, b]).data
    merged = np.concatenate([a.data, b.data], axis=-1)
    w, bias = r.weight.data, r.bias.data
    for n in range(2):
        for i in range(4):
            for j in range(3):
                expected = np.zeros(3, dtype=np.float32)
                for c in range(3):
                    acc = np.float32(0)
                    for d in range(5):
                        acc += merged[n, i, j, d] * w[d, c]
                    expected[c] = acc + bias[c]
                np.testing.assert_allclose(out[n, i, j], expected, rtol=1e-5, atol=1e-6)


def test_readout_spatial_equivariance():
    rng = np.random.default_rng(3)
    r = Readout(6, 4, rng)
    x = x_of((1, 5, 5, 6), 4)
    perm = rng.permutation(25)
    shuffled = Tensor(x.data.reshape(1, 25, 6)[:, perm].reshape(1, 5, 5, 6))
    lhs = r([shuffled]).data.reshape(1, 25, 4)
    rhs = r([x]).data.reshape(1, 25, 4)[:, perm]
    np.testing.assert_array_equal(lhs, rhs)


def test_readout_rejects_mismatched_spatial_dims():
    with pytest.raises(ShapeError):
        Readout(5, 2)([x_of((1, 4, 4, 2)), x_of((1, 3, 4, 3))])


# ------------------------------------------------------------ networks


def test_variant_budgets():
    start = time.perf_counter()
    net109 = build_network(variant_config("cloudifier109", 11))
    assert time.perf_counter() - start <= 10
    layers, params = count_layers_and_params(net109)
    assert layers == 109
    assert 1_000_000 <= params <= 1_400_000
    assert count_layers_and_params(build_network(variant_config("cloudifier50", 11)))[0] == 50
    assert count_layers_and_params(build_network(variant_config("micro", 5)))[0] == 25


def test_param_count_is_sum_of_tensor_sizes():
    net = build_network(variant_config("cloudifier50", 11))
    assert net.param_count() == sum(p.size for p in net.parameters())


def test_no_pooling_anywhere():
    for name in ("cloudifier109", "cloudifier50", "micro"):
        net = build_network(variant_config(name, 5))
        assert not has_pooling(net)
        assert not any("pool" in type(m).__name__.lower() for m in net.modules())


def test_micro_forward_shape():
    net = build_network(variant_config("micro", 5))
    assert net.forward(x_of((1, 64, 64, 3))).shape == (1, 64, 64, 5)


def test_micro_forward_is_deterministic():
    net = build_network(variant_config("micro", 5)).eval()
    x = x_of((2, 32, 16, 3))
    with no_grad():
        np.testing.assert_array_equal(net.forward(x).data, net.forward(x).data)


def test_same_weights_any_admissible_size():
    net = build_network(variant_config("micro", 4)).eval()
    with no_grad():
        for shape in [(1, 8, 8, 3), (2, 12, 20, 3), (1, 4, 36, 3)]:
            assert net.forward(x_of(shape)).shape == shape[:3] + (4,)


def test_seed_controls_initialization():
    a = build_network(variant_config("micro", 5), seed=1).parameters()
    b = build_network(variant_config("micro", 5), seed=1).parameters()
    c = build_network(variant_config("micro", 5), seed=2).parameters()
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a, b))
    assert not all(np.array_equal(p.data, q.data) for p, q in zip(a, c))


def test_indivisible_input_names_the_multiple():
    net = build_network(variant_config("micro", 5))
    with pytest.raises(ShapeError, match="multiples of 4"):
        net.forward(x_of((1, 30, 32, 3)))
    with pytest.raises(ShapeError):
        net.forward(x_of((1, 32, 32, 1)))


def test_max_downsample():
    assert variant_config("cloudifier109").max_downsample == 16
    assert variant_config("cloudifier50").max_downsample == 16
    assert variant_config("micro").max_downsample == 4


def test_descriptor_round_trip():
    for name in ("cloudifier109", "cloudifier50", "micro"):
        cfg = variant_config(name, 7)
        assert NetworkConfig.from_descriptor(cfg.to_descriptor()) == cfg


def test_build_errors():
    with pytest.raises(BuildError, match="unknown variant"):
        variant_config("resnet")
    good = variant_config("micro", 5)
    with pytest.raises(BuildError, match="counted"):
        build_network(NetworkConfig(good.stages, 5, "micro", 24))
    with pytest.raises(BuildError):
        build_network(NetworkConfig(good.stages, 1, "micro", 25))
    with pytest.raises(BuildError):
        BlockSpec("IncRes", 8, stride=2).validate()
    with pytest.raises(BuildError):
        BlockSpec("DsRes", 0).validate()
    with pytest.raises(BuildError):
        BlockSpec("Pool", 8).validate()
    untapped = tuple(BlockSpec(s.kind, s.out_maps, s.stride) for s in good.stages)
    with pytest.raises(BuildError, match="tapped"):
        build_network(NetworkConfig(untapped, 5, "micro", 25))
    with pytest.raises(BuildError):
        NetworkConfig.from_descriptor("format=other\n")


def test_forward_preserves_batch():
    net = build_network(variant_config("micro", 3)).eval()
    with no_grad():
        assert net.forward(x_of((3, 8, 8, 3))).shape[0] == 3


def test_full_size_forward_shape():
    net = build_network(variant_config("micro", 5)).eval()
    with no_grad():
        assert net.forward(x_of((1, 352, 352, 3))).shape == (1, 352, 352, 5)
