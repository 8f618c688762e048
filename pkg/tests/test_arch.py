# -*- coding: utf-8 -*-
import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from progDilUNet.arch import (
    ConvUnit,
    NetSpec,
    ResidualBlock,
    Sequential,
    build,
    forward,
    parameter_count,
    read_netspec,
)
from progDilUNet.exceptions import ConstructionError, ShapeError
from progDilUNet.layers import Conv2d, ConvParams, softmax_xent
from progDilUNet.pduConstantes import MODEL_NAMES

SMALL = dict(base_width=2, input_size=32)


@pytest.fixture(scope="module")
def small_models():
    return {name: build(NetSpec(name, **SMALL), seed=3) for name in MODEL_NAMES}


def test_progressive_dilations(small_models):
    assert small_models["unet_progressive"].dilation_schedule() == [[1, 2, 4]] * 4


def test_dilated_head_dilations(small_models):
    sched = small_models["unet_dilated"].dilation_schedule()
    assert [b[0] for b in sched] == [1, 2, 4, 8]
    assert all(b[1:] == [1, 1] for b in sched)


def test_baseline_dilations(small_models):
    assert small_models["unet_baseline"].dilation_schedule() == [[1, 1, 1]] * 4


@pytest.mark.parametrize("name", ["unet_progressive", "unet_dilated", "unet_baseline"])
def test_conv_counts(small_models, name):
    assert small_models[name].conv_counts() == {"encoder": 16, "bridge": 4, "decoder": 17}


def test_original_layout(small_models):
    m = small_models["unet_original"]
    assert m.conv_counts() == {"encoder": 8, "bridge": 2, "decoder": 13}
    kinds = {r["kind"] for r in m.layer_summary()}
    assert "maxpool" in kinds and "strided" not in kinds


def test_dilation_adds_no_parameters(small_models):
    ref = small_models["unet_progressive"].parameters()
    for name in ("unet_dilated", "unet_baseline"):
        other = small_models[name].parameters()
        assert list(other) == list(ref)
        assert all(other[k].data.shape == ref[k].data.shape for k in ref)
        assert parameter_count(small_models[name]) == parameter_count(small_models["unet_progressive"])


def test_parameter_count_single_conv():
    conv = Conv2d(ConvParams(1, 32, 3))
    assert parameter_count(conv) == 320


def test_full_width_schedule():
    spec = NetSpec("unet_progressive")
    assert spec.widths() == [32, 64, 128, 256]
    assert spec.bridge_width == 512


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_shape_contract(small_models, name):
    m = small_models[name].eval()
    x = np.random.default_rng(0).random((2, 1, 32, 32), dtype=np.float32)
    assert forward(m, x).shape == (2, 4, 32, 32)
    assert m.forward(x[:1, :, :16, :16]).shape == (1, 4, 16, 16)
    with pytest.raises(ShapeError):
        m.forward(np.zeros((1, 1, 20, 20), np.float32))


def test_full_size_shapes():
    m = build(NetSpec("unet_progressive", base_width=1)).eval()
    assert m.forward(np.zeros((1, 1, 64, 64), np.float32)).shape == (1, 4, 64, 64)
    with pytest.raises(ShapeError):
        m.forward(np.zeros((1, 1, 100, 100), np.float32))


def test_spec_errors():
    with pytest.raises(ConstructionError):
        NetSpec("unet_fancy")
    with pytest.raises(ConstructionError):
        NetSpec("unet_progressive", input_size=100)
    with pytest.raises(ConstructionError):
        NetSpec("unet_dilated", depth=5, input_size=64)


def test_spec_text_roundtrip(tmp_path):
    spec = NetSpec("unet_dilated", base_width=4, input_size=64, depth=3)
    assert NetSpec.from_text(spec.to_text()) == spec
    fname = tmp_path / "net.txt"
    fname.write_text(spec.to_text())
    assert read_netspec(fname) == spec
    with pytest.raises(ConstructionError):
        NetSpec.from_text(spec.to_text() + "colour = red\n")


def test_same_seed_same_weights():
    a = build(NetSpec("unet_baseline", **SMALL), seed=11).parameters()
    b = build(NetSpec("unet_baseline", **SMALL), seed=11).parameters()
    c = build(NetSpec("unet_baseline", **SMALL), seed=12).parameters()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert not all(np.array_equal(a[k].data, c[k].data) for k in a)


def test_residual_block_with_zero_body_is_identity(rng):
    body = Sequential()
    body.add("conv0", ConvUnit(ConvParams(3, 3, 3, padding=1)))
    body.add("conv1", ConvUnit(ConvParams(3, 3, 3, padding=1)))
    block = ResidualBlock(body)
    x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
    assert np.array_equal(block.forward(x), x)
    block.train(False)
    assert np.array_equal(block.forward(x), x)


def test_eval_is_deterministic_and_batch_equivariant(small_models):
    m = small_models["unet_progressive"].eval()
    x = np.random.default_rng(5).random((4, 1, 32, 32), dtype=np.float32)
    y1, y2 = m.forward(x), m.forward(x)
    assert np.array_equal(y1, y2)
    perm = [2, 0, 3, 1]
    assert np.allclose(m.forward(x[perm]), y1[perm], atol=1e-5)


def test_train_mode_updates_running_stats():
    m = build(NetSpec("unet_baseline", **SMALL), seed=0)
    before = {k: v.data.copy() for k, v in m.buffers().items()}
    m.train()
    m.forward(np.random.default_rng(0).random((2, 1, 32, 32)))
    assert any(not np.array_equal(before[k], v.data) for k, v in m.buffers().items())
    m.eval()
    after = {k: v.data.copy() for k, v in m.buffers().items()}
    m.forward(np.random.default_rng(1).random((2, 1, 32, 32)))
    assert all(np.array_equal(after[k], v.data) for k, v in m.buffers().items())


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_model_gradient_finite_differences(name):
    spec = NetSpec(name, base_width=1, input_size=8, depth=1)
    model = build(spec, seed=4).astype(np.float64)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 1, 8, 8))
    y = rng.integers(0, 4, (2, 8, 8))

    def loss():
        return softmax_xent(model.forward(x), y)[0]

    model.train()
    model.zero_grad()
    _, g = softmax_xent(model.forward(x), y)
    gx = model.backward(g.data)
    assert rel_error(gx, numeric_grad(loss, x)) <= 1e-5
    for pname, t in model.parameters().items():
        num = numeric_grad(loss, t.data)
        # conv biases ahead of a batch norm have a zero gradient
        close = np.abs(t.grad - num).max() <= 1e-8
        assert close or rel_error(t.grad, num) <= 1e-5, pname
