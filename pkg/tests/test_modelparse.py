import random

import pytest

from instmeter.modelparse import (
    ModelError,
    ShapeWarning,
    load_model,
    lower_layers,
    model_macs,
    operator_macs,
    out_dim,
)


def conv(**kw):
    p = {"in_h": 32, "in_w": 32, "in_c": 3, "out_c": 8, "kh": 3, "kw": 3}
    p.update(kw)
    return {"type": "Conv2D", "params": p}


def test_two_layer_model():
    m = load_model({"name": "m", "layers": [conv(), {"type": "ReLU", "params": {"n": 10}}], "source": "x"})
    assert [l.layer_type for l in m.layers] == ["Conv2D", "ReLU"]
    assert m.metadata == {"source": "x"}


@pytest.mark.parametrize(
    "doc, msg",
    [
        ({"name": "m", "layers": [{"type": "LSTM", "params": {}}]}, "unsupported layer type 'LSTM'"),
        ({"name": "m", "layers": [{"type": "Conv2D", "params": {"in_h": 1, "in_w": 1, "in_c": 1, "out_c": 1, "kh": 1}}]},
         "missing required parameter.*kw"),
        ({"name": "m", "layers": [conv(kh=2.5)]}, "integer"),
        ({"name": "m", "layers": [conv(stride=0)]}, "stride"),
        ({"name": "", "layers": []}, "name"),
        ({"name": "m", "layers": {}}, "list"),
    ],
)
def test_load_errors(doc, msg):
    with pytest.raises(ModelError, match=msg):
        load_model(doc)


def test_batchnorm_lowers_to_add_mul():
    ops = lower_layers(load_model({"name": "m", "layers": [{"type": "BatchNormalization", "params": {"h": 8, "w": 8, "c": 16}}]}))
    assert [(o.op_type, dict(o.params)) for o in ops] == [("Add", {"n": 1024}), ("Mul", {"n": 1024})]


def test_conv_output_dims():
    (op,) = lower_layers(load_model({"name": "m", "layers": [conv(stride=1, pad=0)]}))
    assert op.params["out_h"] == 30 and op.params["out_w"] == 30 and op.params["batch"] == 1
    assert op.params["in_h"] == 32  # given params kept verbatim


def test_relu_passthrough_and_hwc():
    ops = lower_layers(load_model({"name": "m", "layers": [{"type": "ReLU", "params": {"n": 77}},
                                                            {"type": "Add", "params": {"h": 2, "w": 3, "c": 4}}]}))
    assert ops[0].op_type == "ReLU" and dict(ops[0].params) == {"n": 77}
    assert ops[1].params["n"] == 24


def test_depthwise_out_c_and_conflict():
    dw = {"type": "DepthConv2D", "params": {"in_h": 9, "in_w": 9, "in_c": 4, "kh": 3, "kw": 3, "depth_multiplier": 2}}
    (op,) = lower_layers(load_model({"name": "m", "layers": [dw]}))
    assert op.params["out_c"] == 8 and op.params["out_h"] == 7
    with pytest.raises(ModelError, match="out_h"):
        lower_layers(load_model({"name": "m", "layers": [conv(out_h=5)]}))


def test_underflow_clamps_with_warning():
    with pytest.warns(ShapeWarning):
        (op,) = lower_layers(load_model({"name": "m", "layers": [conv(in_h=2, kh=5)]}))
    assert op.params["out_h"] == 0


def test_random_shapes_match_recomputation():
    rng = random.Random(11)
    for _ in range(50):
        size, k, s, pad = rng.randint(1, 64), rng.randint(1, 7), rng.randint(1, 4), rng.randint(0, 3)
        # direct oracle: count window start positions that fit in the padded input
        want = len(range(-pad, size + pad - k + 1, s))
        if size + 2 * pad < k:
            with pytest.warns(ShapeWarning):
                assert out_dim(size, k, s, pad) == 0
        else:
            assert out_dim(size, k, s, pad) == want


def test_lowering_length_and_macs():
    m = load_model({"name": "m", "layers": [conv(), {"type": "BatchNormalization", "params": {"h": 1, "w": 1, "c": 1}},
                                            {"type": "FullyConnected", "params": {"in_features": 10, "out_features": 4}}]})
    ops = lower_layers(m)
    assert len(ops) >= len(m.layers)
    assert operator_macs(ops[0]) == 30 * 30 * 8 * 3 * 3 * 3
    assert operator_macs(ops[1]) == 0
    assert model_macs(ops) == 30 * 30 * 8 * 27 + 40
