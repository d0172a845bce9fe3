import numpy as np
import pytest

from xbarsim import netgraph, tensorio
from xbarsim.netgraph import (NetError, build_network, conv_out_hw,
                              conv_weight_matrix, fidelity, im2col, run_cim,
                              run_reference, run_software, softmax)

from conftest import LOSSLESS_ADC, make_cfg

ARCH = {"subarray_rows": 64, "subarray_cols": 64, "adc_share": 8}


def exact_cfg(**over):
    base = dict(
        quant={"weight_bits": 8, "input_bits": 8},
        mapping={"design": "Design1", "cell_bits": 4,
                 "input_sign_mode": "twos-complement"},
        device="ideal",
        adc=LOSSLESS_ADC,
        arch=ARCH,
    )
    base.update(over)
    return make_cfg(**base)


# ---------------------------------------------------------------------------
# im2col / conv lowering
# ---------------------------------------------------------------------------

def oracle_im2col(x, kk, stride, pad):
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = conv_out_hw(h, w, kk, stride, pad)
    out = np.zeros((b, oh * ow, c * kk * kk), dtype=x.dtype)
    for bi in range(b):
        p = 0
        for i in range(oh):
            for j in range(ow):
                patch = xp[bi, :, i * stride:i * stride + kk,
                           j * stride:j * stride + kk]
                out[bi, p] = patch.reshape(-1)
                p += 1
    return out


@pytest.mark.parametrize("shape,kk,stride,pad", [
    ((2, 1, 8, 8), 3, 1, 0),
    ((1, 3, 7, 9), 3, 2, 1),
    ((2, 2, 5, 5), 1, 1, 0),
    ((1, 2, 6, 6), 4, 2, 2),
])
def test_im2col_matches_loop_oracle(shape, kk, stride, pad, rng):
    x = rng.integers(-5, 6, size=shape).astype(np.float64)
    assert np.array_equal(im2col(x, kk, stride, pad),
                          oracle_im2col(x, kk, stride, pad))


def test_conv_lowering_matches_direct_convolution(rng):
    x = rng.integers(-4, 5, size=(2, 3, 6, 7)).astype(np.float64)
    w4 = rng.integers(-4, 5, size=(5, 3, 3, 3)).astype(np.float64)
    stride, pad = 2, 1
    oh, ow = conv_out_hw(6, 7, 3, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    want = np.zeros((2, 5, oh, ow))
    for bi in range(2):
        for o in range(5):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[bi, :, i * stride:i * stride + 3,
                               j * stride:j * stride + 3]
                    want[bi, o, i, j] = np.sum(patch * w4[o])
    cols = im2col(x, 3, stride, pad)
    got = (cols @ conv_weight_matrix(w4)).reshape(2, oh, ow, 5)
    assert np.array_equal(got.transpose(0, 3, 1, 2), want)


def test_softmax_basic():
    x = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]])
    p = softmax(x)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(p[1], [1 / 3] * 3)
    e = np.exp([1.0, 2.0, 3.0])
    assert np.allclose(p[0], e / e.sum())
    # shift invariance
    assert np.allclose(softmax(x + 123.0), p)


def test_fidelity_counts_argmax_matches():
    logits = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
    assert fidelity(logits, np.array([1, 0, 0, 0])) == 0.75
    assert fidelity(logits, np.array([1, 0, 1, 0])) == 1.0
    assert fidelity(logits, np.array([0, 1, 0, 1])) == 0.0


# ---------------------------------------------------------------------------
# Graph construction / validation
# ---------------------------------------------------------------------------

def test_tiny_cnn_stage_table():
    b = tensorio.synth_model("tiny-cnn", seed=0, samples=2)
    net = build_network(b.desc, b.weights)
    names = [s.name for s in net.stages]
    assert names == ["conv0", "conv1", "fc2", "fc3"]
    assert all(s.kind == "smm" for s in net.stages)
    conv0, conv1, fc2, fc3 = net.stages
    assert (conv0.R, conv0.C, conv0.vectors_per_inference) == (9, 4, 36)
    assert (conv1.R, conv1.C, conv1.vectors_per_inference) == (36, 8, 16)
    assert (fc2.R, fc2.C, fc2.vectors_per_inference) == (128, 32, 1)
    assert (fc3.R, fc3.C) == (32, 10)
    assert conv0.macs_per_inference == 9 * 4 * 36


def test_attention_stage_table():
    b = tensorio.synth_model("tiny-attention", seed=0, samples=2)
    net = build_network(b.desc, b.weights)
    assert [s.op for s in net.stages] == \
        ["qkv", "qkt", "softmax", "pv", "proj", "ffn1", "ffn2"]
    assert [s.kind for s in net.stages] == \
        ["smm", "dmm", "digital", "dmm", "smm", "smm", "smm"]
    qkt = net.stages[1]
    assert (qkt.R, qkt.C, qkt.vectors_per_inference, qkt.heads) == (16, 8, 8, 1)
    pv = net.stages[3]
    assert (pv.R, pv.C) == (8, 16)
    assert net.stages[2].macs_per_inference == 0


@pytest.mark.parametrize("mutate,msg", [
    (lambda d, w: d.pop("layers"), "layers"),
    (lambda d, w: d.update(input_shape=[]), "input_shape"),
    (lambda d, w: d["layers"][0].update(in_channels=3), "in_channels"),
    (lambda d, w: w.update({"conv0.npy": np.zeros((4, 1, 5, 5), np.float32)}),
     "must be"),
    (lambda d, w: d["layers"][0].update(kernel=11), "conv"),
    (lambda d, w: d["layers"][2].update(in_features=100), "in_features"),
    (lambda d, w: d["layers"][0].update(kind="pool"), "unknown"),
])
def test_build_network_rejects_bad_graphs(mutate, msg):
    b = tensorio.synth_model("tiny-cnn", seed=0, samples=1)
    mutate(b.desc, b.weights)
    with pytest.raises(NetError, match=msg):
        build_network(b.desc, b.weights)


def test_build_network_attention_head_check():
    b = tensorio.synth_model("tiny-attention", seed=0, samples=1)
    b.desc["layers"][0]["heads"] = 3          # does not divide embed_dim 16
    with pytest.raises(NetError, match="heads"):
        build_network(b.desc, b.weights)


def test_forward_input_shape_guard():
    b = tensorio.synth_model("tiny-cnn", seed=0, samples=2)
    net = build_network(b.desc, b.weights)
    with pytest.raises(NetError, match="inputs"):
        run_reference(net, np.zeros((2, 1, 9, 9), dtype=np.float32))


# ---------------------------------------------------------------------------
# The three execution paths
# ---------------------------------------------------------------------------

def test_reference_is_self_consistent():
    b = tensorio.synth_model("tiny-cnn", seed=3, samples=16)
    net = build_network(b.desc, b.weights)
    logits = run_reference(net, b.inputs)
    assert fidelity(logits, b.labels) == 1.0


def test_software_quantization_tracks_reference():
    b = tensorio.synth_model("tiny-cnn", seed=1, samples=32)
    net = build_network(b.desc, b.weights)
    logits = run_software(net, b.inputs, exact_cfg())
    assert fidelity(logits, b.labels) >= 0.9


@pytest.mark.parametrize("arch", ["tiny-cnn", "tiny-attention"])
def test_ideal_cim_equals_software_bitwise(arch):
    """Ideal device + integer-grid ADC removes every analog effect, so the
    crossbar path must reproduce the plain quantized path float-for-float."""
    b = tensorio.synth_model(arch, seed=2, samples=4)
    net = build_network(b.desc, b.weights)
    cfg = exact_cfg()
    sw = run_software(net, b.inputs, cfg)
    hw = run_cim(net, b.inputs, cfg)
    assert np.array_equal(sw, hw.logits)
    assert hw.samples == 4


def test_run_cim_trace_toggle():
    b = tensorio.synth_model("tiny-cnn", seed=0, samples=2)
    net = build_network(b.desc, b.weights)
    res = run_cim(net, b.inputs, exact_cfg())            # mode defaults: average
    assert res.traces is None
    res = run_cim(net, b.inputs, exact_cfg(), collect_trace=True)
    assert set(res.traces) == {"conv0", "conv1", "fc2", "fc3"}


def test_stats_accounting_against_traces():
    b = tensorio.synth_model("tiny-cnn", seed=0, samples=3)
    net = build_network(b.desc, b.weights)
    res = run_cim(net, b.inputs, exact_cfg(), collect_trace=True)
    for name, st in res.stats.items():
        trs = res.traces[name]
        assert st.a_sum == sum(t.a_sum for t in trs)
        assert st.driven_sum == sum(t.used_rows * t.vectors * t.cycles
                                    for t in trs)
        assert st.conversions == sum(t.conversions for t in trs)
        assert st.cycles == 8
        assert 0.0 <= st.alpha_avg <= 1.0
    # one batched apply per static stage; masks cover each slot exactly once
    conv0 = res.stats["conv0"]
    assert conv0.applies == 1
    assert sum(conv0.masks.values()) == len(res.traces["conv0"])
    assert conv0.vectors_per_inference == 36
    # every conv0 trace saw B * positions vectors
    assert all(t.vectors == 3 * 36 for t in res.traces["conv0"])


def test_dmm_stats_mask_multiplicity():
    b = tensorio.synth_model("tiny-attention", seed=0, samples=3)
    net = build_network(b.desc, b.weights)
    res = run_cim(net, b.inputs, exact_cfg(), collect_trace=True)
    qkt = res.stats["att0.qkt"]
    # one operator per (sample, head): applies counts them all, masks only
    # sample 0 (the per-inference footprint)
    assert qkt.applies == 3 * 1
    per_op_slots = len(res.traces["att0.qkt"]) // 3
    assert sum(qkt.masks.values()) == per_op_slots
    sm = res.stats["att0.softmax"]
    assert sm.kind == "digital" and sm.a_sum == 0 and sm.applies == 0


def test_jobs_do_not_change_results():
    b = tensorio.synth_model("tiny-attention", seed=5, samples=4)
    net = build_network(b.desc, b.weights)
    cfg = exact_cfg(device={"kind": "envm", "r_on": 6000.0,
                            "on_off_ratio": 40.0, "cell_bits_max": 4,
                            "sigma_cell": 0.05})
    a = run_cim(net, b.inputs, cfg, jobs=1)
    bres = run_cim(net, b.inputs, cfg, jobs=2)
    assert a.logits.tobytes() == bres.logits.tobytes()
    for name in a.stats:
        sa, sb = a.stats[name], bres.stats[name]
        assert (sa.a_sum, sa.conversions, sa.masks) == \
            (sb.a_sum, sb.conversions, sb.masks)
        assert sa.g_sum == sb.g_sum
