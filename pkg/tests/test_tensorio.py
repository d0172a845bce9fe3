import numpy as np
import pytest

from xbarsim import tensorio


def test_npy_roundtrip(tmp_path):
    for arr in (np.arange(12, dtype=np.float32).reshape(3, 4),
                np.array([[-5, 0, 7]], dtype=np.int32),
                np.float32(3.5).reshape(())):
        p = str(tmp_path / "t.npy")
        tensorio.write_tensor(p, arr)
        back = tensorio.read_tensor(p)
        assert back.dtype == arr.dtype and np.array_equal(back, arr)


def test_write_narrows_64bit(tmp_path):
    p = str(tmp_path / "t.npy")
    tensorio.write_tensor(p, np.arange(3, dtype=np.int64))
    assert tensorio.read_tensor(p).dtype == np.int32
    tensorio.write_tensor(p, np.zeros(3, dtype=np.float64))
    assert tensorio.read_tensor(p).dtype == np.float32


def test_write_rejects_odd_dtypes(tmp_path):
    with pytest.raises(tensorio.TensorIOError, match="dtype"):
        tensorio.write_tensor(str(tmp_path / "t.npy"), np.zeros(3, dtype=np.bool_))


def test_read_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.npy"
    p.write_bytes(b"not a tensor at all")
    with pytest.raises(tensorio.TensorIOError, match="magic"):
        tensorio.read_tensor(str(p))


def test_read_rejects_wrong_version(tmp_path):
    p = tmp_path / "x.npy"
    good = tmp_path / "good.npy"
    tensorio.write_tensor(str(good), np.zeros(2, dtype=np.float32))
    raw = bytearray(good.read_bytes())
    raw[6] = 2  # major version
    p.write_bytes(bytes(raw))
    with pytest.raises(tensorio.TensorIOError, match="version"):
        tensorio.read_tensor(str(p))


def test_read_rejects_truncation_and_trailing(tmp_path):
    good = tmp_path / "good.npy"
    tensorio.write_tensor(str(good), np.arange(8, dtype=np.int32))
    raw = good.read_bytes()
    short = tmp_path / "short.npy"
    short.write_bytes(raw[:-4])
    with pytest.raises(tensorio.TensorIOError, match="truncated"):
        tensorio.read_tensor(str(short))
    fat = tmp_path / "fat.npy"
    fat.write_bytes(raw + b"\x00")
    with pytest.raises(tensorio.TensorIOError, match="trailing"):
        tensorio.read_tensor(str(fat))


def test_read_rejects_f8(tmp_path):
    import numpy.lib.format as nf
    p = tmp_path / "f8.npy"
    with open(p, "wb") as fp:
        nf.write_array(fp, np.zeros(2, dtype=np.float64), version=(1, 0))
    with pytest.raises(tensorio.TensorIOError, match="dtype"):
        tensorio.read_tensor(str(p))


def test_hash_tag_stable():
    # FNV-1a, pinned so bundle generation never drifts between runs/machines
    assert tensorio.hash_tag("") == 2166136261
    assert tensorio.hash_tag("w0") == tensorio.hash_tag("w0")
    assert tensorio.hash_tag("w0") != tensorio.hash_tag("w1")


def test_synth_deterministic():
    a = tensorio.synth_model("tiny-cnn", seed=3, samples=4)
    b = tensorio.synth_model("tiny-cnn", seed=3, samples=4)
    for name in a.weights:
        assert np.array_equal(a.weights[name], b.weights[name])
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)
    c = tensorio.synth_model("tiny-cnn", seed=4, samples=4)
    assert not np.array_equal(a.weights["conv0.npy"], c.weights["conv0.npy"])


def test_synth_self_labelled():
    from xbarsim import netgraph
    b = tensorio.synth_model("tiny-attention", seed=0, samples=6)
    net = netgraph.build_network(b.desc, b.weights)
    ref = netgraph.run_reference(net, b.inputs)
    assert netgraph.fidelity(ref, b.labels) == 1.0


def test_unknown_arch():
    with pytest.raises(tensorio.TensorIOError, match="unknown builtin"):
        tensorio.synth_model("mega-cnn")


def test_bundle_roundtrip(tmp_path):
    b = tensorio.synth_model("tiny-cnn", seed=1, samples=3)
    paths = tensorio.save_bundle(b, str(tmp_path / "m"))
    assert len(paths) == 1 + len(b.weights) + 2
    back = tensorio.load_bundle(str(tmp_path / "m"))
    assert back.desc["name"] == "tiny-cnn"
    assert np.array_equal(back.inputs, b.inputs)
    assert np.array_equal(back.labels, b.labels)
    for name in b.weights:
        assert np.allclose(back.weights[name], b.weights[name])
