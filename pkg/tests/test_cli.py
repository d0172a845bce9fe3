import json
import os

import numpy as np
import pytest

from xbarsim import quant, tensorio
from xbarsim.cli import main

BASE_CFG = {
    "seed": 5,
    "mode": "average",
    "quant": {"scheme": "uniform-symmetric", "weight_bits": 8, "input_bits": 8},
    "mapping": {"design": "Design1", "cell_bits": 4,
                "input_sign_mode": "twos-complement"},
    "device": "ideal",
    "adc": {"kind": "linear", "precision": 13, "lo": -4096.0, "hi": 4095.0},
    "arch": {"subarray_rows": 64, "subarray_cols": 64, "adc_share": 8},
}


def write_cfg(path, **over):
    d = json.loads(json.dumps(BASE_CFG))
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k].update(v)
        else:
            d[k] = v
    with open(path, "w") as fp:
        json.dump(d, fp)
    return str(path)


@pytest.fixture()
def cfg_path(tmp_path):
    return write_cfg(tmp_path / "cfg.json")


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    assert main(["synth", "--arch", "tiny-cnn", "--seed", "3",
                 "--samples", "6", "--out", str(out)]) == 0
    return str(out)


def read_json(path):
    with open(path) as fp:
        return json.load(fp)


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------

def test_usage_errors_exit_1():
    for argv in ([], ["bogus"], ["infer"], ["estimate", "--config", "x"]):
        with pytest.raises(SystemExit) as ei:
            main(argv)
        assert ei.value.code == 1


def test_version_flag():
    with pytest.raises(SystemExit) as ei:
        main(["--version"])
    assert ei.value.code == 0


def test_validation_errors_exit_2(tmp_path, cfg_path, model_dir):
    bad_cfg = write_cfg(tmp_path / "bad.json", quant={"weight_bits": 12})
    assert main(["infer", "--config", bad_cfg, "--model", model_dir,
                 "--out", str(tmp_path / "m.json")]) == 2
    # missing files are a config problem, not a crash
    assert main(["infer", "--config", str(tmp_path / "nope.json"),
                 "--model", model_dir, "--out", str(tmp_path / "m.json")]) == 2
    assert main(["infer", "--config", cfg_path, "--model",
                 str(tmp_path / "nodir"), "--out", str(tmp_path / "m.json")]) == 2
    assert main(["synth", "--arch", "mystery-net",
                 "--out", str(tmp_path / "b")]) == 2


def test_runtime_errors_exit_3(tmp_path):
    broken = tmp_path / "report.json"
    broken.write_text(json.dumps({"schema_version": 1}))
    assert main(["report", "--input", str(broken)]) == 3


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def test_synth_writes_bundle_and_manifest(model_dir):
    man = read_json(os.path.join(model_dir, "manifest.json"))
    assert man["subcommand"] == "synth"
    assert man["seed"] == 3
    assert man["outputs"] == sorted(man["outputs"])
    for name in man["outputs"]:
        assert os.path.exists(os.path.join(model_dir, name))
    bundle = tensorio.load_bundle(model_dir)
    assert bundle.inputs.shape[0] == 6


def test_quantize_round_trip(tmp_path, cfg_path, rng):
    t = rng.normal(size=(7, 5)).astype(np.float32)
    tensorio.write_tensor(str(tmp_path / "w.npy"), t)
    out = str(tmp_path / "q" / "wq")
    assert main(["quantize", "--config", cfg_path, "--tensor",
                 str(tmp_path / "w.npy"), "--role", "weight",
                 "--out", out]) == 0
    vals = tensorio.read_tensor(out + ".npy")
    params = read_json(out + ".json")
    want = quant.quantize_tensor(t.astype(np.float64), "uniform-symmetric", 8)
    assert np.array_equal(vals, want.values)
    assert params["scale"] == want.params.scale
    man = read_json(str(tmp_path / "q" / "manifest.json"))
    assert man["subcommand"] == "quantize"
    assert len(man["config_digest"]) == 64
    assert man["outputs"] == ["wq.json", "wq.npy"]


def test_infer_modes(tmp_path, cfg_path, model_dir, capsys):
    sw = str(tmp_path / "sw.json")
    hw = str(tmp_path / "hw.json")
    assert main(["infer", "--config", cfg_path, "--model", model_dir,
                 "--mode", "software", "--out", sw]) == 0
    assert main(["infer", "--config", cfg_path, "--model", model_dir,
                 "--mode", "cim", "--limit", "4", "--out", hw]) == 0
    msw, mhw = read_json(sw), read_json(hw)
    assert msw["samples"] == 6 and mhw["samples"] == 4
    assert 0.0 <= msw["fidelity"] <= 1.0
    assert msw["stage_activity"] is None
    assert set(mhw["stage_activity"]) == {"conv0", "conv1", "fc2", "fc3"}
    assert "fidelity:" in capsys.readouterr().out


def test_estimate_and_report(tmp_path, cfg_path, model_dir, capsys):
    rep_path = str(tmp_path / "rep.json")
    assert main(["estimate", "--config", cfg_path, "--model", model_dir,
                 "--mode", "trace", "--limit", "2", "--out", rep_path]) == 0
    rep = read_json(rep_path)
    assert rep["mode"] == "trace" and rep["samples"] == 2
    capsys.readouterr()

    assert main(["report", "--input", rep_path]) == 0
    assert "breakdown" in capsys.readouterr().out
    out_txt = str(tmp_path / "rep.txt")
    assert main(["report", "--input", rep_path, "--format", "json",
                 "--out", out_txt]) == 0
    summary = read_json(out_txt)
    assert "energy_efficiency_tops_per_w" in summary


def test_estimate_byte_identical_across_runs_and_jobs(tmp_path, cfg_path,
                                                      model_dir):
    blobs = []
    for i, jobs in enumerate(("1", "1", "2")):
        out = str(tmp_path / f"r{i}" / "rep.json")
        assert main(["estimate", "--config", cfg_path, "--model", model_dir,
                     "--jobs", jobs, "--out", out]) == 0
        with open(out, "rb") as fp:
            blobs.append(fp.read())
    assert blobs[0] == blobs[1] == blobs[2]


def test_dse_command(tmp_path, cfg_path):
    mlp = {"name": "mlp", "input_shape": [16],
           "layers": [{"kind": "linear", "in_features": 16,
                       "out_features": 5, "weights": "l0.npy"}]}
    arch_path = tmp_path / "mlp.json"
    arch_path.write_text(json.dumps(mlp))
    bdir = str(tmp_path / "bundle")
    assert main(["synth", "--arch", str(arch_path), "--samples", "12",
                 "--out", bdir]) == 0
    space = {"schemes": ["uniform-symmetric"], "bits": [6], "designs":
             ["Design1"], "cell_bits": [2], "adc_bits": [6, 8, 10],
             "devices": ["rram_150"], "fidelity_drop": 0.1, "seeds": [0]}
    space_path = tmp_path / "space.json"
    space_path.write_text(json.dumps(space))
    out = str(tmp_path / "dse")
    assert main(["dse", "--config", cfg_path, "--model", bdir,
                 "--space", str(space_path), "--out", out]) == 0
    res = read_json(os.path.join(out, "dse_result.json"))
    if res["status"] == "ok":
        best = read_json(os.path.join(out, "best_config.json"))
        assert best["mapping"]["design"] == "Design1"
    man = read_json(os.path.join(out, "manifest.json"))
    assert man["subcommand"] == "dse"
