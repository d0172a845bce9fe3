"""Tensor file I/O and synthetic model bundles.

Tensors travel as NPY v1.0 files restricted to little-endian float32/int32 in
C order.  A model bundle is a directory: net.json describing the layer graph,
one .npy per weight tensor, plus eval inputs and teacher labels.  Bundles are
fully determined by (architecture, seed, sample count), which is what makes
run-to-run byte identity possible downstream.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib import format as npformat


class TensorIOError(Exception):
    pass


_MAGIC = b"\x93NUMPY"
_ALLOWED_DTYPES = ("<f4", "<i4")


def write_tensor(path: str, arr: np.ndarray) -> None:
    """Write a float32/int32 array as NPY v1.0, C order."""
    arr = np.asarray(arr)
    if arr.dtype == np.float64:
        arr = arr.astype(np.float32)
    if arr.dtype == np.int64:
        arr = arr.astype(np.int32)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    if arr.dtype.str not in _ALLOWED_DTYPES:
        raise TensorIOError(f"{path}: refusing to write dtype {arr.dtype}; "
                            "only float32 and int32 tensors are supported")
    with open(path, "wb") as fp:
        npformat.write_array(fp, arr, version=(1, 0))


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fp:
        head = fp.read(len(_MAGIC))
        if head != _MAGIC:
            raise TensorIOError(f"{path}: magic mismatch, not an NPY file")
        ver = fp.read(2)
        if len(ver) != 2:
            raise TensorIOError(f"{path}: truncated version field")
        if (ver[0], ver[1]) != (1, 0):
            raise TensorIOError(f"{path}: unsupported NPY version "
                                f"{ver[0]}.{ver[1]}, expected 1.0")
        try:
            shape, fortran, dtype = npformat.read_array_header_1_0(fp)
        except ValueError as e:
            raise TensorIOError(f"{path}: bad header: {e}") from e
        if fortran:
            raise TensorIOError(f"{path}: Fortran-order payload not supported")
        if dtype.str not in _ALLOWED_DTYPES:
            raise TensorIOError(f"{path}: unsupported dtype {dtype.str}; "
                                f"expected one of {_ALLOWED_DTYPES}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = fp.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise TensorIOError(f"{path}: truncated payload "
                                f"({len(payload)} of {count * dtype.itemsize} bytes)")
        if fp.read(1):
            raise TensorIOError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# Network descriptions
# ---------------------------------------------------------------------------

# Weight tensor layouts (all matmul-ready, C order):
#   conv2d: (out_channels, in_channels, kh, kw)
#   linear: (in_features, out_features)
#   attention-block: qkv (d, 3d) as [Q|K|V] column blocks, proj (d, d),
#                    ffn1 (d, ffn), ffn2 (ffn, d)

BUILTIN_ARCHS: dict[str, dict] = {
    "tiny-cnn": {
        "name": "tiny-cnn",
        "input_shape": [1, 8, 8],
        "layers": [
            {"kind": "conv2d", "in_channels": 1, "out_channels": 4, "kernel": 3,
             "stride": 1, "padding": 0, "activation": "relu", "weights": "conv0.npy"},
            {"kind": "conv2d", "in_channels": 4, "out_channels": 8, "kernel": 3,
             "stride": 1, "padding": 0, "activation": "relu", "weights": "conv1.npy"},
            {"kind": "linear", "in_features": 128, "out_features": 32,
             "activation": "relu", "weights": "fc0.npy"},
            {"kind": "linear", "in_features": 32, "out_features": 10,
             "activation": "none", "weights": "fc1.npy"},
        ],
    },
    "tiny-attention": {
        "name": "tiny-attention",
        "input_shape": [8, 16],
        "layers": [
            {"kind": "attention-block", "embed_dim": 16, "heads": 1, "seq_len": 8,
             "ffn_dim": 32, "activation": "relu",
             "weights": {"qkv": "att0_qkv.npy", "proj": "att0_proj.npy",
                         "ffn1": "att0_ffn1.npy", "ffn2": "att0_ffn2.npy"}},
        ],
    },
}


@dataclass
class ModelBundle:
    desc: dict
    weights: dict[str, np.ndarray]
    inputs: np.ndarray                      # (samples, *input_shape) float32
    labels: np.ndarray                      # (samples,) int32, teacher argmax
    meta: dict = field(default_factory=dict)


def _weight_names(layer: dict) -> list[str]:
    w = layer["weights"]
    if isinstance(w, str):
        return [w]
    return [w[k] for k in ("qkv", "proj", "ffn1", "ffn2")]


def synth_model(arch="tiny-cnn", seed: int = 0, samples: int = 32) -> ModelBundle:
    """Deterministic random model + eval set.

    Weights ~ N(0, 1/sqrt(fan_in)), inputs ~ N(0, 1).  Labels come from the
    float32 teacher forward pass, so a bundle is self-labelled: the teacher
    scores fidelity 1.0 on itself by construction.
    """
    if isinstance(arch, str):
        if arch not in BUILTIN_ARCHS:
            raise TensorIOError(f"unknown builtin architecture {arch!r}")
        desc = json.loads(json.dumps(BUILTIN_ARCHS[arch]))
    else:
        desc = json.loads(json.dumps(arch))

    weights: dict[str, np.ndarray] = {}

    def gen(tag: str) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((seed, hash_tag(tag)))))

    for i, layer in enumerate(desc["layers"]):
        kind = layer["kind"]
        if kind == "conv2d":
            oc, ic, kk = layer["out_channels"], layer["in_channels"], layer["kernel"]
            fan_in = ic * kk * kk
            w = gen(f"w{i}").normal(0.0, 1.0 / math.sqrt(fan_in),
                                    size=(oc, ic, kk, kk))
            weights[layer["weights"]] = w.astype(np.float32)
        elif kind == "linear":
            fi, fo = layer["in_features"], layer["out_features"]
            w = gen(f"w{i}").normal(0.0, 1.0 / math.sqrt(fi), size=(fi, fo))
            weights[layer["weights"]] = w.astype(np.float32)
        elif kind == "attention-block":
            d, f = layer["embed_dim"], layer["ffn_dim"]
            names = layer["weights"]
            specs = {"qkv": (d, 3 * d, d), "proj": (d, d, d),
                     "ffn1": (d, f, d), "ffn2": (f, d, f)}
            for part, (rows, cols, fan_in) in specs.items():
                w = gen(f"w{i}.{part}").normal(0.0, 1.0 / math.sqrt(fan_in),
                                               size=(rows, cols))
                weights[names[part]] = w.astype(np.float32)
        else:
            raise TensorIOError(f"unknown layer kind {kind!r}")

    shape = tuple(desc["input_shape"])
    inputs = gen("inputs").normal(0.0, 1.0, size=(samples, *shape)).astype(np.float32)

    # Teacher labels: import here to avoid a cycle at module load.
    from . import netgraph
    net = netgraph.build_network(desc, weights)
    logits = netgraph.run_reference(net, inputs)
    labels = np.argmax(logits, axis=1).astype(np.int32)

    return ModelBundle(desc=desc, weights=weights, inputs=inputs, labels=labels,
                       meta={"seed": seed, "samples": samples})


def hash_tag(tag: str) -> int:
    """Stable 32-bit hash for seeding (process hash() is salted, so not usable)."""
    h = 2166136261
    for b in tag.encode():
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h


def save_bundle(bundle: ModelBundle, outdir: str) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    paths = []
    desc_path = os.path.join(outdir, "net.json")
    with open(desc_path, "w") as fp:
        json.dump(bundle.desc, fp, indent=2, sort_keys=True)
        fp.write("\n")
    paths.append(desc_path)
    for name, arr in sorted(bundle.weights.items()):
        p = os.path.join(outdir, name)
        write_tensor(p, arr)
        paths.append(p)
    for name, arr in (("inputs.npy", bundle.inputs), ("labels.npy", bundle.labels)):
        p = os.path.join(outdir, name)
        write_tensor(p, arr)
        paths.append(p)
    return paths


def load_bundle(indir: str) -> ModelBundle:
    desc_path = os.path.join(indir, "net.json")
    try:
        with open(desc_path) as fp:
            desc = json.load(fp)
    except OSError as e:
        raise TensorIOError(f"{desc_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise TensorIOError(f"{desc_path}: parse error: {e}") from e
    weights = {}
    for layer in desc.get("layers", []):
        for name in _weight_names(layer):
            weights[name] = read_tensor(os.path.join(indir, name))
    inputs = read_tensor(os.path.join(indir, "inputs.npy"))
    labels = read_tensor(os.path.join(indir, "labels.npy"))
    return ModelBundle(desc=desc, weights=weights, inputs=inputs, labels=labels)
