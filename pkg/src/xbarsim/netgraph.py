"""Layer graph: reference, quantized-software, and crossbar forward passes.

Three execution paths share one stage walk so they stay in lockstep:

* run_reference   float32 teacher; its argmax defines the labels a bundle
                  ships with, so teacher self-fidelity is 1.0.
* run_software    post-training quantization with exact integer matmuls;
                  the hardware-free upper bound for any crossbar config.
* run_cim         quantized matmuls through CimOperator slots, collecting
                  per-stage activity stats (and per-vector traces on demand).

Convolutions lower to matmul via im2col.  Attention blocks expand into seven
stages: qkv / per-head scores (Q @ K^T) / softmax / per-head context (P @ V)
/ proj / ffn1 / ffn2, with no residuals or layernorm.  Static weights (conv,
linear, qkv, proj, ffn1, ffn2) program their arrays once per run; K^T and V
are written per (sample, head), which is what separates the static-matmul
(SMM) stages from dynamic-matmul (DMM) stages in the hardware model.
Attention probabilities are non-negative and quantize unsigned regardless of
the configured input sign mode.

The per-sample attention work can fan out over a thread pool; workers return
opaque stat fragments that are merged in sample order afterwards, so results
are byte-identical for any --jobs value.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import quant
from .cimkernel import CimOperator, SlotTrace
from .config import SimulationConfig


class NetError(Exception):
    pass


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageInfo:
    """One matmul (or digital) stage with static shape information."""

    index: int
    name: str
    op: str                  # conv2d|linear|qkv|qkt|softmax|pv|proj|ffn1|ffn2
    kind: str                # smm | dmm | digital
    R: int                   # matmul inner dim (0 for digital stages)
    C: int                   # matmul output dim
    vectors_per_inference: int   # input vectors each weight instance sees
    heads: int = 1           # parallel weight instances per inference (qkt/pv)
    block: int | None = None # attention block id
    activation: str = "none"

    @property
    def macs_per_inference(self) -> int:
        return self.R * self.C * self.vectors_per_inference * self.heads


@dataclass
class Network:
    desc: dict
    weights: dict[str, np.ndarray]
    input_shape: tuple[int, ...]
    stages: list[StageInfo]


def conv_out_hw(h: int, w: int, kk: int, stride: int, padding: int) -> tuple[int, int]:
    oh = (h + 2 * padding - kk) // stride + 1
    ow = (w + 2 * padding - kk) // stride + 1
    return oh, ow


def build_network(desc: dict, weights: dict[str, np.ndarray]) -> Network:
    """Validate shapes layer by layer and derive the stage table."""
    if "layers" not in desc or not isinstance(desc["layers"], list):
        raise NetError("net description needs a 'layers' list")
    shape = tuple(int(x) for x in desc.get("input_shape", ()))
    if not shape:
        raise NetError("net description needs input_shape")
    stages: list[StageInfo] = []
    idx = 0

    def add(name, op, kind, R, C, vec, heads=1, block=None, act="none"):
        nonlocal idx
        stages.append(StageInfo(index=idx, name=name, op=op, kind=kind, R=R, C=C,
                                vectors_per_inference=vec, heads=heads,
                                block=block, activation=act))
        idx += 1

    cur = shape
    n_att = 0
    for li, layer in enumerate(desc["layers"]):
        kind = layer.get("kind")
        if kind == "conv2d":
            if len(cur) != 3:
                raise NetError(f"layers[{li}]: conv2d needs (C,H,W) input, got {cur}")
            ic, h, w = cur
            if ic != layer["in_channels"]:
                raise NetError(f"layers[{li}]: in_channels {layer['in_channels']} "
                               f"!= incoming {ic}")
            kk = layer["kernel"]
            st, pd = layer.get("stride", 1), layer.get("padding", 0)
            oh, ow = conv_out_hw(h, w, kk, st, pd)
            if oh < 1 or ow < 1:
                raise NetError(f"layers[{li}]: empty conv output {oh}x{ow}")
            wt = weights.get(layer["weights"])
            want = (layer["out_channels"], ic, kk, kk)
            if wt is None or wt.shape != want:
                raise NetError(f"layers[{li}]: weight {layer['weights']} must be "
                               f"{want}, got {None if wt is None else wt.shape}")
            add(f"conv{li}", "conv2d", "smm", ic * kk * kk, layer["out_channels"],
                oh * ow, act=layer.get("activation", "none"))
            cur = (layer["out_channels"], oh, ow)
        elif kind == "linear":
            feats = int(np.prod(cur))
            if feats != layer["in_features"]:
                raise NetError(f"layers[{li}]: in_features {layer['in_features']} "
                               f"!= incoming {feats}")
            wt = weights.get(layer["weights"])
            want = (layer["in_features"], layer["out_features"])
            if wt is None or wt.shape != want:
                raise NetError(f"layers[{li}]: weight {layer['weights']} must be "
                               f"{want}, got {None if wt is None else wt.shape}")
            add(f"fc{li}", "linear", "smm", feats, layer["out_features"], 1,
                act=layer.get("activation", "none"))
            cur = (layer["out_features"],)
        elif kind == "attention-block":
            if len(cur) != 2:
                raise NetError(f"layers[{li}]: attention needs (S,D) input, got {cur}")
            s, d = cur
            if s != layer["seq_len"] or d != layer["embed_dim"]:
                raise NetError(f"layers[{li}]: seq/embed mismatch with incoming {cur}")
            hds, f = layer.get("heads", 1), layer["ffn_dim"]
            if hds < 1 or d % hds != 0:
                raise NetError(f"layers[{li}]: heads must divide embed_dim")
            dh = d // hds
            names = layer["weights"]
            shapes = {"qkv": (d, 3 * d), "proj": (d, d), "ffn1": (d, f),
                      "ffn2": (f, d)}
            for part, want in shapes.items():
                wt = weights.get(names[part])
                if wt is None or wt.shape != want:
                    raise NetError(f"layers[{li}]: weight {names[part]} must be {want}")
            b = n_att
            act = layer.get("activation", "relu")
            add(f"att{b}.qkv", "qkv", "smm", d, 3 * d, s, block=b)
            add(f"att{b}.qkt", "qkt", "dmm", dh, s, s, heads=hds, block=b)
            add(f"att{b}.softmax", "softmax", "digital", 0, 0, s, heads=hds, block=b)
            add(f"att{b}.pv", "pv", "dmm", s, dh, s, heads=hds, block=b)
            add(f"att{b}.proj", "proj", "smm", d, d, s, block=b)
            add(f"att{b}.ffn1", "ffn1", "smm", d, f, s, block=b, act=act)
            add(f"att{b}.ffn2", "ffn2", "smm", f, d, s, block=b)
            n_att += 1
            cur = (s, d)
        else:
            raise NetError(f"layers[{li}]: unknown kind {kind!r}")
    return Network(desc=desc, weights=weights, input_shape=shape, stages=stages)


def stage_table(net: Network) -> list[StageInfo]:
    return list(net.stages)


# ---------------------------------------------------------------------------
# Shared layer math
# ---------------------------------------------------------------------------

def im2col(x: np.ndarray, kk: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """(B, C, H, W) -> (B, positions, C*kk*kk); patch layout (c, dy, dx)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kk, kk), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]          # (B, C, OH, OW, kk, kk)
    b, c, oh, ow = win.shape[:4]
    win = win.transpose(0, 2, 3, 1, 4, 5)              # (B, OH, OW, C, kk, kk)
    return np.ascontiguousarray(win).reshape(b, oh * ow, c * kk * kk)


def conv_weight_matrix(w4: np.ndarray) -> np.ndarray:
    """(OC, C, kh, kw) -> (C*kh*kw, OC), matching im2col's patch layout."""
    oc = w4.shape[0]
    return np.ascontiguousarray(w4.reshape(oc, -1).T)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(x)
    return e / np.sum(e, axis=axis, keepdims=True)


def _activation(x: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name in ("none", None, ""):
        return x
    raise NetError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# Stats
# ---------------------------------------------------------------------------

@dataclass
class LayerStats:
    """Aggregated crossbar activity of one stage across a whole run.

    masks is a per-inference multiset: each (used_rows, used_cols,
    n_subarrays) slot shape with the number of slots of that shape one
    inference touches.  Activity sums (a_sum, driven_sum) are exact integers
    so trace and average estimates can agree to the last bit on uniform
    workloads.
    """

    name: str
    kind: str
    vectors_per_inference: int = 0
    cycles: int = 0
    masks: dict[tuple[int, int, int], int] = field(default_factory=dict)
    a_sum: int = 0               # active row-cycles, exact
    driven_sum: int = 0          # driven row-cycles (rows * V * M), exact
    g_sum: float = 0.0           # sum of gbar * cells over programmed arrays
    cells_sum: int = 0
    conversions: int = 0
    applies: int = 0

    @property
    def alpha_avg(self) -> float:
        return self.a_sum / self.driven_sum if self.driven_sum else 0.0

    @property
    def g_avg(self) -> float:
        return self.g_sum / self.cells_sum if self.cells_sum else 0.0

    def absorb(self, traces: list[SlotTrace], *, count_masks: bool) -> None:
        for tr in traces:
            if count_masks:
                mk = (tr.used_rows, tr.used_cols, tr.n_subarrays)
                self.masks[mk] = self.masks.get(mk, 0) + 1
            self.a_sum += tr.a_sum
            self.driven_sum += tr.used_rows * tr.vectors * tr.cycles
            self.g_sum += tr.gbar * (tr.used_rows * tr.used_cols * tr.n_subarrays)
            self.cells_sum += tr.used_rows * tr.used_cols * tr.n_subarrays
            self.conversions += tr.conversions
        self.applies += 1


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------

class _RefEngine:
    """Exact float32 matmuls."""

    def matmul(self, stage, X, W, *, unsigned_input=False):
        return (X.astype(np.float32) @ W.astype(np.float32)).astype(np.float32)

    def dyn_matmul(self, stage, X, W, key, *, unsigned_input=False):
        return self.matmul(stage, X, W, unsigned_input=unsigned_input), None

    def absorb(self, frags):
        pass


class _SoftwareEngine:
    """Quantize-dequantize with exact integer matmuls in between."""

    def __init__(self, cfg: SimulationConfig):
        self.cfg = cfg
        self._wq: dict[str, quant.QuantizedTensor] = {}

    def _quant_input(self, X, unsigned):
        signed = (self.cfg.mapping.input_sign_mode == "twos-complement"
                  and not unsigned)
        return quant.quantize_tensor(np.asarray(X, dtype=np.float64),
                                     self.cfg.quant.scheme,
                                     self.cfg.quant.input_bits, signed=signed)

    def matmul(self, stage, X, W, *, unsigned_input=False):
        if stage.name not in self._wq:
            self._wq[stage.name] = quant.quantize_tensor(
                np.asarray(W, dtype=np.float64), self.cfg.quant.scheme,
                self.cfg.quant.weight_bits)
        wq = self._wq[stage.name]
        return self._do(stage, X, wq, unsigned_input)

    def dyn_matmul(self, stage, X, W, key, *, unsigned_input=False):
        wq = quant.quantize_tensor(np.asarray(W, dtype=np.float64),
                                   self.cfg.quant.scheme,
                                   self.cfg.quant.weight_bits)
        return self._do(stage, X, wq, unsigned_input), None

    def _do(self, stage, X, wq, unsigned):
        xq = self._quant_input(X, unsigned)
        acc = xq.values.astype(np.int64) @ wq.values.astype(np.int64)
        return (acc * (xq.params.scale * wq.params.scale)).astype(np.float32)

    def absorb(self, frags):
        pass


class _CimEngine:
    """Crossbar matmuls via CimOperator with deterministic stats collection.

    matmul() is for static weights and single-threaded call sites.
    dyn_matmul() builds a per-(sample, head) operator, is thread-safe, and
    returns a stat fragment instead of mutating shared state; the caller
    merges fragments in sample order via absorb().
    """

    def __init__(self, cfg: SimulationConfig, net: Network, collect_trace: bool):
        self.cfg = cfg
        self.collect = collect_trace
        self._ops: dict[str, tuple[CimOperator, float]] = {}
        self.stats: dict[str, LayerStats] = {}
        self.traces: dict[str, list[SlotTrace]] = {}
        for st in net.stages:
            self.stats[st.name] = LayerStats(
                name=st.name, kind=st.kind,
                vectors_per_inference=st.vectors_per_inference,
                cycles=cfg.quant.input_bits)
        self._smm_dev = cfg.smm_device()
        self._dmm_dev = cfg.dmm_device()

    def _k_for(self, kind: str) -> int:
        k = self.cfg.mapping.cell_bits
        if kind == "dmm":
            return min(k, self._dmm_dev.cell_bits_max)
        return k

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((self.cfg.seed,) + key)))

    def _quant_input(self, X, unsigned):
        signed = (self.cfg.mapping.input_sign_mode == "twos-complement"
                  and not unsigned)
        xq = quant.quantize_tensor(np.asarray(X, dtype=np.float64),
                                   self.cfg.quant.scheme,
                                   self.cfg.quant.input_bits, signed=signed)
        mode = "twos-complement" if signed else "unsigned"
        return xq, mode

    def matmul(self, stage, X, W, *, unsigned_input=False):
        if stage.name not in self._ops:
            wq = quant.quantize_tensor(np.asarray(W, dtype=np.float64),
                                       self.cfg.quant.scheme,
                                       self.cfg.quant.weight_bits)
            op = CimOperator(wq.values, self.cfg, device=self._smm_dev,
                             k=self._k_for("smm"), rng=self._rng(1, stage.index))
            self._ops[stage.name] = (op, wq.params.scale)
        op, wscale = self._ops[stage.name]
        xq, mode = self._quant_input(X, unsigned_input)
        Y, traces = op.apply(xq.values, input_mode=mode, collect_trace=self.collect)
        st = self.stats[stage.name]
        st.absorb(traces, count_masks=st.applies == 0)
        if self.collect:
            self.traces.setdefault(stage.name, []).extend(traces)
        return (Y.astype(np.float64) * (xq.params.scale * wscale)).astype(np.float32)

    def dyn_matmul(self, stage, X, W, key, *, unsigned_input=False):
        wq = quant.quantize_tensor(np.asarray(W, dtype=np.float64),
                                   self.cfg.quant.scheme, self.cfg.quant.weight_bits)
        op = CimOperator(wq.values, self.cfg, device=self._dmm_dev,
                         k=self._k_for("dmm"), rng=self._rng(2, stage.index, *key))
        xq, mode = self._quant_input(X, unsigned_input)
        Y, traces = op.apply(xq.values, input_mode=mode, collect_trace=self.collect)
        out = (Y.astype(np.float64) * (xq.params.scale * wq.params.scale)
               ).astype(np.float32)
        return out, (stage.name, key, traces)

    def absorb(self, frags):
        for frag in sorted((f for f in frags if f is not None),
                           key=lambda f: (f[0], f[1])):
            name, key, traces = frag
            st = self.stats[name]
            st.absorb(traces, count_masks=key[0] == 0)
            if self.collect:
                self.traces.setdefault(name, []).extend(traces)


# ---------------------------------------------------------------------------
# Forward walks
# ---------------------------------------------------------------------------

def _forward(net: Network, inputs: np.ndarray, engine, jobs: int = 1) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float32)
    if x.shape[1:] != net.input_shape:
        raise NetError(f"inputs must be (B, {net.input_shape}), got {x.shape}")
    B = x.shape[0]
    si = 0
    for layer in net.desc["layers"]:
        kind = layer["kind"]
        if kind == "conv2d":
            st = net.stages[si]; si += 1
            kk = layer["kernel"]
            cols = im2col(x, kk, layer.get("stride", 1), layer.get("padding", 0))
            _, P, Rk = cols.shape
            w2 = conv_weight_matrix(net.weights[layer["weights"]])
            y = engine.matmul(st, cols.reshape(B * P, Rk), w2)
            y = _activation(y, st.activation)
            oc = layer["out_channels"]
            oh, ow = conv_out_hw(x.shape[2], x.shape[3], kk,
                                 layer.get("stride", 1), layer.get("padding", 0))
            x = y.reshape(B, oh, ow, oc).transpose(0, 3, 1, 2)
        elif kind == "linear":
            st = net.stages[si]; si += 1
            y = engine.matmul(st, x.reshape(B, -1),
                              net.weights[layer["weights"]])
            x = _activation(y, st.activation)
        elif kind == "attention-block":
            st_qkv, st_qkt, st_sm, st_pv, st_proj, st_f1, st_f2 = \
                net.stages[si:si + 7]
            si += 7
            names = layer["weights"]
            s, d = layer["seq_len"], layer["embed_dim"]
            hds = layer.get("heads", 1)
            dh = d // hds
            qkv = engine.matmul(st_qkv, x.reshape(B * s, d),
                                net.weights[names["qkv"]]).reshape(B, s, 3 * d)
            Q, K, V = qkv[:, :, :d], qkv[:, :, d:2 * d], qkv[:, :, 2 * d:]

            def _one_sample(b: int):
                ctx_b = np.empty((s, d), dtype=np.float32)
                frags = []
                for h in range(hds):
                    sl = slice(h * dh, (h + 1) * dh)
                    scores, f1 = engine.dyn_matmul(
                        st_qkt, Q[b, :, sl], np.ascontiguousarray(K[b, :, sl].T),
                        (b, h))
                    probs = softmax(scores / math.sqrt(dh), axis=-1)
                    cxt, f2 = engine.dyn_matmul(st_pv, probs, V[b, :, sl], (b, h),
                                                unsigned_input=True)
                    ctx_b[:, sl] = cxt
                    frags.extend([f1, f2])
                return ctx_b, frags

            if jobs > 1 and B > 1:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    results = list(pool.map(_one_sample, range(B)))
            else:
                results = [_one_sample(b) for b in range(B)]
            ctx = np.stack([r[0] for r in results])
            all_frags = [f for r in results for f in r[1]]
            engine.absorb(all_frags)

            y = engine.matmul(st_proj, ctx.reshape(B * s, d),
                              net.weights[names["proj"]])
            h1 = _activation(engine.matmul(st_f1, y,
                                           net.weights[names["ffn1"]]),
                             st_f1.activation)
            y2 = engine.matmul(st_f2, h1, net.weights[names["ffn2"]])
            x = y2.reshape(B, s, d)
        else:
            raise NetError(f"unknown layer kind {kind!r}")
    if x.ndim == 3:
        x = x.mean(axis=1)
    if x.ndim != 2:
        x = x.reshape(B, -1)
    return x


def run_reference(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Float32 teacher logits."""
    return _forward(net, inputs, _RefEngine())


def run_software(net: Network, inputs: np.ndarray, cfg: SimulationConfig,
                 jobs: int = 1) -> np.ndarray:
    """Quantized forward with ideal integer matmuls (no crossbar effects)."""
    return _forward(net, inputs, _SoftwareEngine(cfg), jobs=jobs)


@dataclass
class RunResult:
    logits: np.ndarray
    samples: int
    stats: dict[str, LayerStats]
    traces: dict[str, list[SlotTrace]] | None


def run_cim(net: Network, inputs: np.ndarray, cfg: SimulationConfig,
            jobs: int = 1, collect_trace: bool | None = None) -> RunResult:
    """Full crossbar run over a batch of inputs."""
    if collect_trace is None:
        collect_trace = cfg.mode == "trace"
    eng = _CimEngine(cfg, net, collect_trace)
    logits = _forward(net, inputs, eng, jobs=jobs)
    return RunResult(logits=logits, samples=int(inputs.shape[0]),
                     stats=eng.stats, traces=eng.traces if collect_trace else None)


def fidelity(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose argmax matches the teacher label."""
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == np.asarray(labels).ravel()))
