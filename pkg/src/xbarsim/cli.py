"""Command-line interface.

Subcommands: synth, quantize, infer, estimate, dse, report.  All JSON output
is written with sorted keys and fixed separators, and every run drops a
manifest next to its outputs recording the subcommand, config digest, seed,
tool version, and phase timings.  Output files are byte-identical across
repeat runs with the same config and seed (the manifest's timing block is
the one documented exception).

Exit codes: 0 success, 1 usage error, 2 config/validation error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, dse, hwperf, netgraph, tensorio
from .analog import AnalogError
from .cimkernel import PlanError
from .config import ConfigError, config_digest, load_config
from .digitmap import DigitMapError
from .netgraph import NetError
from .quant import QuantError, quantize_tensor
from .tensorio import TensorIOError

USAGE_ERR, VALIDATION_ERR, RUNTIME_ERR = 1, 2, 3

_VALIDATION_ERRORS = (ConfigError, TensorIOError, QuantError, DigitMapError,
                      AnalogError, PlanError, NetError, dse.DSEError,
                      hwperf.EstimateError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERR, f"{self.prog}: error: {message}\n")


def _dump_json(obj, path: str) -> None:
    with open(path, "w") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True, separators=(",", ": "))
        fp.write("\n")


class _Manifest:
    def __init__(self, subcommand: str, args: argparse.Namespace):
        self.data = {
            "subcommand": subcommand,
            "tool_version": __version__,
            "seed": getattr(args, "seed", None),
            "config_digest": None,
            "outputs": [],
            "timings_s": {},
        }
        self._t0 = time.monotonic()
        self._last = self._t0

    def phase(self, name: str) -> None:
        now = time.monotonic()
        self.data["timings_s"][name] = round(now - self._last, 6)
        self._last = now

    def add_output(self, path: str) -> None:
        self.data["outputs"].append(os.path.basename(path))

    def write(self, directory: str) -> None:
        self.data["timings_s"]["total"] = round(time.monotonic() - self._t0, 6)
        self.data["outputs"].sort()
        _dump_json(self.data, os.path.join(directory, "manifest.json"))


def _load_cfg(args, manifest: _Manifest | None = None):
    cfg = load_config(args.config)
    if manifest is not None:
        manifest.data["config_digest"] = config_digest(args.config)
        manifest.data["seed"] = cfg.seed
    return cfg


def _load_model(path: str):
    bundle = tensorio.load_bundle(path)
    net = netgraph.build_network(bundle.desc, bundle.weights)
    return bundle, net


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    man = _Manifest("synth", args)
    if args.arch.endswith(".json"):
        with open(args.arch) as fp:
            arch = json.load(fp)
    else:
        arch = args.arch
    bundle = tensorio.synth_model(arch, seed=args.seed, samples=args.samples)
    man.phase("synth")
    os.makedirs(args.out, exist_ok=True)
    for p in tensorio.save_bundle(bundle, args.out):
        man.add_output(p)
    man.phase("write")
    man.write(args.out)
    print(f"wrote model bundle to {args.out} "
          f"({len(bundle.weights)} weight tensors, {args.samples} samples)")
    return 0


def cmd_quantize(args) -> int:
    man = _Manifest("quantize", args)
    cfg = _load_cfg(args, man)
    t = tensorio.read_tensor(args.tensor)
    bits = cfg.quant.weight_bits if args.role == "weight" else cfg.quant.input_bits
    signed = not (args.role == "input"
                  and cfg.mapping.input_sign_mode == "unsigned")
    qt = quantize_tensor(t, cfg.quant.scheme, bits, signed=signed)
    man.phase("quantize")
    outdir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(outdir, exist_ok=True)
    tensorio.write_tensor(args.out + ".npy", qt.values)
    _dump_json(qt.params.to_dict(), args.out + ".json")
    man.add_output(args.out + ".npy")
    man.add_output(args.out + ".json")
    man.phase("write")
    man.write(outdir)
    print(f"quantized {args.tensor}: scheme={qt.params.scheme} "
          f"bits={qt.params.bits} scale={qt.params.scale:.6g}")
    return 0


def cmd_infer(args) -> int:
    man = _Manifest("infer", args)
    cfg = _load_cfg(args, man)
    bundle, net = _load_model(args.model)
    inputs, labels = bundle.inputs, bundle.labels
    if args.limit and args.limit < inputs.shape[0]:
        inputs, labels = inputs[:args.limit], labels[:args.limit]
    man.phase("load")
    if args.mode == "software":
        logits = netgraph.run_software(net, inputs, cfg, jobs=args.jobs)
        stats_out = None
    else:
        res = netgraph.run_cim(net, inputs, cfg, jobs=args.jobs,
                               collect_trace=False)
        logits = res.logits
        stats_out = {
            name: {"alpha_avg": st.alpha_avg, "g_avg": st.g_avg,
                   "vectors_per_inference": st.vectors_per_inference,
                   "conversions": st.conversions}
            for name, st in res.stats.items() if st.kind != "digital"
        }
    man.phase("run")
    fid = netgraph.fidelity(logits, labels)
    ref = netgraph.run_reference(net, inputs)
    agree_ref = float(np.mean(np.argmax(logits, 1) == np.argmax(ref, 1)))
    metrics = {
        "schema_version": hwperf.REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "mode": args.mode,
        "samples": int(inputs.shape[0]),
        "fidelity": fid,
        "teacher_agreement": agree_ref,
        "stage_activity": stats_out,
    }
    outdir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(outdir, exist_ok=True)
    _dump_json(metrics, args.out)
    man.add_output(args.out)
    man.phase("write")
    man.write(outdir)
    print(f"fidelity: {fid:.4f} over {inputs.shape[0]} samples ({args.mode})")
    return 0


def cmd_estimate(args) -> int:
    man = _Manifest("estimate", args)
    cfg = _load_cfg(args, man)
    bundle, net = _load_model(args.model)
    inputs = bundle.inputs
    if args.limit and args.limit < inputs.shape[0]:
        inputs = inputs[:args.limit]
    mode = args.mode or cfg.mode
    man.phase("load")
    res = netgraph.run_cim(net, inputs, cfg, jobs=args.jobs,
                           collect_trace=(mode == "trace"))
    man.phase("run")
    chip = hwperf.build_chip(netgraph.stage_table(net), cfg)
    if mode == "trace":
        report = hwperf.estimate_trace(chip, res.traces, samples=res.samples)
    else:
        report = hwperf.estimate_average(chip, res.stats, samples=res.samples)
    report["tool_version"] = __version__
    man.phase("estimate")
    outdir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(outdir, exist_ok=True)
    _dump_json(report, args.out)
    man.add_output(args.out)
    man.phase("write")
    man.write(outdir)
    if args.text:
        sys.stdout.write(hwperf.render_text(report))
    else:
        s = hwperf.summarize(report)
        print(f"{mode}: {s['throughput_tops']:.4g} TOPS, "
              f"{s['energy_efficiency_tops_per_w']:.4g} TOPS/W, "
              f"{s['area_mm2']:.4g} mm^2")
    return 0


def cmd_dse(args) -> int:
    man = _Manifest("dse", args)
    cfg = _load_cfg(args, man)
    bundle, net = _load_model(args.model)
    space = dse.load_space(args.space) if args.space else dse.normalize_space({})
    man.phase("load")
    result = dse.run_dse(space, bundle, cfg, jobs=args.jobs)
    man.phase("search")
    os.makedirs(args.out, exist_ok=True)
    out_res = os.path.join(args.out, "dse_result.json")
    _dump_json(result, out_res)
    man.add_output(out_res)
    if result.get("status") == "ok":
        out_cfg = os.path.join(args.out, "best_config.json")
        _dump_json(result["config"], out_cfg)
        man.add_output(out_cfg)
        f = result["final"]
        print(f"best: {f['scheme']} {f['bits']}b, {f['design']} "
              f"k={f['cell_bits']}, adc={f['adc_bits']}b, {f['device']}, "
              f"fidelity={f['fidelity_search']:.4f} "
              f"(fresh {f['fidelity_fresh_seeds']:.4f})")
    else:
        print(f"search ended: {result.get('status')}")
    man.phase("write")
    man.write(args.out)
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.input) as fp:
            report = json.load(fp)
    except OSError as e:
        raise TensorIOError(f"{args.input}: {e}") from e
    except json.JSONDecodeError as e:
        raise TensorIOError(f"{args.input}: parse error: {e}") from e
    if args.format == "text":
        out = hwperf.render_text(report)
    else:
        out = json.dumps(hwperf.summarize(report), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fp:
            fp.write(out)
    else:
        sys.stdout.write(out)
    return 0


# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xbarsim",
                description="Pre-circuit simulator for mixed-signal "
                            "compute-in-memory accelerators")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("synth", help="generate a deterministic model bundle")
    sp.add_argument("--arch", default="tiny-cnn",
                    help="builtin name (tiny-cnn, tiny-attention) or net JSON path")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--samples", type=int, default=32)
    sp.add_argument("--out", required=True, help="output bundle directory")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("quantize", help="quantize one tensor file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--tensor", required=True, help="input .npy")
    sp.add_argument("--role", choices=("weight", "input"), default="weight")
    sp.add_argument("--out", required=True,
                    help="output prefix (writes .npy and .json)")
    sp.set_defaults(fn=cmd_quantize)

    sp = sub.add_parser("infer", help="run a model and score teacher fidelity")
    sp.add_argument("--config", required=True)
    sp.add_argument("--model", required=True, help="bundle directory")
    sp.add_argument("--mode", choices=("software", "cim"), default="cim")
    sp.add_argument("--limit", type=int, default=0, help="cap eval samples")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True, help="metrics JSON path")
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("estimate", help="hardware area/latency/energy report")
    sp.add_argument("--config", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--mode", choices=("trace", "average"), default=None,
                    help="override config mode")
    sp.add_argument("--limit", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--text", action="store_true", help="print the text table")
    sp.add_argument("--out", required=True, help="report JSON path")
    sp.set_defaults(fn=cmd_estimate)

    sp = sub.add_parser("dse", help="greedy design-space exploration")
    sp.add_argument("--config", required=True, help="base config")
    sp.add_argument("--model", required=True)
    sp.add_argument("--space", default=None, help="search-space JSON")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_dse)

    sp = sub.add_parser("report", help="render a report JSON")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _VALIDATION_ERRORS as e:
        print(f"xbarsim: {e}", file=sys.stderr)
        return VALIDATION_ERR
    except FileNotFoundError as e:
        print(f"xbarsim: {e}", file=sys.stderr)
        return VALIDATION_ERR
    except Exception as e:  # noqa: BLE001 - single-line diagnostic, code 3
        print(f"xbarsim: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return RUNTIME_ERR


if __name__ == "__main__":
    sys.exit(main())
