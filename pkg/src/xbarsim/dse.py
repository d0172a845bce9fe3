"""Greedy three-stage design-space exploration.

The search never enumerates the cross product.  It freezes one axis group at
a time, in the order the axes influence each other:

  Stage A  quantization scheme and precision on ideal integer hardware
           (run_software); the cheapest (scheme, bits) meeting the fidelity
           floor per scheme, then the scheme with the best hardware metrics
           at its own minimum bits.
  Stage B  digit-mapping design x cell bits at infinite on/off ratio and
           zero noise, each with the minimal calibrated-ADC precision that
           stays within the fidelity tolerance; winner by energy efficiency.
  Stage C  device sweep with the frozen front end; a device whose
           cell_bits_max is below the chosen cell bits falls back to the
           largest cell bits it supports (re-using that column's Stage B
           ADC precision).  Winner by energy efficiency among candidates
           meeting the fidelity floor.

Fidelity at stochastic points is the mean over fixed seeds; the final chosen
configuration is re-verified on fresh seeds and must land within two
standard errors of the search-time estimate.  Ties break by energy
efficiency, then area, then throughput.  Every evaluation appends to an
append-only log sufficient to replay the decision.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import hwperf, netgraph
from .config import (DEVICE_PRESETS, DeviceModel, SimulationConfig,
                     _device_from_value, validate)
from .tensorio import ModelBundle


class DSEError(Exception):
    pass


DEFAULT_SPACE = {
    "schemes": ["uniform-symmetric", "dynamic-fixed-point"],
    "bits": [2, 3, 4, 5, 6, 7, 8],
    "designs": ["Design1", "Design2", "Design3"],
    "cell_bits": [1, 2, 4],
    "adc_bits": [2, 3, 4, 5, 6, 7, 8, 9, 10],
    "devices": ["rram_150", "rram_17", "rram_10", "fefet_100", "pcm_12p5"],
    "fidelity_drop": 0.03,
    "seeds": [0, 1, 2, 3, 4],
}


def load_space(path: str) -> dict:
    try:
        with open(path) as fp:
            raw = json.load(fp)
    except OSError as e:
        raise DSEError(f"{path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DSEError(f"{path}: parse error: {e}") from e
    return normalize_space(raw)


def normalize_space(raw: dict) -> dict:
    space = dict(DEFAULT_SPACE)
    unknown = set(raw) - set(DEFAULT_SPACE)
    if unknown:
        raise DSEError(f"search space: unknown keys {sorted(unknown)}")
    space.update(raw)
    for key in ("schemes", "bits", "designs", "cell_bits", "adc_bits",
                "devices", "seeds"):
        if not isinstance(space[key], list) or not space[key]:
            raise DSEError(f"search space: {key} must be a non-empty list")
    if not 0.0 <= float(space["fidelity_drop"]) <= 1.0:
        raise DSEError("search space: fidelity_drop must be in [0, 1]")
    space["bits"] = sorted(int(b) for b in space["bits"])
    space["cell_bits"] = sorted(int(k) for k in space["cell_bits"])
    space["adc_bits"] = sorted(int(p) for p in space["adc_bits"])
    space["seeds"] = [int(s) for s in space["seeds"]]
    return space


def _replace(cfg: SimulationConfig, **groups) -> SimulationConfig:
    """dataclasses.replace across the nested config groups."""
    out = cfg
    for name, fields in groups.items():
        if name in ("seed", "mode", "device"):
            out = dataclasses.replace(out, **{name: fields})
        else:
            out = dataclasses.replace(out, **{name: dataclasses.replace(
                getattr(out, name), **fields)})
    return out


def _ideal_device(dev: DeviceModel) -> DeviceModel:
    return dataclasses.replace(dev, on_off_ratio=math.inf, sigma_cell=0.0,
                               cell_bits_max=8, name=dev.name + "+ideal")


def _resolve_device(value) -> DeviceModel:
    return _device_from_value(value, "space.devices[]")


def evaluate_fidelity(bundle: ModelBundle, net: netgraph.Network,
                      cfg: SimulationConfig, seeds: list[int],
                      jobs: int = 1) -> tuple[float, list[float]]:
    """Mean teacher fidelity of the crossbar path over the given seeds."""
    vals = []
    for s in seeds:
        c = dataclasses.replace(cfg, seed=s)
        res = netgraph.run_cim(net, bundle.inputs, c, jobs=jobs,
                               collect_trace=False)
        vals.append(netgraph.fidelity(res.logits, bundle.labels))
        if c.device.sigma_cell == 0.0 and c.smm_device().sigma_cell == 0.0 \
                and c.dmm_device().sigma_cell == 0.0:
            break  # deterministic point; further seeds are identical
    mean = float(np.mean(vals))
    return mean, vals


def _hw_metrics(bundle: ModelBundle, net: netgraph.Network,
                cfg: SimulationConfig, jobs: int = 1) -> dict:
    res = netgraph.run_cim(net, bundle.inputs, cfg, jobs=jobs,
                           collect_trace=False)
    chip = hwperf.build_chip(netgraph.stage_table(net), cfg)
    rep = hwperf.estimate_average(chip, res.stats, samples=res.samples)
    return hwperf.summarize(rep)


def _better(a: dict, b: dict | None) -> bool:
    """Tie-break order: energy efficiency, then area (smaller), then TOPS."""
    if b is None:
        return True
    ka = (a["energy_efficiency_tops_per_w"], -a["area_mm2"], a["throughput_tops"])
    kb = (b["energy_efficiency_tops_per_w"], -b["area_mm2"], b["throughput_tops"])
    return ka > kb


def minimal_adc_precision(bundle: ModelBundle, net: netgraph.Network,
                          cfg: SimulationConfig, p_list: list[int],
                          threshold: float, seeds: list[int],
                          jobs: int = 1, log: list | None = None):
    """Smallest ADC precision whose mean fidelity meets the threshold.

    Returns (precision, fidelity) or (None, best_fidelity) when even the
    largest precision falls short.
    """
    best_fid = -1.0
    for p in sorted(p_list):
        c = _replace(cfg, adc={"precision": p})
        fid, per_seed = evaluate_fidelity(bundle, net, c, seeds, jobs=jobs)
        if log is not None:
            log.append({"stage": "B.adc", "design": c.mapping.design,
                        "cell_bits": c.mapping.cell_bits, "adc_bits": p,
                        "fidelity": fid, "per_seed": per_seed})
        best_fid = max(best_fid, fid)
        if fid >= threshold:
            return p, fid
    return None, best_fid


def run_dse(space: dict, bundle: ModelBundle, base_cfg: SimulationConfig,
            jobs: int = 1) -> dict:
    space = normalize_space(space)
    net = netgraph.build_network(bundle.desc, bundle.weights)
    seeds = space["seeds"]
    drop = float(space["fidelity_drop"])
    baseline = 1.0  # teacher labels come from the bundle's own forward pass
    threshold = baseline - drop
    log: list[dict] = []
    result: dict = {"baseline_fidelity": baseline, "threshold": threshold,
                    "log": log}

    # ---- Stage A: scheme + precision on ideal integer hardware ------------
    stage_a: dict[str, dict] = {}
    for scheme in space["schemes"]:
        found = None
        for bits in space["bits"]:
            cfg = _replace(base_cfg,
                           quant={"scheme": scheme, "weight_bits": bits,
                                  "input_bits": bits})
            logits = netgraph.run_software(net, bundle.inputs, cfg, jobs=jobs)
            fid = netgraph.fidelity(logits, bundle.labels)
            log.append({"stage": "A", "scheme": scheme, "bits": bits,
                        "fidelity": fid})
            if fid >= threshold:
                found = {"bits": bits, "fidelity": fid}
                break
        if found is None:
            stage_a[scheme] = {"feasible": False}
            continue
        cfg = _replace(base_cfg,
                       quant={"scheme": scheme, "weight_bits": found["bits"],
                              "input_bits": found["bits"]},
                       mapping={"cell_bits": min(base_cfg.mapping.cell_bits,
                                                 found["bits"])})
        metrics = _hw_metrics(bundle, net, cfg, jobs=jobs)
        stage_a[scheme] = {"feasible": True, **found, "metrics": metrics}
        log.append({"stage": "A.hw", "scheme": scheme, "bits": found["bits"],
                    "metrics": metrics})
    feasible_a = {s: r for s, r in stage_a.items() if r.get("feasible")}
    if not feasible_a:
        result.update({"status": "infeasible", "stage_a": stage_a})
        return result
    scheme = None
    for s, r in feasible_a.items():
        if scheme is None or _better(r["metrics"], feasible_a[scheme]["metrics"]):
            scheme = s
    bits = feasible_a[scheme]["bits"]
    result["stage_a"] = {"table": stage_a, "scheme": scheme, "bits": bits}
    base = _replace(base_cfg, quant={"scheme": scheme, "weight_bits": bits,
                                     "input_bits": bits})

    # ---- Stage B: design x cell bits at r = inf ---------------------------
    ideal_dev = _ideal_device(base.device)
    stage_b: dict[str, dict] = {}
    candidates = [(d, k) for d in space["designs"]
                  for k in space["cell_bits"] if k <= bits]

    def eval_bk(dk):
        design, k = dk
        cfg = _replace(base, mapping={"design": design, "cell_bits": k},
                       adc={"kind": "calibrated"})
        cfg = dataclasses.replace(cfg, device=ideal_dev)
        sub_log: list = []
        p, fid = minimal_adc_precision(bundle, net, cfg, space["adc_bits"],
                                       threshold, seeds, log=sub_log)
        entry = {"design": design, "cell_bits": k, "log": sub_log}
        if p is None:
            entry.update({"feasible": False, "best_fidelity": fid})
            return entry
        mcfg = _replace(cfg, adc={"precision": p})
        metrics = _hw_metrics(bundle, net, mcfg)
        entry.update({"feasible": True, "adc_bits": p, "fidelity": fid,
                      "metrics": metrics})
        return entry

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(eval_bk, candidates))
    else:
        entries = [eval_bk(dk) for dk in candidates]
    for e in entries:
        stage_b[f"{e['design']}/k{e['cell_bits']}"] = e
        log.extend(e.pop("log"))
        log.append({"stage": "B", **{k: v for k, v in e.items()
                                     if k != "metrics"}})
    feasible_b = [e for e in entries if e.get("feasible")]
    if not feasible_b:
        result.update({"status": "infeasible", "stage_b": stage_b})
        return result
    best_b = None
    for e in feasible_b:
        if best_b is None or _better(e["metrics"], best_b["metrics"]):
            best_b = e
    result["stage_b"] = {"table": stage_b, "design": best_b["design"],
                         "cell_bits": best_b["cell_bits"],
                         "adc_bits": best_b["adc_bits"]}
    base = _replace(base, mapping={"design": best_b["design"],
                                   "cell_bits": best_b["cell_bits"]},
                    adc={"kind": "calibrated", "precision": best_b["adc_bits"]})

    # ---- Stage C: device sweep with cell-bit fallback ----------------------
    stage_c: dict[str, dict] = {}
    adc_by_k = {e["cell_bits"]: e.get("adc_bits") for e in entries
                if e["design"] == best_b["design"] and e.get("feasible")}

    def eval_dev(dev_value):
        dev = _resolve_device(dev_value)
        k = min(best_b["cell_bits"], dev.cell_bits_max)
        fallback_ks = [kk for kk in space["cell_bits"] if kk <= k]
        if not fallback_ks:
            return {"device": dev.name, "feasible": False,
                    "reason": f"no cell_bits candidate <= {dev.cell_bits_max}"}
        k = max(fallback_ks)
        p = adc_by_k.get(k)
        entry = {"device": dev.name, "cell_bits": k, "fallback": k != best_b["cell_bits"]}
        cfg = dataclasses.replace(
            _replace(base, mapping={"cell_bits": k}), device=dev)
        if p is None:
            sub_log: list = []
            icfg = dataclasses.replace(cfg, device=_ideal_device(dev))
            p, _f = minimal_adc_precision(bundle, net, icfg, space["adc_bits"],
                                          threshold, seeds, log=sub_log)
            entry["log"] = sub_log
            if p is None:
                entry.update({"feasible": False,
                              "reason": "no feasible ADC precision"})
                return entry
        cfg = _replace(cfg, adc={"precision": p})
        entry["adc_bits"] = p
        fid, per_seed = evaluate_fidelity(bundle, net, cfg, seeds)
        entry.update({"fidelity": fid, "per_seed": per_seed,
                      "feasible": fid >= threshold})
        if entry["feasible"]:
            entry["metrics"] = _hw_metrics(bundle, net, cfg)
        return entry

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            centries = list(pool.map(eval_dev, space["devices"]))
    else:
        centries = [eval_dev(d) for d in space["devices"]]
    for e in centries:
        stage_c[e["device"]] = e
        for item in e.pop("log", []):
            log.append(item)
        log.append({"stage": "C", **{k: v for k, v in e.items()
                                     if k != "metrics"}})
    feasible_c = [e for e in centries if e.get("feasible")]
    if not feasible_c:
        best_fid = max(centries, key=lambda e: e.get("fidelity", -1.0))
        result.update({"status": "infeasible", "stage_c": stage_c,
                       "closest": best_fid["device"]})
        return result
    best_c = None
    for e in feasible_c:
        if best_c is None or _better(e["metrics"], best_c["metrics"]):
            best_c = e
    result["stage_c"] = {"table": stage_c, "device": best_c["device"],
                         "cell_bits": best_c["cell_bits"],
                         "adc_bits": best_c["adc_bits"]}

    # ---- Final configuration + fresh-seed re-verification ------------------
    final_dev = _resolve_device(best_c["device"])
    final_cfg = dataclasses.replace(
        _replace(base, mapping={"cell_bits": best_c["cell_bits"]},
                 adc={"precision": best_c["adc_bits"]}),
        device=final_dev)
    rep = validate(final_cfg)
    if not rep.ok:
        raise DSEError("final config failed validation: " + "; ".join(rep.errors))
    fresh = [s + 1000 for s in seeds]
    fid_new, per_new = evaluate_fidelity(bundle, net, final_cfg, fresh)
    per_old = best_c["per_seed"]
    if len(per_old) > 1:
        se = float(np.std(per_old, ddof=1) / math.sqrt(len(per_old)))
    else:
        se = 0.0
    # Two standard errors, floored at one sample's worth of fidelity, since
    # the statistic is a mean of {0,1} indicators over the eval set.
    tol = max(2.0 * se, 1.0 / max(1, len(bundle.labels))) + 1e-12
    verified = abs(fid_new - best_c["fidelity"]) <= tol
    result["final"] = {
        "scheme": scheme, "bits": bits,
        "design": best_b["design"], "cell_bits": best_c["cell_bits"],
        "adc_bits": best_c["adc_bits"], "device": best_c["device"],
        "fidelity_search": best_c["fidelity"],
        "fidelity_fresh_seeds": fid_new,
        "fresh_per_seed": per_new,
        "stderr": se,
        "verified": bool(verified),
    }
    result["status"] = "ok"
    result["config"] = _config_snapshot(final_cfg)
    return result


def _config_snapshot(cfg: SimulationConfig) -> dict:
    from .config import config_to_dict
    return config_to_dict(cfg)
