"""Chip planning and area / latency / energy estimation.

The chip plan is pure geometry: every stage's slot shapes, ADC provisioning,
activation traffic, and (for dynamic-matmul stages) write volume are known
from tensor shapes alone.  Area and latency are therefore data-independent
and identical between the two energy estimators:

* estimate_trace   replays recorded per-(slot, vector, cycle) activity,
                   invoking the per-cycle cost model once per MAC cycle;
* estimate_average invokes it once per (slot-shape group, cycle) using the
                   run's average activity factor and mean conductance.

Both accumulate with math.fsum (exactly rounded sums), which is what lets
the two agree bit-for-bit on uniform-activity workloads instead of merely
"closely".

Latency model per stage: input vectors stream sequentially, one analog cycle
per input bit; all slots of a stage operate in lock step, so the stage's
cycle time follows its busiest ADC group.  Dynamic stages add array-write
time; the V-write of an attention block can overlap the preceding score
computation (params.dmm_write_overlap), the K-write cannot.  Softmax is
treated as free digital work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import cimkernel
from .config import CostParams, DeviceModel, SimulationConfig
from .netgraph import LayerStats, StageInfo

REPORT_SCHEMA_VERSION = 1

_CATEGORIES = ("subarray", "digital", "buffer", "interconnect")


class EstimateError(Exception):
    pass


def subarray_read_cost(rows: int, cols: int, n_sub: int, alpha: float,
                       gbar: float, adc_bits: int, adc_share: int,
                       params: CostParams):
    """Cost of one slot processing one input cycle of one vector.

    Returns (bitline J, wordline J, adc J, shiftadd J, cycle time s).
    cols counts used physical columns; a Design2 pair (n_sub=2) doubles the
    array current and drivers but shares one differential ADC per column.
    """
    e_bit = params.e_cell_j * alpha * rows * (cols * n_sub) * gbar
    e_wl = params.e_wl_j * rows * n_sub
    e_adc = (params.adc_energy_base_j * (1 << adc_bits)
             + params.adc_energy_per_bit_j * adc_bits) * cols
    e_sa = params.shiftadd_energy_per_col_j * cols
    t = (params.t_wl_s
         + adc_bits * params.t_comp_s * min(adc_share, cols)
         + params.t_sa_s)
    return e_bit, e_wl, e_adc, e_sa, t


@dataclass(frozen=True)
class StagePlan:
    info: StageInfo
    tile_kind: str                      # envm | sram | digital
    device: DeviceModel | None
    k: int
    adc_bits: int
    plan: cimkernel.TilePlan | None
    n_arrays: int                       # physical subarrays incl. head copies
    in_bits: int
    out_bits: int
    write_rows: int                     # rows written per inference (parallel)
    write_cells: int                    # cells written per inference


@dataclass(frozen=True)
class ChipPlan:
    stages: tuple[StagePlan, ...]
    buffer_bits: int
    macs_per_inference: int
    cfg: SimulationConfig


def build_chip(stages: list[StageInfo], cfg: SimulationConfig) -> ChipPlan:
    """Static chip plan; needs shapes only, never tensor data."""
    plans = []
    M = cfg.quant.input_bits
    for st in stages:
        if st.kind == "digital":
            plans.append(StagePlan(info=st, tile_kind="digital", device=None,
                                   k=0, adc_bits=0, plan=None, n_arrays=0,
                                   in_bits=0, out_bits=0, write_rows=0,
                                   write_cells=0))
            continue
        if st.kind == "dmm":
            dev = cfg.dmm_device()
            k = min(cfg.mapping.cell_bits, dev.cell_bits_max)
        else:
            dev = cfg.smm_device()
            k = cfg.mapping.cell_bits
        tp = cimkernel.tile(st.R, st.C, cfg.mapping.design,
                            cfg.quant.weight_bits, k,
                            cfg.arch.subarray_rows, cfg.arch.subarray_cols)
        write_rows = 0
        write_cells = 0
        if st.kind == "dmm":
            write_rows = max(s.used_rows for s in tp.slots)
            write_cells = st.heads * sum(
                s.used_rows * s.used_cols * tp.n_subarrays_per_slot
                for s in tp.slots)
        plans.append(StagePlan(
            info=st, tile_kind=dev.kind, device=dev, k=k,
            adc_bits=cfg.adc.precision, plan=tp,
            n_arrays=st.heads * tp.n_subarrays,
            in_bits=st.vectors_per_inference * st.heads * st.R * M,
            out_bits=st.vectors_per_inference * st.heads * st.C * M,
            write_rows=write_rows, write_cells=write_cells))
    buffer_bits = max((max(sp.in_bits, sp.out_bits) for sp in plans), default=0)
    macs = sum(st.macs_per_inference for st in stages)
    return ChipPlan(stages=tuple(plans), buffer_bits=buffer_bits,
                    macs_per_inference=macs, cfg=cfg)


# ---------------------------------------------------------------------------
# Static area / latency
# ---------------------------------------------------------------------------

def _stage_area_m2(sp: StagePlan, cfg: SimulationConfig) -> tuple[float, float]:
    """(subarray area, digital area) for one stage, full provisioned arrays."""
    if sp.plan is None:
        return 0.0, 0.0
    p = cfg.cost
    ar = cfg.arch
    ngrp = -(-ar.subarray_cols // ar.adc_share)
    slots = sp.info.heads * sp.plan.n_slots
    arrays = sp.n_arrays
    a_cells = arrays * (ar.subarray_rows * ar.subarray_cols * p.cell_area_m2
                        + ar.subarray_rows * p.wl_driver_area_m2)
    a_adc = slots * ngrp * (p.adc_area_base_m2 * (1 << sp.adc_bits)
                            + p.adc_area_per_bit_m2 * sp.adc_bits)
    a_dig = slots * ngrp * p.shiftadd_area_m2
    return a_cells + a_adc, a_dig


def _stage_latency_s(sp: StagePlan, cfg: SimulationConfig) -> dict:
    """Per-inference latency components for one stage (before overlap)."""
    if sp.plan is None:
        return {"subarray": 0.0, "digital": 0.0, "buffer": 0.0,
                "interconnect": 0.0, "write": 0.0}
    p = cfg.cost
    M = cfg.quant.input_bits
    V = sp.info.vectors_per_inference
    max_cols = max(s.used_cols for s in sp.plan.slots)
    cycles = V * M
    t_sub = cycles * (p.t_wl_s + sp.adc_bits * p.t_comp_s
                      * min(cfg.arch.adc_share, max_cols))
    t_dig = cycles * p.t_sa_s
    bits = sp.in_bits + sp.out_bits
    sub_a, dig_a = _stage_area_m2(sp, cfg)
    dist_mm = math.sqrt((sub_a + dig_a) * 1e6)
    return {"subarray": t_sub, "digital": t_dig,
            "buffer": bits * p.buffer_time_per_bit_s,
            "interconnect": bits * p.ic_time_per_bit_mm_s * dist_mm,
            "write": (sp.write_rows * sp.device.write_latency
                      if sp.write_cells else 0.0)}


def _assemble_latency(chip: ChipPlan) -> tuple[dict, dict]:
    """Chip latency by category, applying the V-write overlap rule.

    Returns (category totals, per-stage effective write latency).
    """
    cfg = chip.cfg
    per_stage = {sp.info.name: _stage_latency_s(sp, cfg) for sp in chip.stages}
    eff_write = {}
    # Group attention stages by block for the overlap rule.
    by_block: dict[int, dict[str, StagePlan]] = {}
    for sp in chip.stages:
        if sp.info.block is not None:
            by_block.setdefault(sp.info.block, {})[sp.info.op] = sp
    for sp in chip.stages:
        name = sp.info.name
        lat = per_stage[name]
        if lat["write"] == 0.0:
            eff_write[name] = 0.0
            continue
        if (sp.info.op == "pv" and cfg.cost.dmm_write_overlap
                and sp.info.block in by_block):
            blk = by_block[sp.info.block]
            hide = 0.0
            for op in ("qkt", "softmax"):
                if op in blk:
                    l2 = per_stage[blk[op].info.name]
                    hide += l2["subarray"] + l2["digital"]
            eff_write[name] = max(0.0, lat["write"] - hide)
        else:
            eff_write[name] = lat["write"]
    cats = {c: math.fsum(per_stage[sp.info.name][c] for sp in chip.stages)
            for c in _CATEGORIES}
    cats["subarray"] += math.fsum(eff_write.values())
    return cats, eff_write


def _static_energy(sp: StagePlan) -> float:
    """Write energy per inference (never hidden, unlike write latency)."""
    if not sp.write_cells:
        return 0.0
    return sp.write_cells * sp.device.write_energy


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _report_skeleton(chip: ChipPlan, mode: str, samples: int) -> dict:
    cfg = chip.cfg
    areas = {c: 0.0 for c in _CATEGORIES}
    for sp in chip.stages:
        a_sub, a_dig = _stage_area_m2(sp, cfg)
        areas["subarray"] += a_sub
        areas["digital"] += a_dig
    areas["buffer"] = chip.buffer_bits * cfg.cost.buffer_area_per_bit_m2
    areas["interconnect"] = (cfg.cost.ic_area_overhead
                             * (areas["subarray"] + areas["digital"]))
    area_mm2 = {k: v * 1e6 for k, v in areas.items()}
    area_mm2["total"] = math.fsum(area_mm2[c] for c in _CATEGORIES)

    lat_cats, eff_write = _assemble_latency(chip)
    lat = dict(lat_cats)
    lat["total"] = math.fsum(lat[c] for c in _CATEGORIES)

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "mode": mode,
        "samples": samples,
        "macs_per_inference": chip.macs_per_inference,
        "ops_per_inference": 2 * chip.macs_per_inference,
        "buffer_bits": chip.buffer_bits,
        "area_mm2": area_mm2,
        "latency_s": lat,
        "energy_j": {},
        "per_stage": [],
        "cost_model_invocations": 0,
        "_eff_write": eff_write,
    }


def _finish_report(report: dict, chip: ChipPlan,
                   stage_energy: dict[str, dict], invocations: int) -> dict:
    cfg = chip.cfg
    eff_write = report.pop("_eff_write")
    cats = {c: [] for c in _CATEGORIES}
    per_stage = []
    for sp in chip.stages:
        name = sp.info.name
        se = stage_energy.get(name, {c: 0.0 for c in _CATEGORIES})
        lat = _stage_latency_s(sp, cfg)
        a_sub, a_dig = _stage_area_m2(sp, cfg)
        for c in _CATEGORIES:
            cats[c].append(se[c])
        stage_lat = (lat["subarray"] + lat["digital"] + lat["buffer"]
                     + lat["interconnect"] + eff_write[name])
        per_stage.append({
            "name": name,
            "op": sp.info.op,
            "kind": sp.info.kind,
            "tile_kind": sp.tile_kind,
            "slots": 0 if sp.plan is None else sp.info.heads * sp.plan.n_slots,
            "subarrays": sp.n_arrays,
            "area_mm2": (a_sub + a_dig) * 1e6,
            "latency_s": stage_lat,
            "write_latency_s": lat["write"],
            "effective_write_latency_s": eff_write[name],
            "write_energy_j": _static_energy(sp),
            "energy_j": math.fsum(se[c] for c in _CATEGORIES),
        })
    energy = {c: math.fsum(v) for c, v in cats.items()}
    energy["total"] = math.fsum(energy[c] for c in _CATEGORIES)
    report["energy_j"] = energy
    report["per_stage"] = per_stage
    report["cost_model_invocations"] = invocations

    ops = report["ops_per_inference"]
    lat_t = report["latency_s"]["total"]
    en_t = energy["total"]
    area_t = report["area_mm2"]["total"]
    degenerate = lat_t <= 0.0 or en_t <= 0.0 or area_t <= 0.0
    report["degenerate"] = degenerate
    report["throughput_tops"] = (ops / lat_t / 1e12) if lat_t > 0 else math.inf
    report["energy_efficiency_tops_per_w"] = \
        (ops / en_t / 1e12) if en_t > 0 else math.inf
    report["area_efficiency_tops_per_mm2"] = \
        (report["throughput_tops"] / area_t) if area_t > 0 else math.inf
    return report


def _traffic_energy(sp: StagePlan, cfg: SimulationConfig) -> tuple[float, float]:
    """(buffer J, interconnect J) per inference for one stage."""
    bits = sp.in_bits + sp.out_bits
    sub_a, dig_a = _stage_area_m2(sp, cfg)
    dist_mm = math.sqrt((sub_a + dig_a) * 1e6)
    return (bits * cfg.cost.buffer_energy_per_bit_j,
            bits * cfg.cost.ic_energy_per_bit_mm_j * dist_mm)


def estimate_average(chip: ChipPlan, stats: dict[str, LayerStats],
                     samples: int = 1) -> dict:
    """Energy from aggregate activity: one cost-model call per (slot-shape
    group, input cycle)."""
    cfg = chip.cfg
    report = _report_skeleton(chip, "average", samples)
    stage_energy = {}
    invocations = 0
    for sp in chip.stages:
        name = sp.info.name
        acc = {c: [] for c in _CATEGORIES}
        if sp.plan is not None:
            st = stats.get(name)
            if st is None:
                raise EstimateError(f"no stats recorded for stage {name}")
            V = st.vectors_per_inference
            M = st.cycles
            alpha, gbar = st.alpha_avg, st.g_avg
            for (rows, cols, n_sub), mult in sorted(st.masks.items()):
                for _t in range(M):
                    e_bit, e_wl, e_adc, e_sa, _t_cyc = subarray_read_cost(
                        rows, cols, n_sub, alpha, gbar, sp.adc_bits,
                        cfg.arch.adc_share, cfg.cost)
                    invocations += 1
                    scale = float(mult * V)
                    acc["subarray"].append(e_bit * scale)
                    acc["subarray"].append(e_wl * scale)
                    acc["subarray"].append(e_adc * scale)
                    acc["digital"].append(e_sa * scale)
            acc["subarray"].append(_static_energy(sp))
            e_buf, e_ic = _traffic_energy(sp, cfg)
            acc["buffer"].append(e_buf)
            acc["interconnect"].append(e_ic)
        stage_energy[name] = {c: math.fsum(v) for c, v in acc.items()}
    return _finish_report(report, chip, stage_energy, invocations)


def estimate_trace(chip: ChipPlan, traces: dict[str, list], samples: int = 1) -> dict:
    """Energy replayed per (slot, vector, cycle) from recorded activity."""
    cfg = chip.cfg
    report = _report_skeleton(chip, "trace", samples)
    stage_energy = {}
    invocations = 0
    inv_samples = 1.0 / samples
    for sp in chip.stages:
        name = sp.info.name
        acc = {c: [] for c in _CATEGORIES}
        if sp.plan is not None:
            slot_traces = traces.get(name)
            if not slot_traces:
                raise EstimateError(f"no trace recorded for stage {name}")
            for tr in slot_traces:
                if tr.alpha is None:
                    raise EstimateError(
                        f"stage {name}: trace lacks per-vector activity; "
                        "run with mode=trace")
                V, M = tr.alpha.shape
                for v in range(V):
                    row = tr.alpha[v]
                    for t in range(M):
                        e_bit, e_wl, e_adc, e_sa, _t_cyc = subarray_read_cost(
                            tr.used_rows, tr.used_cols, tr.n_subarrays,
                            row[t], tr.gbar, sp.adc_bits,
                            cfg.arch.adc_share, cfg.cost)
                        invocations += 1
                        acc["subarray"].append(e_bit)
                        acc["subarray"].append(e_wl)
                        acc["subarray"].append(e_adc)
                        acc["digital"].append(e_sa)
            for c in ("subarray", "digital"):
                acc[c] = [math.fsum(acc[c]) * inv_samples]
            acc["subarray"].append(_static_energy(sp))
            e_buf, e_ic = _traffic_energy(sp, cfg)
            acc["buffer"].append(e_buf)
            acc["interconnect"].append(e_ic)
        stage_energy[name] = {c: math.fsum(v) for c, v in acc.items()}
    return _finish_report(report, chip, stage_energy, invocations)


def summarize(report: dict) -> dict:
    """Headline metrics from a report dict."""
    return {
        "area_mm2": report["area_mm2"]["total"],
        "latency_s_per_inference": report["latency_s"]["total"],
        "energy_j_per_inference": report["energy_j"]["total"],
        "throughput_tops": report["throughput_tops"],
        "energy_efficiency_tops_per_w": report["energy_efficiency_tops_per_w"],
        "area_efficiency_tops_per_mm2": report["area_efficiency_tops_per_mm2"],
        "degenerate": report.get("degenerate", False),
    }


def render_text(report: dict) -> str:
    """Fixed-width summary with per-category percentage breakdowns."""
    if report.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise EstimateError(
            f"report schema_version {report.get('schema_version')!r} not "
            f"supported (expected {REPORT_SCHEMA_VERSION})")
    lines = []
    add = lines.append
    add(f"mode: {report['mode']}    samples: {report['samples']}")
    add(f"MACs/inference: {report['macs_per_inference']}")
    add("")
    add(f"{'metric':<34}{'value':>16}")
    add(f"{'area (mm^2)':<34}{report['area_mm2']['total']:>16.6g}")
    add(f"{'latency per inference (s)':<34}{report['latency_s']['total']:>16.6g}")
    add(f"{'energy per inference (J)':<34}{report['energy_j']['total']:>16.6g}")
    add(f"{'throughput (TOPS)':<34}{report['throughput_tops']:>16.6g}")
    add(f"{'energy efficiency (TOPS/W)':<34}"
        f"{report['energy_efficiency_tops_per_w']:>16.6g}")
    add(f"{'compute density (TOPS/mm^2)':<34}"
        f"{report['area_efficiency_tops_per_mm2']:>16.6g}")
    for metric, unit in (("area_mm2", "mm^2"), ("latency_s", "s"),
                         ("energy_j", "J")):
        add("")
        add(f"{metric.split('_')[0]} breakdown ({unit})")
        total = report[metric]["total"]
        for cat in _CATEGORIES:
            val = report[metric][cat]
            pct = (100.0 * val / total) if total else 0.0
            add(f"  {cat:<22}{val:>16.6g}  {pct:6.2f}%")
    return "\n".join(lines) + "\n"
