"""Crossbar tiling and the bit-serial integer matmul pipeline.

A logical (R x C) integer matmul is split over fixed-size subarrays:

* rows beyond subarray_rows become row bands whose partial outputs add up;
* each weight occupies cols_per_weight adjacent physical columns (its digit
  planes, plus the sign plane for Design1);
* Design3 reserves one dummy column per subarray, so a subarray fits
  floor((subarray_cols - extras) / cols_per_weight) weights;
* Design2 programs a paired subarray per slot and senses the bitline
  difference, so one ADC serves each column pair and the conductance floor
  cancels exactly before conversion.

Per input cycle, each slot sees the popcount-weighted column currents,
corrects them (optionally) by the analytic conductance floor, converts
through the per-column-class ADC, and accumulates converted values times
their significances into integer outputs.  The inner loop lives in
xbarsim._kernels (compiled when available).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, analog, digitmap
from .config import DeviceModel, SimulationConfig
from .quant import round_half_away


class PlanError(Exception):
    pass


@dataclass(frozen=True)
class SlotPlan:
    band: int            # row band index
    group: int           # column group index
    r0: int              # logical weight-row range [r0, r1)
    r1: int
    w0: int              # logical output-column range [w0, w1)
    w1: int
    used_rows: int
    used_cols: int       # physical columns incl. sign/dummy, per subarray


@dataclass(frozen=True)
class TilePlan:
    R: int
    C: int
    design: str
    N: int
    k: int
    layout: digitmap.PlaneLayout
    subarray_rows: int
    subarray_cols: int
    cols_per_weight: int
    extras: int                      # dummy columns per subarray
    n_subarrays_per_slot: int        # 2 for Design2 pairs
    weights_per_subarray: int
    n_bands: int
    n_groups: int
    slots: tuple[SlotPlan, ...]

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def n_subarrays(self) -> int:
        return self.n_slots * self.n_subarrays_per_slot


def tile(R: int, C: int, design: str, N: int, k: int,
         subarray_rows: int, subarray_cols: int) -> TilePlan:
    """Static slot geometry for an (R x C) matmul.  Pure; no data needed."""
    if R < 1 or C < 1:
        raise PlanError(f"matmul dims must be positive, got {R}x{C}")
    lay = digitmap.plane_layout(design, N, k)
    pcw = lay.cols_per_weight
    extras = 1 if design == "Design3" else 0
    wps = (subarray_cols - extras) // pcw
    if wps < 1:
        raise PlanError(
            f"subarray_cols={subarray_cols} cannot hold one {N}-bit weight "
            f"({pcw} columns + {extras} dummy) for {design} at k={k}")
    n_bands = -(-R // subarray_rows)
    n_groups = -(-C // wps)
    slots = []
    for b in range(n_bands):
        r0, r1 = b * subarray_rows, min((b + 1) * subarray_rows, R)
        for g in range(n_groups):
            w0, w1 = g * wps, min((g + 1) * wps, C)
            used_cols = (w1 - w0) * pcw + extras
            slots.append(SlotPlan(band=b, group=g, r0=r0, r1=r1, w0=w0, w1=w1,
                                  used_rows=r1 - r0, used_cols=used_cols))
    return TilePlan(R=R, C=C, design=design, N=N, k=k, layout=lay,
                    subarray_rows=subarray_rows, subarray_cols=subarray_cols,
                    cols_per_weight=pcw, extras=extras,
                    n_subarrays_per_slot=lay.n_subarrays,
                    weights_per_subarray=wps, n_bands=n_bands, n_groups=n_groups,
                    slots=tuple(slots))


@dataclass
class SlotTrace:
    """Per-slot activity record from one apply() call."""

    used_rows: int
    used_cols: int
    n_subarrays: int
    gbar: float              # mean physical conductance over used cells
    a_sum: int               # exact sum of active-row counts over (v, t)
    vectors: int
    cycles: int
    conversions: int
    alpha: np.ndarray | None = None   # (V, M) active-row fraction, trace mode


@dataclass
class _Slot:
    plan: SlotPlan
    cells: np.ndarray                # (rows, C_used) float64
    col_sig: np.ndarray
    col_out: np.ndarray
    class_of: np.ndarray          # ADC class per column: one class per plane
    class_dmax: list[int]         # per-class max digit (dummy class last)
    gbar: float
    n_cells: int
    specs: list[analog.ADCSpec] | None = None
    refs_flat: np.ndarray | None = None
    refs_off: np.ndarray | None = None
    centers_flat: np.ndarray | None = None
    centers_off: np.ndarray | None = None


class CimOperator:
    """A logical weight matrix programmed onto crossbar slots.

    Static-matmul stages build one operator per layer and reuse it for every
    input; dynamic-matmul stages build one per (sample, head).  apply() is
    read-only after ADC calibration, so operators are safe to share across
    worker threads.
    """

    def __init__(self, Wq: np.ndarray, cfg: SimulationConfig, *,
                 device: DeviceModel | None = None, k: int | None = None,
                 rng: np.random.Generator | None = None):
        Wq = np.asarray(Wq)
        if Wq.ndim != 2:
            raise PlanError("weights must be 2-D (lower conv first)")
        self.cfg = cfg
        self.device = device if device is not None else cfg.device
        self.k = k if k is not None else cfg.mapping.cell_bits
        self.N = cfg.quant.weight_bits
        self.M = cfg.quant.input_bits
        self.design = cfg.mapping.design
        if self.k > self.device.cell_bits_max:
            raise PlanError(f"cell_bits={self.k} exceeds device "
                            f"cell_bits_max={self.device.cell_bits_max}")
        R, C = Wq.shape
        self.plan = tile(R, C, self.design, self.N, self.k,
                         cfg.arch.subarray_rows, cfg.arch.subarray_cols)
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        self._corr = 0.0
        if (cfg.mapping.offset_cancellation == "dummy-column"
                and self.design != "Design2"):
            self._corr = self.device.offset(self.k)
        dp = digitmap.decompose_weights(Wq, self.design, self.N, self.k)
        self._slots = [self._build_slot(sp, dp, rng) for sp in self.plan.slots]
        self._custom_spec = None
        if cfg.adc.kind == "custom":
            self._custom_spec = analog.load_adc_spec(cfg.adc.spec_path)
        if cfg.adc.kind != "calibrated":
            for s in self._slots:
                self._set_specs(s, self._static_specs(s))

    # -- programming -------------------------------------------------------

    def _build_slot(self, sp: SlotPlan, dp: digitmap.DigitPlanes,
                    rng: np.random.Generator) -> _Slot:
        lay = dp.layout
        rows = sp.used_rows
        nw = sp.w1 - sp.w0
        pcw = self.plan.cols_per_weight
        cu = sp.used_cols
        dev, k = self.device, self.k
        sigma = dev.sigma_cell

        col_sig = np.empty(cu, dtype=np.float64)
        col_out = np.empty(cu, dtype=np.int32)
        # One ADC class per digit plane: same-significance columns share a
        # conversion table, the Design3 dummy gets its own.
        col_class = np.empty(cu, dtype=np.int32)

        if self.design == "Design2":
            nm = pcw
            dpos = np.empty((rows, cu), dtype=np.float64)
            dneg = np.empty((rows, cu), dtype=np.float64)
            for wi in range(nw):
                w = sp.w0 + wi
                for j in range(nm):
                    c = wi * pcw + j
                    dpos[:, c] = dp.planes[j, sp.r0:sp.r1, w]
                    dneg[:, c] = dp.planes[nm + j, sp.r0:sp.r1, w]
                    col_sig[c] = lay.sigs[j]
                    col_out[c] = wi
                    col_class[c] = j
            off = dev.offset(k)
            if sigma > 0.0:
                ep = rng.normal(0.0, sigma, size=dpos.shape)
                en = rng.normal(0.0, sigma, size=dneg.shape)
                raw_p, raw_n = dpos + off + ep, dneg + off + en
                gp, gn = np.maximum(raw_p, 0.0), np.maximum(raw_n, 0.0)
                # Differential conductance with the common-mode floor cancelled
                # symbolically; clamp shortfalls re-enter as (g - raw).
                diff = (dpos - dneg) + (ep - en) + (gp - raw_p) - (gn - raw_n)
            else:
                gp, gn = dpos + off, dneg + off
                diff = dpos - dneg
            cells = diff
            gbar = float((gp.sum() + gn.sum()) / (2 * gp.size))
            n_cells = 2 * gp.size
            class_dmax = [int(d) for d in lay.dmax[:nm]]
        else:
            digits = np.empty((rows, cu), dtype=np.int64)
            for wi in range(nw):
                w = sp.w0 + wi
                for j in range(pcw):
                    c = wi * pcw + j
                    digits[:, c] = dp.planes[j, sp.r0:sp.r1, w]
                    col_sig[c] = lay.sigs[j]
                    col_out[c] = wi
                    col_class[c] = j
            class_dmax = [int(d) for d in lay.dmax]
            if self.plan.extras:
                c = nw * pcw
                digits[:, c] = lay.dummy_digit
                col_sig[c] = lay.dummy_sig
                col_out[c] = -1
                col_class[c] = pcw
                class_dmax.append(int(lay.dummy_digit))
            cells = analog.program_cells(digits, dev, k,
                                         rng if sigma > 0.0 else None)
            gbar = float(cells.mean())
            n_cells = cells.size

        return _Slot(plan=sp, cells=np.ascontiguousarray(cells),
                     col_sig=col_sig, col_out=col_out, class_of=col_class,
                     class_dmax=class_dmax, gbar=gbar, n_cells=n_cells)

    # -- ADC specs ----------------------------------------------------------

    def _static_specs(self, s: _Slot) -> list[analog.ADCSpec]:
        adc = self.cfg.adc
        if self._custom_spec is not None:
            return [self._custom_spec] * len(s.class_dmax)
        specs = []
        for dmax in s.class_dmax:
            if adc.lo is not None and adc.hi is not None:
                lo, hi = adc.lo, adc.hi
            else:
                hi = float(s.plan.used_rows * dmax)
                lo = -hi if self.design == "Design2" else 0.0
                if hi <= lo:
                    hi = lo + 1.0
            specs.append(analog.build_linear_adc(adc.precision, lo, hi))
        return specs

    def _set_specs(self, s: _Slot, specs: list[analog.ADCSpec]) -> None:
        s.specs = specs
        refs = [sp.refs for sp in specs]
        cens = [sp.centers for sp in specs]
        s.refs_off = np.cumsum([0] + [r.size for r in refs]).astype(np.int64)
        s.centers_off = np.cumsum([0] + [c.size for c in cens]).astype(np.int64)
        s.refs_flat = (np.concatenate(refs) if refs else
                       np.empty(0)).astype(np.float64)
        s.centers_flat = np.concatenate(cens).astype(np.float64)

    def _calibrate(self, bits: np.ndarray) -> None:
        ncal = min(self.cfg.adc.calibration_vectors, bits.shape[0])
        p = self.cfg.adc.precision
        for s in self._slots:
            if s.specs is not None:
                continue
            band = np.ascontiguousarray(bits[:ncal, :, s.plan.r0:s.plan.r1])
            B = band.reshape(-1, band.shape[2]).astype(np.float64)
            S = B @ s.cells
            if self._corr != 0.0:
                S = S - B.sum(axis=1)[:, None] * self._corr
            specs = []
            for ci in range(len(s.class_dmax)):
                samples = S[:, s.class_of == ci].ravel()
                specs.append(analog.calibrate_nonlinear_adc(samples, p))
            self._set_specs(s, specs)

    # -- execution ----------------------------------------------------------

    def apply(self, Xq: np.ndarray, *, input_mode: str | None = None,
              collect_trace: bool = False) -> tuple[np.ndarray, list[SlotTrace]]:
        """Run the full bit-serial pipeline; returns integer outputs.

        Xq is a (V, R) int array already quantized to M (input) bits.  The
        output is the exact integer-domain product as seen through the
        analog path; callers apply scale_X * scale_W to dequantize.
        """
        Xq = np.asarray(Xq)
        if Xq.ndim != 2 or Xq.shape[1] != self.plan.R:
            raise PlanError(f"input must be (V, {self.plan.R})")
        mode = input_mode or self.cfg.mapping.input_sign_mode
        bp = digitmap.decompose_inputs(Xq, self.M, mode)
        bits = bp.bits
        V = bits.shape[0]
        self._calibrate(bits)

        out = np.zeros((V, self.plan.C), dtype=np.float64)
        traces: list[SlotTrace] = []
        for s in self._slots:
            sp = s.plan
            band = bits if (sp.r0 == 0 and sp.r1 == bits.shape[2]) else \
                np.ascontiguousarray(bits[:, :, sp.r0:sp.r1])
            nw = sp.w1 - sp.w0
            slot_out = np.zeros((V, nw), dtype=np.float64)
            dummy_out = np.zeros(V, dtype=np.float64)
            alpha = np.empty((V, self.M), dtype=np.float64)
            _kernels.run_slot(band, s.cells, self._corr,
                              s.refs_flat, s.refs_off,
                              s.centers_flat, s.centers_off,
                              s.class_of, s.col_sig, s.col_out,
                              bp.cycle_sigs, slot_out, dummy_out, alpha)
            if self.plan.extras:
                slot_out += dummy_out[:, None]
            out[:, sp.w0:sp.w1] += slot_out
            traces.append(SlotTrace(
                used_rows=sp.used_rows, used_cols=sp.used_cols,
                n_subarrays=self.plan.n_subarrays_per_slot,
                gbar=s.gbar, a_sum=int(band.sum(dtype=np.int64)),
                vectors=V, cycles=self.M,
                conversions=V * self.M * sp.used_cols,
                alpha=alpha if collect_trace else None))
        Y = round_half_away(out).astype(np.int32)
        return Y, traces


def cim_matmul(Xq: np.ndarray, Wq: np.ndarray, cfg: SimulationConfig, *,
               device: DeviceModel | None = None, k: int | None = None,
               rng: np.random.Generator | None = None,
               input_mode: str | None = None,
               collect_trace: bool = False) -> tuple[np.ndarray, list[SlotTrace]]:
    """One-shot prepare + apply for a single integer matmul."""
    op = CimOperator(Wq, cfg, device=device, k=k, rng=rng)
    return op.apply(Xq, input_mode=input_mode, collect_trace=collect_trace)
