"""Analog non-idealities: cell programming and analog-to-digital conversion.

Conductances are expressed in "cell units" (digit value 1 == one unit) so the
whole simulation stays device-agnostic until costs are attached.  A k-bit
cell programmed to digit d lands at

    g = d + (2^k - 1) / (r - 1) + eps,   eps ~ N(0, sigma_cell), g >= 0

where r is the on/off ratio; r = inf drops the additive floor entirely.

The ADC is a monotone staircase: 2^p - 1 reference levels and 2^p output
centers.  An input x maps to centers[i] for refs[i-1] <= x < refs[i] (with
the obvious open ends).  Linear specs place centers uniformly; calibrated
specs place references at sample quantiles and centers at bucket medians.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import DeviceModel


class AnalogError(Exception):
    pass


def program_cells(digits: np.ndarray, device: DeviceModel, k: int,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Map digit values to effective conductances, in cell units."""
    if k > device.cell_bits_max:
        raise AnalogError(f"k={k} exceeds device cell_bits_max={device.cell_bits_max}")
    d = np.asarray(digits, dtype=np.float64)
    if d.min(initial=0.0) < 0 or d.max(initial=0.0) > 2 ** k - 1:
        raise AnalogError(f"digit out of [0, 2^{k}-1] range")
    g = d + device.offset(k)
    if device.sigma_cell > 0.0:
        if rng is None:
            raise AnalogError("programming noise requested but no rng given")
        g = g + rng.normal(0.0, device.sigma_cell, size=d.shape)
    return np.maximum(g, 0.0)


@dataclass(frozen=True)
class ADCSpec:
    """Staircase transfer: len(centers) == len(refs) + 1, refs strictly
    increasing, centers non-decreasing."""

    refs: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        refs = np.asarray(self.refs, dtype=np.float64)
        centers = np.asarray(self.centers, dtype=np.float64)
        object.__setattr__(self, "refs", refs)
        object.__setattr__(self, "centers", centers)
        if centers.size != refs.size + 1:
            raise AnalogError("ADC spec: need len(centers) == len(refs) + 1")
        if refs.size and np.any(np.diff(refs) <= 0):
            raise AnalogError("ADC spec: references must be strictly increasing")
        if centers.size > 1 and np.any(np.diff(centers) < 0):
            raise AnalogError("ADC spec: centers must be non-decreasing")

    @property
    def levels(self) -> int:
        return int(self.centers.size)


def build_linear_adc(precision: int, lo: float, hi: float) -> ADCSpec:
    """Uniform staircase over [lo, hi] with 2^precision output levels."""
    if precision < 1:
        raise AnalogError("ADC precision must be >= 1")
    if not lo < hi:
        raise AnalogError("ADC range must satisfy lo < hi")
    levels = 1 << precision
    centers = lo + (hi - lo) * np.arange(levels, dtype=np.float64) / (levels - 1)
    refs = (centers[:-1] + centers[1:]) / 2.0
    return ADCSpec(refs=refs, centers=centers)


def calibrate_nonlinear_adc(samples: np.ndarray, precision: int) -> ADCSpec:
    """Quantile-balanced staircase fitted to observed pre-ADC sums.

    References sit at the 1/L .. (L-1)/L sample quantiles (duplicates merged,
    so degenerate sample sets yield fewer levels); each bucket outputs the
    median of its samples, or the nearest reference if the bucket is empty.
    """
    if precision < 1:
        raise AnalogError("ADC precision must be >= 1")
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise AnalogError("ADC calibration needs at least one sample")
    levels = 1 << precision
    qs = np.arange(1, levels) / levels
    refs = np.unique(np.quantile(samples, qs))
    refs = refs[refs > samples.min()]   # a ref at the min separates nothing
    if refs.size == 0:
        return ADCSpec(refs=np.empty(0),
                       centers=np.array([float(np.median(samples))]))
    idx = np.searchsorted(refs, samples, side="right")
    centers = np.empty(refs.size + 1, dtype=np.float64)
    for b in range(refs.size + 1):
        sel = samples[idx == b]
        if sel.size:
            centers[b] = np.median(sel)
        else:
            centers[b] = refs[min(b, refs.size - 1)]
    # Median of a bucket can tie the bucket edge; force monotonicity.
    np.maximum.accumulate(centers, out=centers)
    return ADCSpec(refs=refs, centers=centers)


def load_adc_spec(path: str) -> ADCSpec:
    try:
        with open(path) as fp:
            raw = json.load(fp)
    except OSError as e:
        raise AnalogError(f"{path}: {e}") from e
    except json.JSONDecodeError as e:
        raise AnalogError(f"{path}: parse error: {e}") from e
    for key in ("refs", "centers"):
        if key not in raw or not isinstance(raw[key], list):
            raise AnalogError(f"{path}: missing or non-list {key!r}")
    return ADCSpec(refs=np.array(raw["refs"], dtype=np.float64),
                   centers=np.array(raw["centers"], dtype=np.float64))


def adc_convert(x: np.ndarray | float, spec: ADCSpec) -> np.ndarray | float:
    """Apply the staircase; works on scalars and arrays."""
    scalar = np.isscalar(x)
    xv = np.asarray(x, dtype=np.float64)
    idx = np.searchsorted(spec.refs, xv, side="right")
    out = spec.centers[idx]
    return float(out) if scalar else out
