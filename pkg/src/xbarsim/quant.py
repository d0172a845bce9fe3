"""Post-training quantizers.

Two schemes, both symmetric and zero-point-free so the integer product of a
weight tensor and an input tensor dequantizes with a single scale multiply:

* uniform-symmetric: scale = max|t| / (2^(b-1) - 1).
* dynamic-fixed-point: scale = 2^-FL with FL the largest integer such that
  max|t| <= 2^(b-1) * 2^-FL; integer grid is the same, only the scale rule
  differs.

Signed tensors clamp to [-(2^(b-1)-1), 2^(b-1)-1]; the asymmetric extra code
-2^(b-1) is never emitted so every scheme/design pair sees the same domain.
Unsigned mode (used for attention probabilities) maps [0, max] onto
[0, 2^b - 1].

Rounding is half-away-from-zero everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class QuantError(Exception):
    pass


def round_half_away(x: np.ndarray | float) -> np.ndarray:
    """round(2.5) -> 3, round(-2.5) -> -3. numpy.round would give 2 / -2."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    scheme: str          # "uniform-symmetric" | "dynamic-fixed-point"
    bits: int
    scale: float
    signed: bool = True

    @property
    def qmin(self) -> int:
        return -(2 ** (self.bits - 1) - 1) if self.signed else 0

    @property
    def qmax(self) -> int:
        return (2 ** (self.bits - 1) - 1) if self.signed else 2 ** self.bits - 1

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "bits": self.bits, "scale": self.scale,
                "signed": self.signed}

    @staticmethod
    def from_dict(d: dict) -> "QuantParams":
        return QuantParams(scheme=d["scheme"], bits=int(d["bits"]),
                           scale=float(d["scale"]), signed=bool(d["signed"]))


def _dfp_fraction_length(max_abs: float, bits: int) -> int:
    """Largest FL with max_abs <= 2^(bits-1) * 2^-FL, computed exactly.

    The float log2 estimate can be off by one at power-of-two boundaries, so
    the result is refined with exact ldexp comparisons.
    """
    if max_abs <= 0:
        return 0
    fl = int(math.floor(bits - 1 - math.log2(max_abs)))
    while max_abs <= math.ldexp(1.0, bits - 1 - (fl + 1)):
        fl += 1
    while max_abs > math.ldexp(1.0, bits - 1 - fl):
        fl -= 1
    return max(-60, min(60, fl))


def calibrate(t: np.ndarray, scheme: str, bits: int, signed: bool = True) -> QuantParams:
    """Pick the scale for tensor t.  Weights calibrate once; activations per batch."""
    if not 2 <= bits <= 8:
        raise QuantError(f"bits must be in [2, 8], got {bits}")
    t = np.asarray(t)
    if t.size == 0:
        return QuantParams(scheme, bits, 1.0, signed)
    if signed:
        max_abs = float(np.max(np.abs(t)))
    else:
        max_abs = float(max(np.max(t), 0.0))
    if max_abs == 0.0 or not math.isfinite(max_abs):
        return QuantParams(scheme, bits, 1.0, signed)

    if scheme == "uniform-symmetric":
        levels = (2 ** (bits - 1) - 1) if signed else (2 ** bits - 1)
        scale = max_abs / levels
    elif scheme == "dynamic-fixed-point":
        if not signed:
            # Unsigned dynamic fixed point: max <= 2^bits * 2^-FL.
            fl = _dfp_fraction_length(max_abs, bits + 1)
        else:
            fl = _dfp_fraction_length(max_abs, bits)
        scale = math.ldexp(1.0, -fl)
    else:
        raise QuantError(f"unknown scheme {scheme!r}")
    return QuantParams(scheme, bits, scale, signed)


def quantize(t: np.ndarray, p: QuantParams) -> np.ndarray:
    q = round_half_away(np.asarray(t, dtype=np.float64) / p.scale)
    return np.clip(q, p.qmin, p.qmax).astype(np.int32)


def dequantize(q: np.ndarray, p: QuantParams) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * p.scale


@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray   # int32
    params: QuantParams


def quantize_tensor(t: np.ndarray, scheme: str, bits: int,
                    signed: bool = True) -> QuantizedTensor:
    p = calibrate(t, scheme, bits, signed)
    return QuantizedTensor(values=quantize(t, p), params=p)
