"""Digit decomposition of quantized operands onto memory cells and input cycles.

A signed N-bit weight matrix becomes a stack of unsigned digit planes, one
plane per physical column group, each with a signed significance weight.
Three layouts are supported:

Design1  two's-complement style: the low N-1 bits split into ceil((N-1)/k)
         base-2^k planes with significances +2^(jk); one extra 1-bit plane
         holds the sign bit with significance -2^(N-1).

Design2  positive/negative split: |w| goes to the positive plane stack when
         w >= 0, else to the negative stack.  Each stack provisions
         ceil(N/k) planes (significances +/-2^(jk)); the stacks live in a
         paired subarray whose bitline difference is taken before conversion.

Design3  offset binary: w + 2^(N-1) is an unsigned N-bit value split into
         ceil(N/k) planes.  The constant 2^(N-1) is removed by one dummy
         column per subarray that is programmed to the single nonzero digit
         g = 2^((N-1) mod k) at plane q = (N-1) // k; its converted sum is
         re-weighted by -2^(qk) and subtracted from every output column.

Inputs stream bit-serially: M cycles with cycle weights 2^t (unsigned mode)
or 2^t except -2^(M-1) on the final cycle (two's-complement mode).

The signed weight domain is the symmetric range [-(2^(N-1)-1), 2^(N-1)-1],
matching what the quantizers emit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DigitMapError(Exception):
    pass


DESIGNS = ("Design1", "Design2", "Design3")


def _check_nk(N: int, k: int) -> None:
    if not 2 <= N <= 8:
        raise DigitMapError(f"weight bits N must be in [2, 8], got {N}")
    if not 1 <= k <= N:
        raise DigitMapError(f"cell bits k must be in [1, N], got {k}")


@dataclass(frozen=True)
class PlaneLayout:
    """Static description of one design's column layout for (N, k)."""

    design: str
    N: int
    k: int
    sigs: np.ndarray          # (P,) signed significance per plane
    dmax: np.ndarray          # (P,) max digit value a plane can hold
    n_planes: int             # P = len(sigs)
    cols_per_weight: int      # physical columns per weight in ONE subarray
    n_subarrays: int          # 1, or 2 for the Design2 pair
    dummy_digit: int | None   # Design3 only
    dummy_sig: float | None   # Design3 only


def plane_layout(design: str, N: int, k: int) -> PlaneLayout:
    _check_nk(N, k)
    B = 2 ** k
    if design == "Design1":
        nd = -(-(N - 1) // k)                    # ceil((N-1)/k)
        sigs = [float(B ** j) for j in range(nd)]
        dmax = [2 ** min(k, N - 1 - j * k) - 1 for j in range(nd)]
        sigs.append(-float(2 ** (N - 1)))        # sign plane
        dmax.append(1)
        return PlaneLayout(design, N, k, np.array(sigs), np.array(dmax, dtype=np.int64),
                           len(sigs), len(sigs), 1, None, None)
    if design == "Design2":
        nm = -(-N // k)                           # ceil(N/k)
        sigs = [float(B ** j) for j in range(nm)]
        sigs += [-float(B ** j) for j in range(nm)]
        dm = [2 ** min(k, N - j * k) - 1 for j in range(nm)]
        dmax = dm + dm
        return PlaneLayout(design, N, k, np.array(sigs), np.array(dmax, dtype=np.int64),
                           2 * nm, nm, 2, None, None)
    if design == "Design3":
        nm = -(-N // k)
        sigs = [float(B ** j) for j in range(nm)]
        dmax = [2 ** min(k, N - j * k) - 1 for j in range(nm)]
        q, r = divmod(N - 1, k)
        return PlaneLayout(design, N, k, np.array(sigs), np.array(dmax, dtype=np.int64),
                           nm, nm, 1, 2 ** r, -float(B ** q))
    raise DigitMapError(f"unknown design {design!r}")


@dataclass(frozen=True)
class DigitPlanes:
    layout: PlaneLayout
    planes: np.ndarray        # (P, *w_shape) uint8 digits, aligned with layout.sigs


def _base_digits(u: np.ndarray, n_planes: int, k: int) -> np.ndarray:
    """Unsigned base-2^k digits, least significant plane first."""
    out = np.empty((n_planes,) + u.shape, dtype=np.uint8)
    mask = (1 << k) - 1
    for j in range(n_planes):
        out[j] = (u >> (j * k)) & mask
    return out


def decompose_weights(W: np.ndarray, design: str, N: int, k: int) -> DigitPlanes:
    lay = plane_layout(design, N, k)
    W = np.asarray(W)
    if not np.issubdtype(W.dtype, np.integer):
        raise DigitMapError("weights must be integers (quantize first)")
    lim = 2 ** (N - 1) - 1
    if W.min(initial=0) < -lim or W.max(initial=0) > lim:
        raise DigitMapError(f"weight out of signed {N}-bit range +-{lim}")
    W = W.astype(np.int64)

    if design == "Design1":
        sign = (W < 0).astype(np.int64)
        low = W + sign * (1 << (N - 1))          # value of the low N-1 bits
        nd = lay.n_planes - 1
        planes = np.concatenate([_base_digits(low, nd, k),
                                 sign[None].astype(np.uint8)], axis=0)
    elif design == "Design2":
        nm = lay.n_planes // 2
        pos = np.where(W > 0, W, 0)
        neg = np.where(W < 0, -W, 0)
        planes = np.concatenate([_base_digits(pos, nm, k),
                                 _base_digits(neg, nm, k)], axis=0)
    else:  # Design3
        shifted = W + (1 << (N - 1))
        planes = _base_digits(shifted, lay.n_planes, k)
    return DigitPlanes(layout=lay, planes=planes)


def reconstruct_weights(dp: DigitPlanes) -> np.ndarray:
    """Inverse of decompose_weights; the assemble-of-decompose identity."""
    lay = dp.layout
    acc = np.tensordot(lay.sigs, dp.planes.astype(np.float64), axes=(0, 0))
    if lay.dummy_sig is not None:
        acc = acc + lay.dummy_sig * lay.dummy_digit
    out = np.rint(acc).astype(np.int64)
    return out


def assemble_partials(partials: np.ndarray, sigs: np.ndarray) -> np.ndarray:
    """Weighted accumulation of per-plane (or per-cycle) partial sums."""
    partials = np.asarray(partials, dtype=np.float64)
    sigs = np.asarray(sigs, dtype=np.float64)
    if partials.shape[0] != sigs.shape[0]:
        raise DigitMapError("partials/significances length mismatch")
    return np.tensordot(sigs, partials, axes=(0, 0))


@dataclass(frozen=True)
class BitPlanes:
    bits: np.ndarray          # (V, M, R) uint8, one slice per input cycle
    cycle_sigs: np.ndarray    # (M,) signed cycle weights, LSB first
    mode: str


def decompose_inputs(X: np.ndarray, M: int, mode: str = "unsigned") -> BitPlanes:
    """Bit-serial expansion of integer input vectors X (V, R)."""
    if not 1 <= M <= 8:
        raise DigitMapError(f"input bits M must be in [1, 8], got {M}")
    X = np.asarray(X)
    if not np.issubdtype(X.dtype, np.integer):
        raise DigitMapError("inputs must be integers (quantize first)")
    X = X.astype(np.int64)
    if mode == "unsigned":
        if X.min(initial=0) < 0 or X.max(initial=0) > 2 ** M - 1:
            raise DigitMapError(f"input out of unsigned {M}-bit range")
        u = X
        sigs = np.array([float(1 << t) for t in range(M)])
    elif mode == "twos-complement":
        lim = 1 << (M - 1)
        if X.min(initial=0) < -lim or X.max(initial=0) > lim - 1:
            raise DigitMapError(f"input out of signed {M}-bit range")
        u = X & ((1 << M) - 1)
        sigs = np.array([float(1 << t) for t in range(M - 1)] + [-float(1 << (M - 1))])
    else:
        raise DigitMapError(f"unknown input sign mode {mode!r}")
    V, R = X.shape
    bits = np.empty((V, M, R), dtype=np.uint8)
    for t in range(M):
        bits[:, t, :] = (u >> t) & 1
    return BitPlanes(bits=np.ascontiguousarray(bits), cycle_sigs=sigs, mode=mode)
