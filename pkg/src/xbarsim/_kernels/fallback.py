"""Pure-numpy implementation of the bit-serial subarray kernel.

Used when the compiled extension is unavailable (or when forced via
XBARSIM_KERNEL=python).  Must stay semantically identical to _core.pyx; the
backend-equivalence tests compare the two bit-for-bit on integer-exact
workloads.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def run_slot(bits, cells, corr, refs_flat, refs_off, centers_flat, centers_off,
             class_of, col_sig, col_out, cycle_sigs, out, dummy_out, alpha):
    """One subarray slot, all vectors, all input cycles.

    bits      (V, M, R) uint8 0/1
    cells     (R, C) float64, C-contiguous
    corr      subtract a*corr from every column sum (a = active rows)
    refs/centers  flattened per-class ADC staircases, class c occupying
                  refs_flat[refs_off[c]:refs_off[c+1]] etc.
    class_of  (C,) int32 ADC class per physical column
    col_sig   (C,) float64 significance applied to converted values
    col_out   (C,) int32 output slot per column, -1 routes to dummy_out
    cycle_sigs(M,) float64 input cycle weights
    out       (V, W) float64, accumulated in place
    dummy_out (V,) float64, accumulated in place
    alpha     (V, M) float64, written: active-row fraction per cycle
    """
    V, M, R = bits.shape
    C = cells.shape[1]
    ncls = refs_off.shape[0] - 1
    for t in range(M):
        B = bits[:, t, :].astype(np.float64)        # (V, R)
        a = B.sum(axis=1)                           # (V,)
        S = B @ cells                               # (V, C)
        if corr != 0.0:
            S = S - a[:, None] * corr
        Y = np.empty_like(S)
        for c in range(ncls):
            sel = class_of == c
            if not np.any(sel):
                continue
            refs = refs_flat[refs_off[c]:refs_off[c + 1]]
            cen = centers_flat[centers_off[c]:centers_off[c + 1]]
            Y[:, sel] = cen[np.searchsorted(refs, S[:, sel], side="right")]
        contrib = cycle_sigs[t] * (Y * col_sig)     # (V, C)
        for c in range(C):
            o = col_out[c]
            if o >= 0:
                out[:, o] += contrib[:, c]
            else:
                dummy_out += contrib[:, c]
        alpha[:, t] = a / R
