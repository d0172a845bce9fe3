import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbarsim import digitmap


def oracle_reassemble(planes, design, N, k):
    """Independent digit reassembly, written from the layout definitions."""
    B = 2 ** k
    p = planes.astype(np.int64)
    if design == "Design1":
        nd = p.shape[0] - 1
        low = sum(p[j] * B ** j for j in range(nd))
        return low - p[-1] * 2 ** (N - 1)
    if design == "Design2":
        nm = p.shape[0] // 2
        pos = sum(p[j] * B ** j for j in range(nm))
        neg = sum(p[nm + j] * B ** j for j in range(nm))
        return pos - neg
    # Design3: offset binary, dummy column removes the constant shift
    val = sum(p[j] * B ** j for j in range(p.shape[0]))
    return val - 2 ** (N - 1)


@pytest.mark.parametrize("design", digitmap.DESIGNS)
@pytest.mark.parametrize("N,k", [(2, 1), (4, 2), (5, 2), (8, 4), (8, 1), (3, 3)])
def test_exhaustive_roundtrip(design, N, k):
    lim = 2 ** (N - 1) - 1
    W = np.arange(-lim, lim + 1).reshape(1, -1)
    dp = digitmap.decompose_weights(W, design, N, k)
    assert np.array_equal(oracle_reassemble(dp.planes, design, N, k), W)
    assert np.array_equal(digitmap.reconstruct_weights(dp), W)


def test_digits_fit_cell_range():
    for design in digitmap.DESIGNS:
        for N, k in [(8, 2), (8, 4), (6, 1)]:
            lim = 2 ** (N - 1) - 1
            W = np.arange(-lim, lim + 1).reshape(1, -1)
            dp = digitmap.decompose_weights(W, design, N, k)
            assert dp.planes.min() >= 0
            assert dp.planes.max() <= 2 ** k - 1
            # each plane also respects its declared dmax
            for j in range(dp.layout.n_planes):
                assert dp.planes[j].max() <= dp.layout.dmax[j]


def test_design1_layout():
    lay = digitmap.plane_layout("Design1", 8, 2)
    assert lay.n_planes == 5               # ceil(7/2)=4 digit planes + sign
    assert list(lay.sigs) == [1.0, 4.0, 16.0, 64.0, -128.0]
    assert list(lay.dmax) == [3, 3, 3, 1, 1]
    assert lay.cols_per_weight == 5 and lay.n_subarrays == 1


def test_design2_layout():
    lay = digitmap.plane_layout("Design2", 8, 4)
    assert lay.n_planes == 4               # ceil(8/4)=2 per polarity
    assert list(lay.sigs) == [1.0, 16.0, -1.0, -16.0]
    assert lay.cols_per_weight == 2 and lay.n_subarrays == 2


def test_design3_layout():
    lay = digitmap.plane_layout("Design3", 8, 2)
    assert lay.n_planes == 4
    assert lay.dummy_digit == 2 ** ((8 - 1) % 2)   # = 2
    assert lay.dummy_sig == -float(4 ** ((8 - 1) // 2))  # = -(2^k)^3
    # dummy digit at its plane equals the 2^(N-1) shift
    q = (8 - 1) // 2
    assert lay.dummy_digit * 4 ** q == 2 ** 7


def test_range_check():
    with pytest.raises(digitmap.DigitMapError):
        digitmap.decompose_weights(np.array([[128]]), "Design1", 8, 2)
    with pytest.raises(digitmap.DigitMapError):
        digitmap.decompose_weights(np.array([[-128]]), "Design3", 8, 2)
    with pytest.raises(digitmap.DigitMapError):
        digitmap.decompose_weights(np.array([[0.5]]), "Design1", 8, 2)


def test_bad_nk():
    with pytest.raises(digitmap.DigitMapError):
        digitmap.plane_layout("Design1", 9, 2)
    with pytest.raises(digitmap.DigitMapError):
        digitmap.plane_layout("Design1", 4, 5)
    with pytest.raises(digitmap.DigitMapError):
        digitmap.plane_layout("Design9", 4, 2)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 8), st.sampled_from([1, 2, 3, 4]),
       st.sampled_from(digitmap.DESIGNS), st.integers(0, 2 ** 31 - 1))
def test_roundtrip_property(N, k, design, seed):
    k = min(k, N)
    lim = 2 ** (N - 1) - 1
    W = np.random.default_rng(seed).integers(-lim, lim + 1, size=(7, 5))
    dp = digitmap.decompose_weights(W, design, N, k)
    assert np.array_equal(digitmap.reconstruct_weights(dp), W)


def test_input_bits_unsigned():
    X = np.array([[0, 1, 5, 15]])
    bp = digitmap.decompose_inputs(X, 4, "unsigned")
    assert bp.bits.shape == (1, 4, 4)
    assert list(bp.cycle_sigs) == [1.0, 2.0, 4.0, 8.0]
    vals = sum(bp.bits[:, t, :].astype(np.int64) * (1 << t) for t in range(4))
    assert np.array_equal(vals, X)


def test_input_bits_twos_complement():
    X = np.array([[-8, -1, 0, 7]])
    bp = digitmap.decompose_inputs(X, 4, "twos-complement")
    assert list(bp.cycle_sigs) == [1.0, 2.0, 4.0, -8.0]
    vals = np.tensordot(bp.cycle_sigs, bp.bits.transpose(1, 0, 2).astype(np.float64),
                        axes=(0, 0))
    assert np.array_equal(vals, X)


def test_input_range_errors():
    with pytest.raises(digitmap.DigitMapError):
        digitmap.decompose_inputs(np.array([[16]]), 4, "unsigned")
    with pytest.raises(digitmap.DigitMapError):
        digitmap.decompose_inputs(np.array([[-9]]), 4, "twos-complement")
    with pytest.raises(digitmap.DigitMapError):
        digitmap.decompose_inputs(np.array([[1]]), 4, "sign-magnitude")


def test_assemble_partials_matches_tensordot(rng):
    sigs = np.array([1.0, 4.0, -8.0])
    parts = rng.normal(size=(3, 6, 2))
    out = digitmap.assemble_partials(parts, sigs)
    assert np.allclose(out, np.tensordot(sigs, parts, axes=(0, 0)))
    with pytest.raises(digitmap.DigitMapError):
        digitmap.assemble_partials(parts[:2], sigs)
