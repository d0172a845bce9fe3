import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbarsim import quant


def test_round_half_away_ties():
    x = np.array([2.5, -2.5, 0.5, -0.5, 1.4999, -1.4999, 0.0])
    expect = np.array([3.0, -3.0, 1.0, -1.0, 1.0, -1.0, 0.0])
    assert np.array_equal(quant.round_half_away(x), expect)


def test_uniform_symmetric_scale():
    p = quant.calibrate(np.array([-4.0, 2.0]), "uniform-symmetric", 4)
    # max|t| / (2^3 - 1)
    assert p.scale == pytest.approx(4.0 / 7.0)
    assert (p.qmin, p.qmax) == (-7, 7)


def test_uniform_symmetric_unsigned_scale():
    p = quant.calibrate(np.array([0.5, 3.0]), "uniform-symmetric", 4, signed=False)
    assert p.scale == pytest.approx(3.0 / 15.0)
    assert (p.qmin, p.qmax) == (0, 15)


def test_dfp_worked_example():
    # t=[0.9], 4 bits: largest FL with 0.9 <= 2^3 * 2^-FL is FL=3 -> scale 1/8.
    p = quant.calibrate(np.array([0.9]), "dynamic-fixed-point", 4)
    assert p.scale == 0.125


@pytest.mark.parametrize("max_abs,bits,fl", [
    (0.9, 4, 3),
    (1.0, 4, 3),     # boundary: 1.0 <= 2^3 * 2^-3 exactly
    (8.0, 4, 0),     # 8 <= 2^3 * 2^0 exactly
    (8.0001, 4, -1),
    (0.0625, 4, 7),
])
def test_dfp_fraction_length_boundaries(max_abs, bits, fl):
    assert quant._dfp_fraction_length(max_abs, bits) == fl


def test_dfp_scale_is_power_of_two():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = rng.normal(0, 10.0 ** int(rng.integers(-3, 4)), size=17)
        p = quant.calibrate(t, "dynamic-fixed-point", 8)
        frac, _ = math.frexp(p.scale)
        assert frac == 0.5  # exact power of two


def test_degenerate_tensors():
    assert quant.calibrate(np.zeros(5), "uniform-symmetric", 8).scale == 1.0
    assert quant.calibrate(np.array([]), "uniform-symmetric", 8).scale == 1.0


def test_bad_args():
    with pytest.raises(quant.QuantError):
        quant.calibrate(np.ones(3), "uniform-symmetric", 1)
    with pytest.raises(quant.QuantError):
        quant.calibrate(np.ones(3), "nope", 8)


def test_quantize_clamps_to_symmetric_domain():
    p = quant.QuantParams("uniform-symmetric", 4, 1.0)
    q = quant.quantize(np.array([-100.0, 100.0, -7.4, 7.4]), p)
    assert q.min() == -7 and q.max() == 7  # -8 never emitted


def test_unsigned_clips_negatives():
    p = quant.QuantParams("uniform-symmetric", 4, 1.0, signed=False)
    q = quant.quantize(np.array([-3.0, 0.0, 15.0, 99.0]), p)
    assert np.array_equal(q, [0, 0, 15, 15])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e4, 1e4, allow_nan=False, width=32), min_size=1, max_size=32),
    st.sampled_from(["uniform-symmetric", "dynamic-fixed-point"]),
    st.integers(2, 8),
)
def test_roundtrip_error_bound(vals, scheme, bits):
    """Within the representable range, |x - deq(quant(x))| <= scale/2."""
    t = np.array(vals, dtype=np.float64)
    p = quant.calibrate(t, scheme, bits)
    q = quant.quantize(t, p)
    b = quant.dequantize(q, p)
    inside = np.abs(t) <= p.qmax * p.scale
    assert np.all(np.abs((t - b))[inside] <= p.scale / 2 + 1e-12 * np.abs(t[inside]))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.booleans())
def test_integer_grid_fixed_point(bits, signed):
    """Integers already on the grid survive quantize-dequantize unchanged."""
    lo = 0 if not signed else -(2 ** (bits - 1) - 1)
    hi = 2 ** bits - 1 if not signed else 2 ** (bits - 1) - 1
    t = np.arange(lo, hi + 1, dtype=np.float64)
    p = quant.QuantParams("uniform-symmetric", bits, 1.0, signed=signed)
    assert np.array_equal(quant.dequantize(quant.quantize(t, p), p), t)


def test_params_dict_roundtrip():
    p = quant.calibrate(np.array([1.5]), "dynamic-fixed-point", 6)
    assert quant.QuantParams.from_dict(p.to_dict()) == p
