import numpy as np
import pytest

from xbarsim.config import config_from_dict


def make_cfg(**sections):
    """Shorthand around config_from_dict for tests."""
    return config_from_dict(sections)


def make_device(**over):
    d = {"name": "testdev", "kind": "envm", "r_on": 6000.0,
         "on_off_ratio": "inf", "cell_bits_max": 8, "sigma_cell": 0.0,
         "write_energy": 1.0e-13, "write_latency": 1.0e-8}
    d.update(over)
    from xbarsim.config import _device_from_value
    return _device_from_value(d, "tests.device")


# A 13-bit unit-step staircase wide enough for every test workload: centers
# sit on the integers of [-4096, 4095], so integer column sums convert
# losslessly and the ideal pipeline is exact end to end.
LOSSLESS_ADC = {"kind": "linear", "precision": 13, "lo": -4096.0, "hi": 4095.0}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
