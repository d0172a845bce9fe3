"""Pre-circuit simulator for mixed-signal compute-in-memory DL accelerators.

Models quantized networks mapped onto resistive crossbar subarrays with
bit-serial inputs, multi-bit cells, and per-column ADCs, and estimates the
resulting inference fidelity alongside area, latency, and energy.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
