"""Configuration schema, JSON loading, and validation.

A simulation run is described by a single JSON document.  Every knob has a
documented default (see docs/config.md), so the minimal useful config is a
handful of keys.  Loading is strict: unknown keys and type mismatches are
errors, not warnings, and every error message carries the offending key path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib.resources
import json
import math
from dataclasses import dataclass, field
from typing import Any


class ConfigError(Exception):
    """Base class for configuration problems (also covers parse errors)."""


class SchemaError(ConfigError):
    """Unknown key or wrong type at some key path."""


class RangeError(ConfigError):
    """Value of the right type but outside its allowed range."""


# ---------------------------------------------------------------------------
# Device presets
# ---------------------------------------------------------------------------

# Named after cell technology and on/off ratio.  r_on in ohms.
DEVICE_PRESETS: dict[str, dict[str, Any]] = {
    "rram_150": {
        "name": "rram_150", "kind": "envm", "r_on": 6000.0, "on_off_ratio": 150.0,
        "cell_bits_max": 4, "sigma_cell": 0.0,
        "write_energy": 1.0e-13, "write_latency": 1.0e-8,
    },
    "rram_17": {
        "name": "rram_17", "kind": "envm", "r_on": 6000.0, "on_off_ratio": 17.0,
        "cell_bits_max": 2, "sigma_cell": 0.0,
        "write_energy": 1.0e-13, "write_latency": 1.0e-8,
    },
    "rram_10": {
        "name": "rram_10", "kind": "envm", "r_on": 100000.0, "on_off_ratio": 10.0,
        "cell_bits_max": 2, "sigma_cell": 0.0,
        "write_energy": 1.0e-13, "write_latency": 1.0e-8,
    },
    "fefet_100": {
        "name": "fefet_100", "kind": "envm", "r_on": 240000.0, "on_off_ratio": 100.0,
        "cell_bits_max": 4, "sigma_cell": 0.0,
        "write_energy": 5.0e-14, "write_latency": 2.0e-8,
    },
    "pcm_12p5": {
        "name": "pcm_12p5", "kind": "envm", "r_on": 40000.0, "on_off_ratio": 12.5,
        "cell_bits_max": 2, "sigma_cell": 0.0,
        "write_energy": 2.0e-13, "write_latency": 5.0e-8,
    },
    # Ideal programmable memory: binary cells, no conductance offset.  Used
    # for dynamic-matmul tiles and as the "perfect device" in sweeps.
    "sram": {
        "name": "sram", "kind": "sram", "r_on": 3000.0, "on_off_ratio": math.inf,
        "cell_bits_max": 1, "sigma_cell": 0.0,
        "write_energy": 2.0e-15, "write_latency": 1.0e-9,
    },
    "ideal": {
        "name": "ideal", "kind": "envm", "r_on": 6000.0, "on_off_ratio": math.inf,
        "cell_bits_max": 8, "sigma_cell": 0.0,
        "write_energy": 1.0e-13, "write_latency": 1.0e-8,
    },
}


@dataclass(frozen=True)
class DeviceModel:
    """Memory cell electrical model.

    ``on_off_ratio`` is Ron-referred: a cell holding digit d contributes
    conductance d + (2^k - 1)/(ratio - 1) cell units plus programming noise.
    math.inf means no parasitic offset at all.
    """

    name: str
    kind: str                 # "envm" | "sram"
    r_on: float               # ohms, lowest programmable resistance
    on_off_ratio: float       # Roff / Ron, may be math.inf
    cell_bits_max: int        # max digit bits one cell can hold
    sigma_cell: float         # programming noise std, in cell-conductance units
    write_energy: float       # J per cell write
    write_latency: float      # s per row write

    def offset(self, k: int) -> float:
        """Parasitic conductance floor for k-bit cells (0 when ratio is inf)."""
        if math.isinf(self.on_off_ratio):
            return 0.0
        return (2.0 ** k - 1.0) / (self.on_off_ratio - 1.0)


@dataclass(frozen=True)
class QuantConfig:
    scheme: str = "uniform-symmetric"   # or "dynamic-fixed-point"
    weight_bits: int = 8                # N
    input_bits: int = 8                 # M


@dataclass(frozen=True)
class MappingConfig:
    design: str = "Design1"             # Design1 | Design2 | Design3
    cell_bits: int = 2                  # k, digit bits per cell
    input_sign_mode: str = "unsigned"   # "unsigned" | "twos-complement"
    offset_cancellation: str = "dummy-column"  # "dummy-column" | "none"


@dataclass(frozen=True)
class ADCConfig:
    kind: str = "linear"                # linear | calibrated | custom
    precision: int = 8                  # p, output bits
    lo: float | None = None             # linear full-scale override (all classes)
    hi: float | None = None
    spec_path: str | None = None        # custom: JSON with refs/centers
    calibration_vectors: int = 64       # calibrated: sample budget per array


@dataclass(frozen=True)
class ArchConfig:
    subarray_rows: int = 128
    subarray_cols: int = 128
    subarrays_per_pe: int = 4
    pes_per_tile: int = 4
    adc_share: int = 8                  # columns sharing one ADC
    smm_device: str | dict | None = None   # defaults to top-level device
    dmm_device: str | dict | None = "sram"


@dataclass(frozen=True)
class CostParams:
    """Analytical area/energy/latency coefficients (SI units).

    Defaults come from the versioned table in xbarsim/data; any field can be
    overridden from the config "cost" section.  These are desk-calculator
    coefficients, not circuit extractions; their value is in being consistent
    across candidate designs.
    """

    version: str = "v1"
    # area (m^2)
    cell_area_m2: float = 1.0e-13
    wl_driver_area_m2: float = 2.0e-12       # per row
    adc_area_base_m2: float = 3.0e-12        # per converter, plus per-bit term
    adc_area_per_bit_m2: float = 5.0e-11
    shiftadd_area_m2: float = 2.0e-11        # per ADC group
    buffer_area_per_bit_m2: float = 2.0e-14
    ic_area_overhead: float = 0.1            # fraction of tile compute area
    # energy (J)
    e_cell_j: float = 2.0e-15                # per active row-column, per unit G
    e_wl_j: float = 1.0e-15                  # per driven row per cycle
    adc_energy_base_j: float = 2.0e-15       # per conversion: base*2^p + per_bit*p
    adc_energy_per_bit_j: float = 1.0e-14
    shiftadd_energy_per_col_j: float = 5.0e-16
    buffer_energy_per_bit_j: float = 5.0e-14
    ic_energy_per_bit_mm_j: float = 2.0e-13
    # latency (s)
    t_wl_s: float = 1.0e-9                   # wordline assert per cycle
    t_comp_s: float = 5.0e-10                # per ADC output bit per conversion
    t_sa_s: float = 1.0e-9                   # shift-add per cycle
    buffer_time_per_bit_s: float = 1.0e-12
    ic_time_per_bit_mm_s: float = 5.0e-12
    # scheduling
    dmm_write_overlap: bool = True           # hide V-write behind score compute


@dataclass(frozen=True)
class SimulationConfig:
    quant: QuantConfig = field(default_factory=QuantConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    device: DeviceModel = field(default_factory=lambda: _device_from_value("rram_150", "device"))
    adc: ADCConfig = field(default_factory=ADCConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    cost: CostParams = field(default_factory=CostParams)
    seed: int = 0
    mode: str = "average"               # "trace" | "average"

    def smm_device(self) -> DeviceModel:
        if self.arch.smm_device is None:
            return self.device
        return _device_from_value(self.arch.smm_device, "arch.smm_device")

    def dmm_device(self) -> DeviceModel:
        if self.arch.dmm_device is None:
            return self.device
        return _device_from_value(self.arch.dmm_device, "arch.dmm_device")


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

_SENTINEL = object()


def _expect(d: dict, key: str, types, path: str, default=_SENTINEL):
    if key not in d:
        if default is _SENTINEL:
            raise SchemaError(f"{path}.{key}: required key missing")
        return default
    v = d[key]
    if v is None and default is not _SENTINEL:
        return default          # explicit null on an optional key
    if types is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, types) or isinstance(v, bool) and types is not bool:
        tn = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise SchemaError(f"{path}.{key}: expected {tn}, got {type(v).__name__}")
    return v


def _check_unknown(d: dict, allowed: set[str], path: str) -> None:
    for k in d:
        if k not in allowed:
            raise SchemaError(f"{path}.{k}: unknown key")


def _device_from_value(value, path: str) -> DeviceModel:
    if isinstance(value, DeviceModel):
        return value
    if isinstance(value, str):
        if value not in DEVICE_PRESETS:
            raise SchemaError(
                f"{path}: unknown device preset {value!r} "
                f"(known: {', '.join(sorted(DEVICE_PRESETS))})"
            )
        value = DEVICE_PRESETS[value]
    if not isinstance(value, dict):
        raise SchemaError(f"{path}: expected preset name or object")
    allowed = {"name", "kind", "r_on", "on_off_ratio", "cell_bits_max",
               "sigma_cell", "write_energy", "write_latency"}
    _check_unknown(value, allowed, path)
    ratio = value.get("on_off_ratio", _SENTINEL)
    if ratio is _SENTINEL:
        raise SchemaError(f"{path}.on_off_ratio: required key missing")
    if isinstance(ratio, str):
        if ratio != "inf":
            raise SchemaError(f"{path}.on_off_ratio: string value must be \"inf\"")
        ratio = math.inf
    elif isinstance(ratio, (int, float)) and not isinstance(ratio, bool):
        ratio = float(ratio)
    else:
        raise SchemaError(f"{path}.on_off_ratio: expected number or \"inf\"")
    dev = DeviceModel(
        name=_expect(value, "name", str, path, default="custom"),
        kind=_expect(value, "kind", str, path, default="envm"),
        r_on=_expect(value, "r_on", float, path),
        on_off_ratio=ratio,
        cell_bits_max=_expect(value, "cell_bits_max", int, path, default=4),
        sigma_cell=_expect(value, "sigma_cell", float, path, default=0.0),
        write_energy=_expect(value, "write_energy", float, path, default=1.0e-13),
        write_latency=_expect(value, "write_latency", float, path, default=1.0e-8),
    )
    if dev.kind not in ("envm", "sram"):
        raise RangeError(f"{path}.kind: must be 'envm' or 'sram'")
    if dev.r_on <= 0:
        raise RangeError(f"{path}.r_on: must be > 0")
    if not (dev.on_off_ratio > 1.0):
        raise RangeError(f"{path}.on_off_ratio: must be > 1 (or \"inf\")")
    if dev.cell_bits_max < 1:
        raise RangeError(f"{path}.cell_bits_max: must be >= 1")
    if dev.sigma_cell < 0:
        raise RangeError(f"{path}.sigma_cell: must be >= 0")
    return dev


def _load_default_cost_table() -> dict:
    text = importlib.resources.files("xbarsim.data").joinpath(
        "cost_defaults_v1.json").read_text()
    return json.loads(text)


def _cost_from_dict(d: dict, path: str) -> CostParams:
    table = _load_default_cost_table()
    base = dict(table["params"])
    base["version"] = table["version"]
    fields = {f.name for f in dataclasses.fields(CostParams)}
    _check_unknown(d, fields, path)
    for k, v in d.items():
        if k == "version":
            base[k] = _expect(d, k, str, path)
        elif k == "dmm_write_overlap":
            base[k] = _expect(d, k, bool, path)
        else:
            base[k] = _expect(d, k, float, path)
    for k, v in base.items():
        if k in ("version", "dmm_write_overlap"):
            continue
        if v < 0:
            raise RangeError(f"{path}.{k}: must be >= 0")
    return CostParams(**base)


def config_from_dict(raw: dict, path: str = "config") -> SimulationConfig:
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: top level must be an object")
    allowed = {"quant", "mapping", "device", "adc", "arch", "cost", "seed", "mode"}
    _check_unknown(raw, allowed, path)

    q = raw.get("quant", {})
    _check_unknown(q, {"scheme", "weight_bits", "input_bits"}, f"{path}.quant")
    quant = QuantConfig(
        scheme=_expect(q, "scheme", str, f"{path}.quant", default="uniform-symmetric"),
        weight_bits=_expect(q, "weight_bits", int, f"{path}.quant", default=8),
        input_bits=_expect(q, "input_bits", int, f"{path}.quant", default=8),
    )

    m = raw.get("mapping", {})
    _check_unknown(m, {"design", "cell_bits", "input_sign_mode", "offset_cancellation"},
                   f"{path}.mapping")
    mapping = MappingConfig(
        design=_expect(m, "design", str, f"{path}.mapping", default="Design1"),
        cell_bits=_expect(m, "cell_bits", int, f"{path}.mapping", default=2),
        input_sign_mode=_expect(m, "input_sign_mode", str, f"{path}.mapping",
                                default="unsigned"),
        offset_cancellation=_expect(m, "offset_cancellation", str, f"{path}.mapping",
                                    default="dummy-column"),
    )

    device = _device_from_value(raw.get("device", "rram_150"), f"{path}.device")

    a = raw.get("adc", {})
    _check_unknown(a, {"kind", "precision", "lo", "hi", "spec_path",
                       "calibration_vectors"}, f"{path}.adc")
    adc = ADCConfig(
        kind=_expect(a, "kind", str, f"{path}.adc", default="linear"),
        precision=_expect(a, "precision", int, f"{path}.adc", default=8),
        lo=_expect(a, "lo", (int, float), f"{path}.adc", default=None),
        hi=_expect(a, "hi", (int, float), f"{path}.adc", default=None),
        spec_path=_expect(a, "spec_path", str, f"{path}.adc", default=None),
        calibration_vectors=_expect(a, "calibration_vectors", int, f"{path}.adc",
                                    default=64),
    )
    if adc.lo is not None:
        adc = dataclasses.replace(adc, lo=float(adc.lo))
    if adc.hi is not None:
        adc = dataclasses.replace(adc, hi=float(adc.hi))

    ar = raw.get("arch", {})
    _check_unknown(ar, {"subarray_rows", "subarray_cols", "subarrays_per_pe",
                        "pes_per_tile", "adc_share", "smm_device", "dmm_device"},
                   f"{path}.arch")
    arch = ArchConfig(
        subarray_rows=_expect(ar, "subarray_rows", int, f"{path}.arch", default=128),
        subarray_cols=_expect(ar, "subarray_cols", int, f"{path}.arch", default=128),
        subarrays_per_pe=_expect(ar, "subarrays_per_pe", int, f"{path}.arch", default=4),
        pes_per_tile=_expect(ar, "pes_per_tile", int, f"{path}.arch", default=4),
        adc_share=_expect(ar, "adc_share", int, f"{path}.arch", default=8),
        smm_device=ar.get("smm_device", None),
        dmm_device=ar.get("dmm_device", "sram"),
    )
    # Resolve device sections eagerly so schema errors surface at load time.
    if arch.smm_device is not None:
        _device_from_value(arch.smm_device, f"{path}.arch.smm_device")
    if arch.dmm_device is not None:
        _device_from_value(arch.dmm_device, f"{path}.arch.dmm_device")

    cost = _cost_from_dict(raw.get("cost", {}), f"{path}.cost")

    seed = _expect(raw, "seed", int, path, default=0)
    mode = _expect(raw, "mode", str, path, default="average")

    cfg = SimulationConfig(quant=quant, mapping=mapping, device=device, adc=adc,
                           arch=arch, cost=cost, seed=seed, mode=mode)
    report = validate(cfg)
    if not report.ok:
        raise RangeError("; ".join(report.errors))
    return cfg


def load_config(path: str) -> SimulationConfig:
    try:
        with open(path, "rb") as fp:
            raw = json.load(fp)
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: parse error in {path}: {e}") from e
    return config_from_dict(raw)


def validate(cfg: SimulationConfig) -> ValidationReport:
    """Cross-field checks.  Errors block a run; warnings do not."""
    rep = ValidationReport()
    err = rep.errors.append
    q, m, a, ar = cfg.quant, cfg.mapping, cfg.adc, cfg.arch

    if q.scheme not in ("uniform-symmetric", "dynamic-fixed-point"):
        err(f"quant.scheme: unknown scheme {q.scheme!r}")
    if not 2 <= q.weight_bits <= 8:
        err("quant.weight_bits: must be in [2, 8]")
    if not 2 <= q.input_bits <= 8:
        err("quant.input_bits: must be in [2, 8]")

    if m.design not in ("Design1", "Design2", "Design3"):
        err(f"mapping.design: unknown design {m.design!r}")
    if m.cell_bits < 1:
        err("mapping.cell_bits: must be >= 1")
    elif 2 <= q.weight_bits <= 8 and m.cell_bits > q.weight_bits:
        err("mapping.cell_bits: must be <= quant.weight_bits")
    if m.input_sign_mode not in ("unsigned", "twos-complement"):
        err(f"mapping.input_sign_mode: unknown mode {m.input_sign_mode!r}")
    if m.offset_cancellation not in ("dummy-column", "none"):
        err(f"mapping.offset_cancellation: unknown value {m.offset_cancellation!r}")

    if m.cell_bits > cfg.device.cell_bits_max:
        err(f"mapping.cell_bits: {m.cell_bits} exceeds device "
            f"cell_bits_max={cfg.device.cell_bits_max}")

    if a.kind not in ("linear", "calibrated", "custom"):
        err(f"adc.kind: unknown kind {a.kind!r}")
    if a.precision < 1:
        err("adc.precision: must be >= 1")
    if a.kind == "custom" and not a.spec_path:
        err("adc.spec_path: required for custom ADC")
    if (a.lo is None) != (a.hi is None):
        err("adc.lo/adc.hi: must be set together")
    if a.lo is not None and a.hi is not None and not a.lo < a.hi:
        err("adc.lo: must be < adc.hi")
    if a.calibration_vectors < 1:
        err("adc.calibration_vectors: must be >= 1")

    for key, val in (("subarray_rows", ar.subarray_rows),
                     ("subarray_cols", ar.subarray_cols),
                     ("subarrays_per_pe", ar.subarrays_per_pe),
                     ("pes_per_tile", ar.pes_per_tile)):
        if val < 1:
            err(f"arch.{key}: must be >= 1")
    if ar.adc_share < 1:
        err("arch.adc_share: must be >= 1")
    elif ar.subarray_cols >= 1 and ar.subarray_cols % ar.adc_share != 0:
        err("arch.adc_share: must divide arch.subarray_cols")

    if cfg.mode not in ("trace", "average"):
        err(f"mode: unknown mode {cfg.mode!r}")
    if cfg.seed < 0:
        err("seed: must be >= 0")

    if cfg.device.sigma_cell > 0.25:
        rep.warnings.append(
            f"device.sigma_cell={cfg.device.sigma_cell} is large; expect heavy "
            "fidelity loss")
    if m.design == "Design2" and m.offset_cancellation == "dummy-column":
        rep.warnings.append(
            "mapping.offset_cancellation: Design2 cancels offsets differentially; "
            "dummy-column setting has no effect")
    return rep


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _device_to_dict(dev: DeviceModel) -> dict:
    d = dataclasses.asdict(dev)
    if math.isinf(d["on_off_ratio"]):
        d["on_off_ratio"] = "inf"
    return d


def config_to_dict(cfg: SimulationConfig) -> dict:
    return {
        "quant": dataclasses.asdict(cfg.quant),
        "mapping": dataclasses.asdict(cfg.mapping),
        "device": _device_to_dict(cfg.device),
        "adc": dataclasses.asdict(cfg.adc),
        "arch": dataclasses.asdict(cfg.arch),
        "cost": dataclasses.asdict(cfg.cost),
        "seed": cfg.seed,
        "mode": cfg.mode,
    }


def save_config(cfg: SimulationConfig, path: str) -> None:
    with open(path, "w") as fp:
        json.dump(config_to_dict(cfg), fp, indent=2, sort_keys=True)
        fp.write("\n")


def config_digest(path: str) -> str:
    """sha256 of the raw config bytes; stable across platforms."""
    with open(path, "rb") as fp:
        return hashlib.sha256(fp.read()).hexdigest()
