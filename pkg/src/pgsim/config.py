"""TOML run configuration: schema, validation and object construction.

Every key is checked against :data:`SCHEMA` before any computation; errors
name the offending dotted path.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .device import ENVELOPES, DeviceSpec, FluxPulse, TransmonSpec
from .hamiltonian import HilbertConfig

DEFAULT_CONFIG = Path(__file__).parent / "data" / "table1.toml"


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the dotted key path."""


REQUIRED = object()

_TRANSMON = {"frequency": (float, REQUIRED), "anharmonicity": (float, REQUIRED), "t1": (float, None),
             "t2": (float, None)}

# key -> (type, default) or nested section dict
SCHEMA: dict = {
    "seed": (int, 0),
    "device": {
        "q1": _TRANSMON,
        "q2": _TRANSMON,
        "coupler": _TRANSMON,
        "g1": (float, REQUIRED),
        "g2": (float, REQUIRED),
    },
    "hilbert": {"levels_q1": (int, 3), "levels_q2": (int, 3), "levels_c": (int, 3), "max_dim": (int, 512)},
    "pulse": {"theta": (float, REQUIRED), "edge_time": (float, 20.0), "envelope": (str, "square_gaussian_edges")},
    "dynamics": {"transfer": (str, "exact"), "max_step": (float, None), "segment": (float, None)},
    "chevron": {
        "gate": (str, "iswap"), "delta": (float, 0.065), "points": (int, 41), "half_width": (float, None),
        "center": (float, None), "duration": (float, 2000.0), "times": (int, 201), "readout": (str, "bare"),
        "window": (int, 4),
    },
    "strengths": {"deltas": (list, [0.01, 0.03, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15]), "numeric_deltas": (list, []),
                  "n_periods": (int, 200)},
    "leakage": {
        "delta": (float, 0.065), "omega_min": (float, 0.4), "omega_max": (float, 0.8), "points": (int, 81),
        "threshold": (float, 1e-5), "duration": (float, 1000.0), "samples": (int, 512), "initial": (str, "100"),
        "subspace": (list, ["100", "010"]),
    },
    "fidelity": {
        "gate": (str, "iswap"), "deltas": (list, [0.03, 0.065, 0.1]), "dissipation": (str, "device"),
        "virtual_z": (bool, True), "mc_samples": (int, 0),
    },
    "calibrate": {"gate": (str, "iswap"), "pairs": (list, [])},
}

GATES = ("iswap", "bswap")


def _check_type(path: str, value, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _resolve(raw: dict, schema: dict, prefix: str = "") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix.rstrip('.') or '<root>'}: expected a table")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown key")
    out = {}
    for key, spec in schema.items():
        path = prefix + key
        if isinstance(spec, dict):
            out[key] = _resolve(raw.get(key, {}), spec, path + ".")
            continue
        kind, default = spec
        if key not in raw:
            if default is REQUIRED:
                raise ConfigError(f"{path}: required key missing")
            out[key] = copy.deepcopy(default)
            continue
        out[key] = _check_type(path, raw[key], kind)
    return out


def _positive(path: str, value, allow_none: bool = False, strict: bool = True):
    if value is None and allow_none:
        return
    if value is None or (value <= 0 if strict else value < 0):
        raise ConfigError(f"{path}: must be {'>' if strict else '>='} 0, got {value!r}")


def _numbers(path: str, values, lo: float = 0.0) -> list:
    out = []
    for k, v in enumerate(values):
        out.append(_check_type(f"{path}[{k}]", v, float))
        if out[-1] < lo:
            raise ConfigError(f"{path}[{k}]: must be >= {lo}, got {v!r}")
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults filled in."""

    data: dict
    source: str = "<memory>"

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def section(self, name: str) -> dict:
        return self.data[name]

    def device(self) -> DeviceSpec:
        d = self.data["device"]
        return DeviceSpec(*(TransmonSpec(**d[k]) for k in ("q1", "q2", "coupler")), g1=d["g1"], g2=d["g2"])

    def hilbert(self) -> HilbertConfig:
        return HilbertConfig(**self.data["hilbert"])

    @property
    def theta(self) -> float:
        return self.data["pulse"]["theta"]

    def pulse(self, delta: float, omega_phi: float, duration: float) -> FluxPulse:
        p = self.data["pulse"]
        return FluxPulse(p["theta"], delta, omega_phi, duration, p["edge_time"], p["envelope"])

    def lines(self) -> list:
        """Flattened ``key = value`` lines for provenance headers, in schema order."""
        out = []

        def walk(node, prefix):
            for key, val in node.items():
                if isinstance(val, dict):
                    walk(val, f"{prefix}{key}.")
                else:
                    out.append(f"{prefix}{key} = {_fmt(val)}")

        walk(self.data, "")
        return out


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, str):
        return f'"{value}"'
    return str(value)


def validate(data: dict) -> None:
    """Semantic checks beyond types; raises :class:`ConfigError`."""
    dev = data["device"]
    for name in ("q1", "q2", "coupler"):
        t = dev[name]
        _positive(f"device.{name}.frequency", t["frequency"])
        _positive(f"device.{name}.t1", t["t1"], allow_none=True)
        _positive(f"device.{name}.t2", t["t2"], allow_none=True)
        if abs(t["anharmonicity"]) >= t["frequency"]:
            raise ConfigError(f"device.{name}.anharmonicity: |u| must be below the frequency")
        if t["t1"] is not None and t["t2"] is not None and t["t2"] > 2 * t["t1"]:
            raise ConfigError(f"device.{name}.t2: unphysical T2 = {t['t2']} us exceeds 2*T1 = {2 * t['t1']} us")
    _positive("device.g1", dev["g1"])
    _positive("device.g2", dev["g2"])
    hil = data["hilbert"]
    for key in ("levels_q1", "levels_q2", "levels_c"):
        if hil[key] < 2:
            raise ConfigError(f"hilbert.{key}: must be >= 2")
    if hil["levels_q1"] * hil["levels_q2"] * hil["levels_c"] > hil["max_dim"]:
        raise ConfigError("hilbert: dimension exceeds hilbert.max_dim")
    pulse = data["pulse"]
    if not abs(pulse["theta"]) < 0.5:
        raise ConfigError("pulse.theta: |theta| must be below 0.5")
    _positive("pulse.edge_time", pulse["edge_time"], strict=False)
    if pulse["envelope"] not in ENVELOPES:
        raise ConfigError(f"pulse.envelope: expected one of {ENVELOPES}, got {pulse['envelope']!r}")
    dyn = data["dynamics"]
    if dyn["transfer"] not in ("exact", "first", "second"):
        raise ConfigError(f"dynamics.transfer: expected exact, first or second, got {dyn['transfer']!r}")
    _positive("dynamics.max_step", dyn["max_step"], allow_none=True)
    _positive("dynamics.segment", dyn["segment"], allow_none=True)

    def delta_ok(path, d):
        if d < 0 or not abs(pulse["theta"]) + d < 0.5:
            raise ConfigError(f"{path}: need 0 <= delta and |theta| + delta < 0.5, got {d!r}")

    ch = data["chevron"]
    if ch["gate"] not in GATES:
        raise ConfigError(f"chevron.gate: expected iswap or bswap, got {ch['gate']!r}")
    delta_ok("chevron.delta", ch["delta"])
    if ch["points"] < 1:
        raise ConfigError("chevron.points: grid must be non-empty")
    if ch["times"] < 8:
        raise ConfigError("chevron.times: need >= 8 samples")
    _positive("chevron.duration", ch["duration"])
    _positive("chevron.half_width", ch["half_width"], allow_none=True, strict=False)
    _positive("chevron.center", ch["center"], allow_none=True)
    if ch["readout"] not in ("bare", "dressed"):
        raise ConfigError(f"chevron.readout: expected bare or dressed, got {ch['readout']!r}")
    if ch["window"] < 1:
        raise ConfigError("chevron.window: must be >= 1")

    st = data["strengths"]
    st["deltas"] = _numbers("strengths.deltas", st["deltas"])
    st["numeric_deltas"] = _numbers("strengths.numeric_deltas", st["numeric_deltas"])
    if not st["deltas"]:
        raise ConfigError("strengths.deltas: grid must be non-empty")
    for k, d in enumerate(st["deltas"] + st["numeric_deltas"]):
        delta_ok(f"strengths.deltas[{k}]", d)
    if st["n_periods"] < 8:
        raise ConfigError("strengths.n_periods: need >= 8")

    lk = data["leakage"]
    delta_ok("leakage.delta", lk["delta"])
    _positive("leakage.omega_min", lk["omega_min"])
    if not lk["omega_max"] >= lk["omega_min"]:
        raise ConfigError("leakage.omega_max: must be >= leakage.omega_min")
    if lk["points"] < 1:
        raise ConfigError("leakage.points: grid must be non-empty")
    _positive("leakage.threshold", lk["threshold"])
    _positive("leakage.duration", lk["duration"])
    if lk["samples"] < 8:
        raise ConfigError("leakage.samples: need >= 8")
    labels = [lk["initial"]] + list(lk["subspace"])
    levels = (hil["levels_q1"], hil["levels_q2"], hil["levels_c"])
    for k, lab in enumerate(labels):
        path = "leakage.initial" if k == 0 else f"leakage.subspace[{k - 1}]"
        if not isinstance(lab, str) or len(lab) != 3 or not lab.isdigit():
            raise ConfigError(f"{path}: expected a label like '100', got {lab!r}")
        if any(int(c) >= n for c, n in zip(lab, levels)):
            raise ConfigError(f"{path}: label {lab!r} is outside the truncated basis")

    fd = data["fidelity"]
    if fd["gate"] not in GATES:
        raise ConfigError(f"fidelity.gate: expected iswap or bswap, got {fd['gate']!r}")
    fd["deltas"] = _numbers("fidelity.deltas", fd["deltas"])
    if not fd["deltas"]:
        raise ConfigError("fidelity.deltas: grid must be non-empty")
    for k, d in enumerate(fd["deltas"]):
        if d <= 0:
            raise ConfigError(f"fidelity.deltas[{k}]: must be > 0")
        delta_ok(f"fidelity.deltas[{k}]", d)
    if fd["dissipation"] not in ("device", "none"):
        raise ConfigError(f"fidelity.dissipation: expected device or none, got {fd['dissipation']!r}")
    if fd["dissipation"] == "device":
        for name in ("q1", "q2", "coupler"):
            if dev[name]["t1"] is None:
                raise ConfigError(f"device.{name}.t1: required when fidelity.dissipation = 'device'")
    if fd["mc_samples"] < 0:
        raise ConfigError("fidelity.mc_samples: must be >= 0")

    cal = data["calibrate"]
    if cal["gate"] not in GATES:
        raise ConfigError(f"calibrate.gate: expected iswap or bswap, got {cal['gate']!r}")
    pairs = []
    for k, pair in enumerate(cal["pairs"]):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"calibrate.pairs[{k}]: expected [amplitude, shift_GHz]")
        pairs.append([_check_type(f"calibrate.pairs[{k}][{j}]", v, float) for j, v in enumerate(pair)])
    cal["pairs"] = pairs


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Read, fill defaults and validate a TOML file (the bundled Table I file when ``path`` is None)."""
    src = Path(path) if path is not None else DEFAULT_CONFIG
    try:
        with open(src, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"<file>: config file {src} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"<file>: {src} is not valid TOML: {exc}") from None
    return config_from_dict(raw, str(src), overrides)


def config_from_dict(raw: dict, source: str = "<memory>", overrides: Optional[dict] = None) -> RunConfig:
    data = _resolve(copy.deepcopy(raw), SCHEMA)
    for key, value in (overrides or {}).items():
        node = data
        *head, last = key.split(".")
        for h in head:
            node = node[h]
        node[last] = value
    validate(data)
    return RunConfig(data, source)
