"""JSON experiment configuration.

Every physical quantity carries an explicit unit suffix: frequencies are
written as ``"<number> kappa"`` or ``"<number> omega_R"`` and lengths as
``"<number> lambda"``.  Physical parameters have no defaults; only numerical
settings do.  Unknown keys are rejected.

Example::

    {
      "system": {
        "kappa": "1 kappa", "recoil": "0.0029239766081871343 kappa",
        "delta_c": "-100 kappa", "eta": "0 kappa", "coupling": "0.9 kappa",
        "mode": "fabry_perot",
        "detuning": {"kind": "linear", "delta0": "0 kappa", "delta1": "0.0014 kappa"},
        "pump": {"kind": "off"}
      },
      "lattice": {"n_sites": 8, "wannier_width": "0.08 lambda"},
      "sampler": "mi",
      "ensemble": {"n_realizations": 10000, "seed": 1}
    }
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .experiment import Experiment
from .model import (
    ConstantDetuning,
    LatticeConfig,
    LinearDetuning,
    ModeKind,
    PumpOff,
    RectWindowPump,
    StepDetuning,
    SystemParams,
    TabulatedDetuning,
    TabulatedPump,
    UniformPump,
)
from .observables import SweepSpec

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "parse_quantity", "SCHEMA"]

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_FREQ = {"type": "string", "pattern": rf"^\s*{_NUM}\s+(kappa|omega_R)\s*$"}
_LEN = {"type": "string", "pattern": rf"^\s*{_NUM}\s+lambda\s*$"}


def _obj(props: dict, required: list[str] | None = None) -> dict:
    return {"type": "object", "properties": props, "required": required or [], "additionalProperties": False}


_DETUNING = {
    "oneOf": [
        _obj({"kind": {"const": "constant"}, "delta0": _FREQ}, ["kind", "delta0"]),
        _obj({"kind": {"const": "linear"}, "delta0": _FREQ, "delta1": _FREQ}, ["kind", "delta0", "delta1"]),
        _obj({"kind": {"const": "step"}, "delta0": _FREQ, "step": _FREQ, "x0": _LEN}, ["kind", "delta0", "step", "x0"]),
        _obj(
            {
                "kind": {"const": "tabulated"},
                "delta0": _FREQ,
                "x": {"type": "array", "items": _LEN, "minItems": 2},
                "values": {"type": "array", "items": _FREQ, "minItems": 2},
            },
            ["kind", "delta0", "x", "values"],
        ),
    ]
}

_PUMP = {
    "oneOf": [
        _obj({"kind": {"const": "off"}}, ["kind"]),
        _obj({"kind": {"const": "uniform"}, "amplitude": _FREQ}, ["kind", "amplitude"]),
        _obj({"kind": {"const": "rect"}, "amplitude": _FREQ, "x_lo": _LEN, "x_hi": _LEN}, ["kind", "amplitude", "x_lo", "x_hi"]),
        _obj(
            {
                "kind": {"const": "tabulated"},
                "x": {"type": "array", "items": _LEN, "minItems": 2},
                "re": {"type": "array", "items": _FREQ, "minItems": 2},
                "im": {"type": "array", "items": _FREQ, "minItems": 2},
            },
            ["kind", "x", "re", "im"],
        ),
    ]
}

SCHEMA: dict = _obj(
    {
        "system": _obj(
            {
                "kappa": _FREQ,
                "recoil": _FREQ,
                "delta_c": _FREQ,
                "eta": _FREQ,
                "coupling": _FREQ,
                "mode": {"enum": [m.value for m in ModeKind]},
                "detuning": _DETUNING,
                "pump": _PUMP,
                "pump_masked_atoms": {"type": "boolean"},
            },
            ["kappa", "recoil", "delta_c", "eta", "coupling", "mode", "detuning", "pump"],
        ),
        "lattice": {
            "oneOf": [
                _obj(
                    {
                        "n_sites": {"type": "integer", "minimum": 1},
                        "wannier_width": _LEN,
                        "spacing": _LEN,
                        "center": _LEN,
                        "occupancy": {"type": "integer", "minimum": 0},
                        "coupled_mask": {"type": "array", "items": {"type": "boolean"}},
                    },
                    ["n_sites", "wannier_width"],
                ),
                _obj(
                    {
                        "site_centers": {"type": "array", "items": _LEN, "minItems": 1},
                        "wannier_width": _LEN,
                        "occupancy": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                        "coupled_mask": {"type": "array", "items": {"type": "boolean"}},
                    },
                    ["site_centers", "wannier_width", "occupancy"],
                ),
            ]
        },
        "sampler": {"enum": ["mi", "independent"]},
        "ensemble": _obj(
            {
                "n_realizations": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "stream": {"type": "integer", "minimum": 0},
                "workers": {"type": "integer", "minimum": 1},
                "chunk_size": {"type": "integer", "minimum": 1},
            },
            ["n_realizations", "seed"],
        ),
        "sweep": _obj(
            {
                "variable": {"enum": ["atom_detuning", "cavity_detuning", "transverse_frequency", "eta"]},
                "start": _FREQ,
                "stop": _FREQ,
                "n_points": {"type": "integer", "minimum": 2},
                "intensity": {"enum": ["low_intensity", "saturated"]},
                "delta_ca": _FREQ,
                "n_realizations": {"type": "integer", "minimum": 1},
            },
            ["variable", "start", "stop", "n_points"],
        ),
        "options": _obj(
            {
                "histogram_bins": {"type": "integer", "minimum": 1},
                "target_rank": {"type": "integer", "minimum": 0},
                "grid_spacing": _LEN,
                "bin_width": _LEN,
                "profile_at": _FREQ,
                "peak_threshold": {"type": "number", "exclusiveMinimum": 0},
                "realization_index": {"type": "integer", "minimum": 0},
            }
        ),
        "output": _obj({"directory": {"type": "string"}}),
    },
    ["system", "lattice", "sampler", "ensemble"],
)


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


def parse_quantity(text: str, recoil: float | None = None) -> float:
    """Value of a unit-suffixed quantity in units of ``kappa`` or ``lambda``.

    ``omega_R`` values need the recoil frequency in units of ``kappa``.
    """
    m = re.fullmatch(rf"\s*({_NUM})\s+(kappa|omega_R|lambda)\s*", text)
    if not m:
        raise ConfigError(f"cannot parse quantity {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    if unit == "omega_R":
        if recoil is None:
            raise ConfigError("omega_R units need system.recoil")
        return value * recoil
    return value


@dataclass
class ExperimentConfig:
    """Parsed configuration.

    ``raw`` keeps the validated JSON document; ``sha256`` hashes its
    canonical serialization.
    """

    experiment: Experiment
    sweep: SweepSpec | None
    options: dict[str, Any]
    output_dir: Path | None
    raw: dict
    sha256: str
    recoil: float = field(default=1.0 / 342.0)

    @property
    def params(self) -> SystemParams:
        return self.experiment.params

    @property
    def lattice(self) -> LatticeConfig:
        return self.experiment.lattice


def _detuning(d: dict, q) -> Any:
    kind = d["kind"]
    if kind == "constant":
        return ConstantDetuning(q(d["delta0"]))
    if kind == "linear":
        return LinearDetuning(q(d["delta0"]), q(d["delta1"]))
    if kind == "step":
        return StepDetuning(q(d["delta0"]), q(d["step"]), q(d["x0"]))
    return TabulatedDetuning(tuple(q(v) for v in d["x"]), tuple(q(v) for v in d["values"]), q(d["delta0"]))


def _pump(d: dict, q) -> Any:
    kind = d["kind"]
    if kind == "off":
        return PumpOff()
    if kind == "uniform":
        return UniformPump(q(d["amplitude"]))
    if kind == "rect":
        return RectWindowPump(q(d["amplitude"]), q(d["x_lo"]), q(d["x_hi"]))
    if not len(d["x"]) == len(d["re"]) == len(d["im"]):
        raise ConfigError("system.pump: x, re and im must have equal lengths")
    return TabulatedPump(
        tuple(q(v) for v in d["x"]), tuple(complex(q(a), q(b)) for a, b in zip(d["re"], d["im"]))
    )


def _lattice(d: dict, q) -> LatticeConfig:
    if "n_sites" in d:
        mask = d.get("coupled_mask")
        if mask is not None and len(mask) != d["n_sites"]:
            raise ConfigError("lattice.coupled_mask must have n_sites entries")
        return LatticeConfig.regular(
            d["n_sites"],
            q(d["wannier_width"]),
            spacing=q(d.get("spacing", "0.5 lambda")),
            occupancy=d.get("occupancy", 1),
            coupled_mask=tuple(mask) if mask is not None else None,
            center=q(d.get("center", "0 lambda")),
        )
    centers = tuple(q(c) for c in d["site_centers"])
    mask = tuple(d.get("coupled_mask", [True] * len(centers)))
    return LatticeConfig(centers, q(d["wannier_width"]), tuple(d["occupancy"]), mask)


def _format_error(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "oneOf" and err.context:
        best = jsonschema.exceptions.best_match(err.context)
        sub = ".".join(str(p) for p in best.absolute_path)
        where = f"{path}.{sub}" if sub else path
        return f"{where}: {best.message}"
    return f"{path}: {err.message}"


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate ``doc`` against :data:`SCHEMA` and build the experiment."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(_format_error(e) for e in errors))
    sysd = doc["system"]
    recoil = parse_quantity(sysd["recoil"])

    def q(text: str) -> float:
        return parse_quantity(text, recoil)

    try:
        params = SystemParams(
            kappa=q(sysd["kappa"]),
            delta_c=q(sysd["delta_c"]),
            eta=q(sysd["eta"]),
            coupling_amp=q(sysd["coupling"]),
            mode_kind=ModeKind(sysd["mode"]),
            recoil_unit=recoil,
            detuning=_detuning(sysd["detuning"], q),
            pump=_pump(sysd["pump"], q),
            pump_masked_atoms=sysd.get("pump_masked_atoms", True),
        )
        lattice = _lattice(doc["lattice"], q)
        ens = doc["ensemble"]
        exp = Experiment(
            params=params,
            lattice=lattice,
            sampler=doc["sampler"],
            n_realizations=ens["n_realizations"],
            seed=ens["seed"],
            stream=ens.get("stream", 0),
            workers=ens.get("workers", 1),
            chunk_size=ens.get("chunk_size", 2048),
        )
        sweep = None
        if "sweep" in doc:
            sw = doc["sweep"]
            sweep = SweepSpec(
                variable=sw["variable"],
                start=q(sw["start"]),
                stop=q(sw["stop"]),
                n_points=sw["n_points"],
                intensity=sw.get("intensity", "low_intensity"),
                delta_ca=q(sw["delta_ca"]) if "delta_ca" in sw else None,
                n_realizations=sw.get("n_realizations"),
            )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    opts = dict(doc.get("options", {}))
    for key in ("grid_spacing", "bin_width", "profile_at"):
        if key in opts:
            opts[key] = q(opts[key])
    out = doc.get("output", {}).get("directory")
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return ExperimentConfig(
        experiment=exp,
        sweep=sweep,
        options=opts,
        output_dir=Path(out) if out else None,
        raw=copy.deepcopy(doc),
        sha256=hashlib.sha256(canon).hexdigest(),
        recoil=recoil,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a JSON configuration file.

    Raises
    ------
    ConfigError
        With the line and column for JSON syntax errors, or the offending
        field path for schema violations.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(doc)
