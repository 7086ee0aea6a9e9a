"""INI experiment configuration: typed parsing, validation, lossless serialization.

Vectors are comma separated and accept run-length items ``value*count``;
matrices separate rows with ``;``.  Unknown sections and keys are errors.
"""

import configparser
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# -- value codecs ---------------------------------------------------------------

def _parse_float(text):
    return float(text)


def _parse_int(text):
    return int(text)


def _parse_bool(text):
    low = text.strip().lower()
    if low in {"1", "true", "yes", "on"}:
        return True
    if low in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_vec(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "*" in item:
            val, count = item.split("*")
            out.extend([float(val)] * int(count))
        else:
            out.append(float(item))
    return tuple(out)


def _parse_ivec(text):
    vals = _parse_vec(text)
    if any(v != int(v) for v in vals):
        raise ValueError("expected integers")
    return tuple(int(v) for v in vals)


def _parse_mat(text):
    rows = [r for r in text.split(";") if r.strip()]
    mat = tuple(_parse_vec(r) for r in rows)
    if len({len(r) for r in mat}) > 1:
        raise ValueError("matrix rows differ in length")
    return mat


def _fmt_float(v):
    return repr(float(v))


def _fmt_vec(vals):
    items = []
    i = 0
    while i < len(vals):
        j = i
        while j < len(vals) and vals[j] == vals[i]:
            j += 1
        run = j - i
        items.append(f"{_fmt_float(vals[i])}*{run}" if run > 2 else ", ".join([_fmt_float(vals[i])] * run))
        i = j
    return ", ".join(items)


def _fmt_ivec(vals):
    return ", ".join(str(int(v)) for v in vals)


def _fmt_mat(rows):
    return "; ".join(_fmt_vec(r) for r in rows)


CODECS = {
    "float": (_parse_float, _fmt_float),
    "int": (_parse_int, str),
    "str": (str.strip, str),
    "bool": (_parse_bool, lambda b: "true" if b else "false"),
    "vec": (_parse_vec, _fmt_vec),
    "ivec": (_parse_ivec, _fmt_ivec),
    "mat": (_parse_mat, _fmt_mat),
}

# -- schema ---------------------------------------------------------------------

EXPERIMENT_KEYS = {"name": "str", "mode": "str", "seed": "int", "rescale_factor": "float",
                   "description": "str"}
MODES = ("standard", "anti-selection", "dictionary", "affine-rescale")

PROBLEM_KEYS = {"gamma": "float", "mass": "float", "x0": "vec", "v0": "vec", "horizon": "float",
                "method": "str", "h0": "float", "rtol": "float", "atol": "float",
                "max_step": "float", "max_steps": "int"}
PROBLEM_REQUIRED = ("gamma", "x0", "horizon")

POTENTIAL_KEYS = {
    "zero": {"dim": "int"},
    "tikhonov": {"center": "vec", "weight": "float"},
    "quadratic": {"A": "mat", "b": "vec", "c": "float"},
    "sqdist": {"set": "str", "point": "vec", "directions": "mat", "lo": "vec", "hi": "vec",
               "center": "vec", "radius": "float", "weight": "float"},
    "sqdist-intervals": {"lo": "vec", "hi": "vec", "weight": "float"},
    "coupling": {"L1": "mat", "L2": "mat", "block1": "ivec", "block2": "ivec"},
    "neumann-waves": {"n": "int", "alpha1": "float", "alpha2": "float", "profile1": "str",
                      "profile2": "str", "amplitude1": "float", "amplitude2": "float"},
    "wave-coupling": {"n": "int"},
}
SCHEDULE_KEYS = {
    "power": {"alpha": "float", "scale": "float"},
    "exponential": {"rate": "float"},
    "constant": {"value": "float"},
    "custom": {"t": "vec", "eps": "vec"},
}
TOLERANCE_KEYS = {
    "speed": "float", "grad_phi": "float", "phi": "float", "psi_gap": "float",
    "tail_oscillation": "float", "int_phi_tail": "float", "monotone": "float",
    "oracle_kkt": "float", "membership": "float", "x_distance": "float",
    "tail_monotone": "bool", "anti_psi_margin": "float", "e2_identity": "float", "identity_atol": "float",
    "mean_gap": "float", "profile_error": "float", "beta_residual": "float",
    "roundtrip": "float", "rescaled_residual": "float", "brute_force": "float",
    "limit_prediction": "float", "expect_admissible": "bool",
}
OUTPUT_KEYS = {"dir": "str", "cadence": "float"}

SECTIONS = ("experiment", "problem", "phi", "psi", "schedule", "tolerances", "output")


def _kinded(section, table, values):
    kind = values.get("kind")
    if kind is None:
        raise ConfigError(f"[{section}] missing required key 'kind'")
    if kind not in table:
        raise ConfigError(f"[{section}] kind: unknown value {kind!r}; expected one of {sorted(table)}")
    return {"kind": "str", **table[kind]}


def _section_schema(section, raw):
    if section == "experiment":
        return EXPERIMENT_KEYS
    if section == "problem":
        return PROBLEM_KEYS
    if section in ("phi", "psi"):
        return _kinded(section, POTENTIAL_KEYS, raw)
    if section == "schedule":
        return _kinded(section, SCHEDULE_KEYS, raw)
    if section == "tolerances":
        return TOLERANCE_KEYS
    return OUTPUT_KEYS


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    mode: str = "standard"
    seed: int = 0
    problem: dict = field(default_factory=dict)
    phi: dict = field(default_factory=dict)
    psi: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"[experiment] mode: unknown value {self.mode!r}; expected one of {MODES}")
        for key in PROBLEM_REQUIRED:
            if key not in self.problem:
                raise ConfigError(f"[problem] missing required key {key!r}")
        for sec in ("phi", "psi", "schedule"):
            if "kind" not in getattr(self, sec):
                raise ConfigError(f"[{sec}] missing required key 'kind'")

    def sections(self):
        exp = {"name": self.name, "mode": self.mode, "seed": self.seed, **self.extra}
        return {"experiment": exp, "problem": self.problem, "phi": self.phi, "psi": self.psi,
                "schedule": self.schedule, "tolerances": self.tolerances, "output": self.output}

    def serialize(self):
        lines = []
        for sec, values in self.sections().items():
            schema = _section_schema(sec, values)
            lines.append(f"[{sec}]")
            for key, val in values.items():
                lines.append(f"{key} = {CODECS[schema[key]][1](val)}")
            lines.append("")
        return "\n".join(lines)

    def replace(self, **changes):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for key, val in changes.items():
            data[key] = dict(val) if isinstance(val, dict) else val
        return ExperimentConfig(**data)

    def with_overrides(self, horizon=None, alpha=None, seed=None):
        cfg = self
        if horizon is not None:
            cfg = cfg.replace(problem={**cfg.problem, "horizon": float(horizon)})
        if alpha is not None:
            if cfg.schedule.get("kind") != "power":
                raise ConfigError("--alpha applies only to a power-law schedule")
            cfg = cfg.replace(schedule={**cfg.schedule, "alpha": float(alpha)})
        if seed is not None:
            cfg = cfg.replace(seed=int(seed))
        return cfg


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#",), inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    data = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        raw = dict(parser[sec])
        schema = _section_schema(sec, raw)
        parsed = {}
        for key, text_val in raw.items():
            if key not in schema:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
            try:
                parsed[key] = CODECS[schema[key]][0](text_val)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: cannot parse {text_val!r} ({exc})") from exc
        data[sec] = parsed
    exp = data.get("experiment", {})
    if "name" not in exp:
        raise ConfigError("[experiment] missing required key 'name'")
    extra = {k: v for k, v in exp.items() if k not in ("name", "mode", "seed")}
    return ExperimentConfig(name=exp["name"], mode=exp.get("mode", "standard"),
                            seed=exp.get("seed", 0), problem=data.get("problem", {}),
                            phi=data.get("phi", {}), psi=data.get("psi", {}),
                            schedule=data.get("schedule", {}),
                            tolerances=data.get("tolerances", {}),
                            output=data.get("output", {}), extra=extra)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def vec(values):
    """Config vector from any sequence of numbers."""
    return tuple(float(v) for v in np.ravel(values))
