"""Scan configuration: TOML parsing, validation with field diagnostics, canonical form."""
from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import dynamics, model
from .dynamics import BaseSystem
from .model import JacobiFamily

PRESETS = ("free", "constant_block", "cosine", "matrix_trig", "periodic")
PRESET_KEYS = {
    "free": ("l",),
    "constant_block": ("l", "V0", "D0"),
    "cosine": ("l", "amplitude", "phase"),
    "matrix_trig": ("l", "a", "b"),
    "periodic": ("l", "D", "V"),
}
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key as ``section.key``."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass(frozen=True)
class BaseConfig:
    kind: str = "rotation"
    alpha: tuple = (dynamics.GOLDEN,)
    period: int = 0
    minimal: bool = True
    point: tuple = ()


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "free"
    l: int = 1
    params: tuple = ()  # sorted (key, value) pairs, matrices as nested tuples
    invertibility_threshold: float = model.DEFAULT_INVERTIBILITY_THRESHOLD

    def param(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class GridConfig:
    min: float = -3.0
    max: float = 3.0
    step: float = 0.01
    imag: float = 0.0


@dataclass(frozen=True)
class MethodsConfig:
    growth: bool = True
    certify: bool = True
    bounded_orbit: bool = True
    truncation: bool = True
    monodromy: bool = False
    herglotz: bool = False

    def enabled(self) -> list:
        return [f.name for f in fields(self) if getattr(self, f.name)]


@dataclass(frozen=True)
class ResolutionsConfig:
    base: int = 64
    sphere_samples: int = 512
    growth_N: int = 256
    orbit_N: int = 64
    truncation_N: int = 256


@dataclass(frozen=True)
class ThresholdsConfig:
    growth_gap: float = 0.03
    certify_epsilon: float = 0.0  # 0 walks the default epsilon ladder
    certify_R: int = 64
    refute_tol: float = 0.05
    bounded_tol: float = 0.05
    truncation_radius: float = 0.015
    bulk_weight: float = 0.25
    herglotz_ladder: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    herglotz_zero: float = 1e-2
    herglotz_divergent: float = 1e3


@dataclass(frozen=True)
class OutputConfig:
    path: str = "scan.csv"
    format: str = "csv"


@dataclass(frozen=True)
class ScanConfig:
    model: ModelConfig
    grid: GridConfig
    base: BaseConfig = field(default_factory=BaseConfig)
    methods: MethodsConfig = field(default_factory=MethodsConfig)
    resolutions: ResolutionsConfig = field(default_factory=ResolutionsConfig)
    thresholds: ThresholdsConfig = field(default_factory=ThresholdsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def grid_points(self) -> list:
        return grid_points(self.grid)

    def system(self) -> BaseSystem:
        return build_base(self)

    def family(self) -> JacobiFamily:
        return build_family(self)

    def basepoint(self):
        """Configured base point; the origin of Omega when none is given."""
        system = self.system()
        if self.base.point:
            p = self.base.point
            return system.point(p[0] if system.is_cycle and len(p) == 1 else p)
        return system.point(0 if system.is_cycle else [0.0] * system.dim)


SECTIONS = {
    "base": BaseConfig,
    "model": ModelConfig,
    "grid": GridConfig,
    "methods": MethodsConfig,
    "resolutions": ResolutionsConfig,
    "thresholds": ThresholdsConfig,
    "output": OutputConfig,
}
REQUIRED = ("model", "grid")


# ------------------------------------------------------------------ parsing


def _number(value, where: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", where)
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}", where)
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError("must be finite", where)
    return value


def _matrix(value, where: str):
    """Nested list of numbers -> nested tuple of floats (any depth)."""
    if isinstance(value, list):
        if not value:
            raise ConfigError("empty array", where)
        out = tuple(_matrix(v, where) for v in value)
        depths = {_depth(v) for v in out}
        if len(depths) != 1:
            raise ConfigError("ragged array", where)
        return out
    return _number(value, where)


def _depth(v) -> int:
    return 1 + _depth(v[0]) if isinstance(v, tuple) else 0


def _shape(v) -> tuple:
    return (len(v),) + _shape(v[0]) if isinstance(v, tuple) else ()


def _section(raw: dict, name: str, cls, convert) -> Any:
    data = raw.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError("expected a table", name)
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(known))})", f"{name}.{key}")
        kwargs[key] = convert(key, value, f"{name}.{key}")
    return cls(**kwargs)


def _typed(cls):
    defaults = asdict(cls())

    def convert(key, value, where):
        ref = defaults[key]
        if isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"expected true or false, got {value!r}", where)
            return value
        if isinstance(ref, int):
            return _number(value, where, integer=True)
        if isinstance(ref, float):
            return _number(value, where)
        if isinstance(ref, str):
            if not isinstance(value, str):
                raise ConfigError(f"expected a string, got {value!r}", where)
            return value
        if isinstance(ref, tuple):
            if not isinstance(value, list):
                value = [value]
            return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(value))
        raise ConfigError("unsupported key", where)

    return convert


def _parse_model(raw: dict) -> ModelConfig:
    data = raw["model"]
    if not isinstance(data, dict):
        raise ConfigError("expected a table", "model")
    preset = data.get("preset", "free")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})", "model.preset")
    allowed = set(PRESET_KEYS[preset]) | {"preset", "invertibility_threshold"}
    params = {}
    l_given = None
    threshold = model.DEFAULT_INVERTIBILITY_THRESHOLD
    for key, value in data.items():
        where = f"model.{key}"
        if key not in allowed:
            raise ConfigError(f"unknown key for preset {preset!r} (allowed: {', '.join(sorted(allowed))})", where)
        if key == "preset":
            continue
        if key == "l":
            l_given = _number(value, where, integer=True)
            if l_given < 1:
                raise ConfigError("must be >= 1", where)
        elif key == "invertibility_threshold":
            threshold = _number(value, where)
            if threshold <= 0:
                raise ConfigError("must be > 0", where)
        elif isinstance(value, list):
            params[key] = _matrix(value, where)
        else:
            params[key] = _number(value, where)
    l = _infer_l(preset, params, l_given)
    return ModelConfig(preset, l, tuple(sorted(params.items())), threshold)


def _infer_l(preset: str, params: dict, l_given: Optional[int]) -> int:
    def square(key):
        v = params.get(key)
        if v is None:
            return None
        s = _shape(v) if isinstance(v, tuple) else ()
        if s == ():
            return 1
        if len(s) != 2 or s[0] != s[1]:
            raise ConfigError(f"expected a square matrix, got shape {s}", f"model.{key}")
        return s[0]

    if preset == "free":
        return l_given or 1
    if preset == "cosine":
        if l_given not in (None, 1):
            raise ConfigError("the cosine preset is scalar", "model.l")
        return 1
    if preset == "constant_block":
        if "V0" not in params:
            raise ConfigError("required for preset 'constant_block'", "model.V0")
        l = square("V0")
        ld = square("D0")
        if ld is not None and ld != l:
            raise ConfigError(f"size {ld} does not match V0 size {l}", "model.D0")
    elif preset == "matrix_trig":
        for key in ("a", "b"):
            if key not in params:
                raise ConfigError("required for preset 'matrix_trig'", f"model.{key}")
        l = square("a")
        if square("b") != l:
            raise ConfigError("shape does not match model.a", "model.b")
    else:
        for key in ("D", "V"):
            if key not in params or not isinstance(params[key], tuple):
                raise ConfigError("required table for preset 'periodic'", f"model.{key}")
        sd, sv = _shape(params["D"]), _shape(params["V"])
        if sd != sv:
            raise ConfigError(f"shape {sv} does not match model.D shape {sd}", "model.V")
        if len(sd) == 1:
            l = 1
        elif len(sd) == 3 and sd[1] == sd[2]:
            l = sd[1]
        else:
            raise ConfigError("expected a list of numbers or of square matrices", "model.D")
    if l_given is not None and l_given != l:
        raise ConfigError(f"given l={l_given} but the parameters have size {l}", "model.l")
    return l


def _check(cfg: ScanConfig) -> None:
    g = cfg.grid
    if not g.step > 0:
        raise ConfigError("must be > 0", "grid.step")
    if not g.min < g.max:
        raise ConfigError(f"must be greater than grid.min = {g.min}", "grid.max")
    if not cfg.methods.enabled():
        raise ConfigError("at least one method must be enabled", "methods")
    b = cfg.base
    if b.kind not in dynamics.KINDS:
        raise ConfigError(f"unknown kind {b.kind!r} (choose from {', '.join(dynamics.KINDS)})", "base.kind")
    if b.kind == "cycle" and b.period < 1:
        raise ConfigError("a cycle base needs period >= 1", "base.period")
    if cfg.model.preset == "periodic":
        p = len(cfg.model.param("D"))
        if b.kind != "cycle" or b.period != p:
            raise ConfigError(f"the periodic preset needs kind = \"cycle\" with period = {p}", "base")
    elif b.kind == "cycle" and cfg.model.preset in ("cosine", "matrix_trig"):
        raise ConfigError(f"preset {cfg.model.preset!r} needs a torus base", "base.kind")
    if cfg.methods.monodromy and b.kind != "cycle":
        raise ConfigError("the monodromy oracle needs a cycle base", "methods.monodromy")
    r = cfg.resolutions
    for name in ("base", "sphere_samples", "orbit_N", "truncation_N"):
        if getattr(r, name) < 1:
            raise ConfigError("must be >= 1", f"resolutions.{name}")
    if r.growth_N < 32:
        raise ConfigError("must be >= 32", "resolutions.growth_N")
    t = cfg.thresholds
    for name in ("growth_gap", "refute_tol", "bounded_tol", "truncation_radius", "herglotz_zero", "herglotz_divergent"):
        if not getattr(t, name) > 0:
            raise ConfigError("must be > 0", f"thresholds.{name}")
    if t.certify_epsilon < 0:
        raise ConfigError("must be >= 0", "thresholds.certify_epsilon")
    if t.certify_R < 1:
        raise ConfigError("must be >= 1", "thresholds.certify_R")
    if not 0 < t.bulk_weight <= 1:
        raise ConfigError("must lie in (0, 1]", "thresholds.bulk_weight")
    lad = t.herglotz_ladder
    if len(lad) < 2 or any(y <= 0 for y in lad) or any(b >= a for a, b in zip(lad, lad[1:])):
        raise ConfigError("must be at least two positive, strictly decreasing values", "thresholds.herglotz_ladder")
    if cfg.output.format not in FORMATS:
        raise ConfigError(f"unknown format {cfg.output.format!r} (choose from csv, json)", "output.format")
    try:
        cfg.system()
    except ValueError as exc:
        raise ConfigError(str(exc), "base.alpha") from None
    try:
        cfg.basepoint()
    except ValueError as exc:
        raise ConfigError(str(exc), "base.point") from None


def from_dict(raw: dict) -> ScanConfig:
    for name in raw:
        if name not in SECTIONS:
            raise ConfigError(f"unknown section (allowed: {', '.join(SECTIONS)})", name)
    for name in REQUIRED:
        if name not in raw:
            raise ConfigError("missing required section", name)
    cfg = ScanConfig(
        model=_parse_model(raw),
        grid=_section(raw, "grid", GridConfig, _typed(GridConfig)),
        base=_section(raw, "base", BaseConfig, _typed(BaseConfig)),
        methods=_section(raw, "methods", MethodsConfig, _typed(MethodsConfig)),
        resolutions=_section(raw, "resolutions", ResolutionsConfig, _typed(ResolutionsConfig)),
        thresholds=_section(raw, "thresholds", ThresholdsConfig, _typed(ThresholdsConfig)),
        output=_section(raw, "output", OutputConfig, _typed(OutputConfig)),
    )
    if cfg.model.preset == "periodic" and "base" not in raw:
        cfg = replace(cfg, base=BaseConfig(kind="cycle", alpha=(), period=len(cfg.model.param("D"))))
    _check(cfg)
    return cfg


def parse_config(text: str) -> ScanConfig:
    """Parse TOML text into a validated ScanConfig.

    Syntax errors carry the TOML line and column; semantic errors name the
    field as ``section.key``.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return from_dict(raw)


def load_config(path) -> ScanConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------- canonical form


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def to_dict(cfg: ScanConfig) -> dict:
    out = {}
    for name in SECTIONS:
        sec = getattr(cfg, name)
        if name == "model":
            d = {"preset": sec.preset, "l": sec.l, "invertibility_threshold": sec.invertibility_threshold}
            d.update({k: _plain(v) for k, v in sec.params})
        else:
            d = {k: _plain(v) for k, v in asdict(sec).items()}
            if name == "base" and not d["point"]:
                del d["point"]
        out[name] = d
    return out


def serialize(cfg: ScanConfig) -> str:
    """Canonical TOML: every key present, sections and keys in a fixed order."""
    return tomli_w.dumps(to_dict(cfg))


def config_hash(cfg: ScanConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()


def model_hash(cfg: ScanConfig) -> str:
    """Digest of the base and model sections only."""
    d = to_dict(cfg)
    text = tomli_w.dumps({"base": d["base"], "model": d["model"]})
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def override(cfg: ScanConfig, section: str, **values) -> ScanConfig:
    """Copy with some keys of one section replaced; the result is re-validated."""
    raw = to_dict(cfg)
    raw[section].update({k: v for k, v in values.items() if v is not None})
    return from_dict(raw)


# ---------------------------------------------------------------- builders


def build_base(cfg: ScanConfig) -> BaseSystem:
    b = cfg.base
    if b.kind == "cycle":
        return dynamics.cycle(b.period)
    if b.kind == "rotation":
        return dynamics.rotation(b.alpha[0], minimal=b.minimal)
    if b.kind == "skew-shift":
        return dynamics.skew_shift(b.alpha[0], minimal=b.minimal)
    return dynamics.translation(b.alpha, minimal=b.minimal)


def build_family(cfg: ScanConfig) -> JacobiFamily:
    m = cfg.model
    base = build_base(cfg)
    if m.preset == "free":
        f = model.free(base, m.l)
    elif m.preset == "constant_block":
        f = model.constant_block(_plain(m.param("V0")), _plain(m.param("D0")) if m.param("D0") else None, base)
    elif m.preset == "cosine":
        f = model.cosine(m.param("amplitude", 2.0), m.param("phase", 0.0), base)
    elif m.preset == "matrix_trig":
        f = model.matrix_trig(_plain(m.param("a")), _plain(m.param("b")), base)
    else:
        f = model.periodic(_plain(m.param("D")), _plain(m.param("V")))
    if m.invertibility_threshold != f.invertibility_threshold:
        f = replace(f, invertibility_threshold=m.invertibility_threshold)
    return f


def grid_points(g: GridConfig) -> list:
    """min, min + step, ... up to max (inclusive up to rounding), rounded to 12 decimals."""
    n = int(math.floor((g.max - g.min) / g.step + 1e-9)) + 1
    return [round(g.min + k * g.step, 12) for k in range(n)]
