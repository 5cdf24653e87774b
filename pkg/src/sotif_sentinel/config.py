"""INI-style configuration for the whole toolchain.

Every section maps onto one parameter dataclass and every key onto one of its
fields; shipped defaults reproduce the reference scenario. Per-category
field parameters live in ``[field.<category>]`` sections::

    [scenario]
    x_0 = 30.0

    [field.person]
    L_x = 15.0

    [planner]
    Q = 2.0, 0.5
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields, replace
from dataclasses import field as dc_field
from typing import Iterable

from .dynamics import VehicleParams
from .entropy import EntropyConfig
from .field import CATEGORIES, CategoryFieldParams, FieldParams, RoadModel, SafetyMargins
from .fusion import DEFAULT_AFFINITY_THRESHOLD
from .planner import PlannerConfig
from .sim import CaseConfig, ScenarioConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PerceptionConfig:
    affinity_threshold: float = DEFAULT_AFFINITY_THRESHOLD
    T: int = 5
    C: int = 11
    f_p: float = 0.1
    theta_lm: float = 1.2
    theta_mh: float = 1.6

    @property
    def entropy(self) -> EntropyConfig:
        return EntropyConfig(self.T, self.C, self.f_p, self.theta_lm, self.theta_mh)


@dataclass(frozen=True)
class Config:
    scenario: ScenarioConfig = dc_field(default_factory=ScenarioConfig)
    vehicle: VehicleParams = dc_field(default_factory=VehicleParams)
    perception: PerceptionConfig = dc_field(default_factory=PerceptionConfig)
    field: FieldParams = dc_field(default_factory=FieldParams)
    road: RoadModel = dc_field(default_factory=RoadModel)
    planner: PlannerConfig = dc_field(default_factory=PlannerConfig)
    case: CaseConfig = dc_field(default_factory=CaseConfig)

    def __post_init__(self):
        if abs(self.planner.dt - self.scenario.dt) > 1e-12:
            object.__setattr__(self, "planner", replace(self.planner, dt=self.scenario.dt))

    @property
    def entropy(self) -> EntropyConfig:
        return self.perception.entropy

    def with_case(self, case_id: int) -> "Config":
        return replace(self, case=replace(self.case, case_id=case_id))

    def sim_kwargs(self) -> dict:
        return dict(
            vehicle=self.vehicle,
            field_params=self.field,
            road=self.road,
            planner_cfg=self.planner,
            entropy_cfg=self.entropy,
            case=self.case,
            affinity_threshold=self.perception.affinity_threshold,
        )


_SIMPLE_SECTIONS = ("scenario", "vehicle", "perception", "road", "planner", "case")
# planner.dt always follows scenario.dt
_HIDDEN = {"planner": {"dt"}}


def _parse_value(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return tuple(type(d)(float(p)) if isinstance(d, float) else type(d)(p) for d, p in zip(default, parts))
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} ({exc})") from None


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _update(obj, section: str, items: Iterable[tuple[str, str]]):
    known = {f.name: f for f in fields(obj) if f.name not in _HIDDEN.get(section, ())}
    changes = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        changes[key] = _parse_value(text, getattr(obj, key), f"{section}.{key}")
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _category_index(name: str) -> int:
    key = name.strip().lower().replace(" ", "_")
    if key not in CATEGORIES:
        raise ConfigError(f"unknown category {name!r}; expected one of {', '.join(CATEGORIES)}")
    return CATEGORIES.index(key)


def _apply(cfg: Config, section: str, items: list[tuple[str, str]]) -> Config:
    if section in _SIMPLE_SECTIONS:
        return replace(cfg, **{section: _update(getattr(cfg, section), section, items)})
    if section == "field":
        margins = _update(cfg.field.margins, section, items)
        return replace(cfg, field=replace(cfg.field, margins=margins))
    if section.startswith("field."):
        c = _category_index(section[len("field."):])
        cats = dict(cfg.field.categories)
        cats[c] = _update(cats.get(c, CategoryFieldParams()), section, items)
        return replace(cfg, field=replace(cfg.field, categories=cats))
    raise ConfigError(f"unknown section [{section}]")


def loads(text: str, base: Config | None = None) -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (L_x, Q, ...)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = base or Config()
    for section in parser.sections():
        cfg = _apply(cfg, section, list(parser.items(section)))
    return Config(**{f.name: getattr(cfg, f.name) for f in fields(cfg)})


def load(path: str | None, overrides: Iterable[str] = ()) -> Config:
    cfg = Config()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = loads(fh.read(), cfg)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return apply_overrides(cfg, overrides)


def apply_overrides(cfg: Config, overrides: Iterable[str]) -> Config:
    """Apply ``section.key=value`` strings, e.g. ``field.person.a=60``."""
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value")
        lhs, value = ov.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override {ov!r} needs a section prefix")
        section, key = lhs.strip().rsplit(".", 1)
        cfg = _apply(cfg, section, [(key, value)])
    return Config(**{f.name: getattr(cfg, f.name) for f in fields(cfg)})


def dumps(cfg: Config) -> str:
    """Fully resolved config in the same format :func:`loads` reads."""
    out = io.StringIO()

    def section(name: str, obj):
        out.write(f"[{name}]\n")
        for f in fields(obj):
            if f.name in _HIDDEN.get(name, ()):
                continue
            out.write(f"{f.name} = {_format_value(getattr(obj, f.name))}\n")
        out.write("\n")

    for name in ("scenario", "vehicle", "perception"):
        section(name, getattr(cfg, name))
    section("field", cfg.field.margins)
    for c in sorted(cfg.field.categories):
        section(f"field.{CATEGORIES[c]}", cfg.field.categories[c])
    for name in ("road", "planner", "case"):
        section(name, getattr(cfg, name))
    return out.getvalue()


def as_dict(cfg: Config) -> dict:
    d = dataclasses.asdict(cfg)
    d["field"] = {
        "margins": dataclasses.asdict(cfg.field.margins),
        "categories": {CATEGORIES[c]: dataclasses.asdict(p) for c, p in sorted(cfg.field.categories.items())},
    }
    return d


__all__ = [
    "Config",
    "ConfigError",
    "PerceptionConfig",
    "SafetyMargins",
    "apply_overrides",
    "as_dict",
    "dumps",
    "load",
    "loads",
]
