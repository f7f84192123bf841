"""Line-based scenario configuration: ``section.key = value`` with ``#`` comments."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any

KINDS = (
    "density", "first_variation", "monotone_profile", "excess", "cone_classify",
    "neumann_solve", "minimize", "barrier_slide", "decay", "harnack",
)
VARIFOLDS = ("model_cone", "triple_junction", "doubled_half_plane", "crossed_planes", "mass_deleted_cone", "solver")


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, angle, str, enum, bool, floats, angles, points
    default: Any
    low: float | None = None
    high: float | None = None
    choices: tuple = ()
    open_low: bool = False
    open_high: bool = False
    scalable: bool = False  # multiplied by --tolerance-scale
    doc: str = ""


_PI = math.pi
SCHEMA: dict[str, Field] = {
    "scenario.kind": Field("enum", None, choices=KINDS, doc="experiment to run"),
    "scenario.name": Field("str", "", doc="output subdirectory (defaults to the file stem)"),
    "scenario.seed": Field("int", 0, low=0, doc="seed for random choices"),
    "geometry.n": Field("int", 2, choices=(1, 2), doc="varifold dimension"),
    "geometry.theta": Field("angle", _PI / 3, 0.0, _PI, open_low=True, open_high=True),
    "geometry.thetas": Field("angles", [_PI / 6, _PI / 4, _PI / 3, _PI / 2], 0.0, _PI, open_low=True, open_high=True),
    "geometry.h": Field("float", 1 / 32, 0.0, 0.5, open_low=True, doc="mesh or grid spacing"),
    "geometry.h_values": Field("floats", [1 / 32, 1 / 64, 1 / 128], 0.0, 0.5, open_low=True),
    "geometry.radius": Field("float", 0.5, 0.0, 2.0, open_low=True, doc="domain radius of solver grids"),
    "geometry.varifold": Field("enum", "model_cone", choices=VARIFOLDS),
    "geometry.s_values": Field("floats", [0.2, 0.1, 0.05, 0.025], 0.0, 1.0),
    "geometry.tilts": Field("angles", [0.1, 0.2, 0.4], 0.0, _PI / 2),
    "fields.beta": Field("angle", _PI / 3, 0.0, _PI, open_low=True, open_high=True, doc="contact angle"),
    "fields.beta_kind": Field("enum", "constant", choices=("constant", "oscillating")),
    "fields.beta_amplitude": Field("float", 0.2, 0.0, 1.0),
    "fields.beta_frequency": Field("float", 40.0, 0.0, 1000.0),
    "fields.metric": Field("enum", "euclidean", choices=("euclidean", "conformal_bump", "linear_shear")),
    "fields.metric_amplitude": Field("float", 0.05, -0.45, 0.45),
    "fields.h": Field("float", 0.0, -10.0, 10.0, doc="prescribed mean curvature"),
    "fields.lambda": Field("float", 0.0, 0.0, 10.0, doc="curvature bound in monotone quantities"),
    "experiment.radii": Field("floats", [0.25, 0.5, 1.0], 0.0, 1.0, open_low=True),
    "experiment.fields": Field("int", 10, 1, 100, doc="number of tangential bump fields"),
    "experiment.rotations": Field("int", 4, 1, 100),
    "experiment.gammas": Field("floats", [1 / 2, 1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 100, 1 / 200], 0.0, 1.0,
                               open_low=True, open_high=True),
    "experiment.solution": Field("enum", "cosh_cos", choices=("quadratic", "cosh_cos")),
    "experiment.expect": Field("enum", "auto", choices=("auto", "classified", "rejected")),
    "solver.data": Field("enum", "bump", choices=("flat", "bump", "cosine")),
    "solver.eps": Field("float", 0.1, -0.5, 0.5, doc="amplitude of the Dirichlet perturbation"),
    "solver.max_iter": Field("int", 200, 1, 10000),
    "barrier.eta": Field("floats", [0.01, 0.2], 0.0, 1.0, open_low=True),
    "barrier.r0": Field("float", 0.125, 0.0, 0.5, open_low=True, open_high=True),
    "barrier.centers": Field("points", [[0.0, 0.0]], -1.0, 1.0, doc="x_1:x_2 barrier centres, x_1 <= 0"),
    "tolerances.density": Field("float", 1e-3, 0.0, 1.0, open_low=True, scalable=True),
    "tolerances.first_variation": Field("float", 5.0, 0.0, 1e3, open_low=True, scalable=True, doc="multiple of h"),
    "tolerances.monotone": Field("float", 5.0, 0.0, 1e3, scalable=True, doc="multiple of h"),
    "tolerances.distance": Field("float", 1e-2, 0.0, 1.0, open_low=True, scalable=True),
    "tolerances.cone": Field("float", 1e-6, 0.0, 1.0, open_low=True, scalable=True),
    "tolerances.slope": Field("float", 0.2, 0.0, 2.0, open_low=True, scalable=True, doc="allowed |order - 2|"),
    "tolerances.el": Field("float", 1e-6, 0.0, 1.0, open_low=True, scalable=True),
    "tolerances.angle_deg": Field("float", 2.0, 0.0, 90.0, open_low=True, scalable=True),
    "tolerances.principle": Field("float", 2.0, 0.0, 1e3, scalable=True, doc="multiple of h"),
    "tolerances.decay_exponent": Field("float", 1.4, 0.0, 5.0),
    "tolerances.gamma": Field("float", 0.01, 0.0, 1.0, open_low=True),
    "output.csv": Field("bool", True),
    "output.svg": Field("bool", True),
    "output.mesh": Field("bool", False),
}

_ANGLE = re.compile(r"^\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists (line, key, reason)."""

    def __init__(self, errors: list[tuple[int, str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"line {ln}: {key}: {why}" if ln else f"{key}: {why}" for ln, key, why in errors))


@dataclass(eq=True)
class ScenarioConfig:
    values: dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.values["scenario.kind"]

    @property
    def name(self) -> str:
        return self.values["scenario.name"]

    def __getitem__(self, key: str):
        return self.values[key]

    def tolerance(self, key: str, scale: float = 1.0) -> float:
        f = SCHEMA[f"tolerances.{key}"]
        val = self.values[f"tolerances.{key}"]
        return val * scale if f.scalable else val


def _parse_number(text: str, angle: bool) -> float:
    text = text.strip()
    if angle:
        m = _ANGLE.match(text)
        if m:
            coef = float(m.group(1)) if m.group(1) else 1.0
            div = float(m.group(2)) if m.group(2) else 1.0
            return coef * math.pi / div
    if "/" in text:
        a, b = text.split("/", 1)
        return float(a) / float(b)
    return float(text)


def _convert(f: Field, raw: str):
    raw = raw.strip()
    if f.kind == "int":
        return int(raw)
    if f.kind in ("float", "angle"):
        return _parse_number(raw, f.kind == "angle")
    if f.kind in ("floats", "angles"):
        if not raw:
            raise ValueError("empty list")
        return [_parse_number(p, f.kind == "angles") for p in raw.split(",")]
    if f.kind == "points":
        pts = []
        for p in raw.split(","):
            pts.append([_parse_number(c, False) for c in p.split(":")])
        return pts
    if f.kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def _range_text(f: Field) -> str:
    lo = "-inf" if f.low is None else f"{f.low:g}"
    hi = "inf" if f.high is None else f"{f.high:g}"
    return f"{'(' if f.open_low else '['}{lo}, {hi}{')' if f.open_high else ']'}"


def _range_error(f: Field, value) -> str | None:
    items = value if isinstance(value, list) else [value]
    flat = []
    for it in items:
        flat.extend(it if isinstance(it, list) else [it])
    if f.choices and any(v not in f.choices for v in flat):
        return f"must be one of {', '.join(map(str, f.choices))}"
    for v in flat:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            continue
        if not math.isfinite(v):
            return "must be finite"
        if f.low is not None and (v < f.low or (f.open_low and v == f.low)):
            return f"{v!r} below the allowed range {_range_text(f)}"
        if f.high is not None and (v > f.high or (f.open_high and v == f.high)):
            return f"{v!r} above the allowed range {_range_text(f)}"
    return None


def parse_config(text: str, default_name: str = "scenario") -> ScenarioConfig:
    """Parse and validate; raises ConfigError listing every problem found."""
    errors: list[tuple[int, str, str]] = []
    seen: dict[str, int] = {}
    values: dict[str, Any] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append((ln, body, "expected 'section.key = value'"))
            continue
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            errors.append((ln, key, "unknown key"))
            continue
        if key in seen:
            errors.append((ln, key, f"duplicate key (first set on line {seen[key]})"))
            continue
        seen[key] = ln
        f = SCHEMA[key]
        try:
            val = _convert(f, raw)
        except (ValueError, ZeroDivisionError) as exc:
            errors.append((ln, key, f"cannot parse {raw!r}: {exc}"))
            continue
        why = _range_error(f, val)
        if why:
            errors.append((ln, key, why))
            continue
        values[key] = val
    if "scenario.kind" not in values and not any(k == "scenario.kind" for _, k, _ in errors):
        errors.append((0, "scenario.kind", "missing required key"))
    if errors:
        raise ConfigError(errors)
    for key, f in SCHEMA.items():
        values.setdefault(key, f.default)
    if not values["scenario.name"]:
        values["scenario.name"] = default_name
    _cross_checks(values)
    return ScenarioConfig(values)


def _cross_checks(values: dict[str, Any]) -> None:
    errors = []
    if values["scenario.kind"] == "barrier_slide":
        if any(len(p) != values["geometry.n"] for p in values["barrier.centers"]):
            errors.append((0, "barrier.centers", "each centre needs n coordinates"))
        elif any(p[0] > 0 for p in values["barrier.centers"]):
            errors.append((0, "barrier.centers", "centres must satisfy x_1 <= 0"))
    radii = values["experiment.radii"]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        errors.append((0, "experiment.radii", "radii must be strictly increasing"))
    if errors:
        raise ConfigError(errors)


def _format(f: Field, value) -> str:
    if f.kind in ("float", "angle"):
        return repr(float(value))
    if f.kind in ("floats", "angles"):
        return ", ".join(repr(float(v)) for v in value)
    if f.kind == "points":
        return ", ".join(":".join(repr(float(c)) for c in p) for p in value)
    if f.kind == "bool":
        return "true" if value else "false"
    return str(value)


def serialize(cfg: ScenarioConfig) -> str:
    """Canonical text with every key spelled out; parsing it gives back an equal config."""
    return "".join(f"{key} = {_format(SCHEMA[key], cfg.values[key])}\n" for key in SCHEMA)
