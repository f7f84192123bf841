from __future__ import annotations

import math

import pytest

from capillary_lab.cli import preset_names, preset_text
from capillary_lab.config import SCHEMA, ConfigError, parse_config, serialize


def test_minimal_config_takes_defaults():
    cfg = parse_config("scenario.kind = density\n", "demo")
    assert cfg.kind == "density"
    assert cfg.name == "demo"
    for key, f in SCHEMA.items():
        if key not in ("scenario.kind", "scenario.name"):
            assert cfg[key] == f.default


@pytest.mark.parametrize("text, value", [
    ("pi/3", math.pi / 3), ("2pi/3", 2 * math.pi / 3), ("0.5*pi", math.pi / 2), ("pi", None), ("1.0", 1.0),
])
def test_angle_syntax(text, value):
    src = f"scenario.kind = density\nfields.beta = {text}\n"
    if value is None:
        with pytest.raises(ConfigError):
            parse_config(src)
    else:
        assert parse_config(src)["fields.beta"] == pytest.approx(value, rel=1e-15)


def test_fraction_and_lists():
    cfg = parse_config("scenario.kind = neumann_solve\ngeometry.h_values = 1/32, 1/64\nbarrier.centers = 0:0, -0.1:0.2\n")
    assert cfg["geometry.h_values"] == [1 / 32, 1 / 64]
    assert cfg["barrier.centers"] == [[0.0, 0.0], [-0.1, 0.2]]


def test_out_of_range_theta():
    with pytest.raises(ConfigError) as exc:
        parse_config("scenario.kind = density\ngeometry.theta = 4.0\n")
    (ln, key, why), = exc.value.errors
    assert (ln, key) == (2, "geometry.theta")
    assert "above the allowed range" in why


def test_every_problem_is_reported():
    text = "scenario.kind = density\nfoo.bar = 1\ngeometry.h = 0\ngeometry.h = 0.1\nnonsense\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    got = {(ln, key) for ln, key, _ in exc.value.errors}
    assert got == {(2, "foo.bar"), (3, "geometry.h"), (4, "geometry.h"), (5, "nonsense")}


def test_duplicate_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("scenario.kind = density\ngeometry.h = 0.1\ngeometry.h = 0.2\n")
    assert "duplicate" in exc.value.errors[0][2]


def test_missing_kind():
    with pytest.raises(ConfigError, match="missing required key"):
        parse_config("geometry.h = 0.1\n")


def test_bad_enum_and_bool():
    with pytest.raises(ConfigError) as exc:
        parse_config("scenario.kind = teleport\noutput.csv = maybe\n")
    assert {k for _, k, _ in exc.value.errors} == {"scenario.kind", "output.csv"}


def test_cross_checks():
    with pytest.raises(ConfigError, match="strictly increasing"):
        parse_config("scenario.kind = density\nexperiment.radii = 0.5, 0.25\n")
    with pytest.raises(ConfigError, match="x_1 <= 0"):
        parse_config("scenario.kind = barrier_slide\nbarrier.centers = 0.1:0\n")
    with pytest.raises(ConfigError, match="n coordinates"):
        parse_config("scenario.kind = barrier_slide\nbarrier.centers = 0\n")


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nscenario.kind = excess  # trailing\n")
    assert cfg.kind == "excess"


def test_tolerance_scale_applies_to_scalable_keys_only():
    cfg = parse_config("scenario.kind = decay\n")
    assert cfg.tolerance("angle_deg", 3.0) == 3.0 * cfg["tolerances.angle_deg"]
    assert cfg.tolerance("decay_exponent", 3.0) == cfg["tolerances.decay_exponent"]


@pytest.mark.parametrize("name", preset_names())
def test_round_trip(name):
    cfg = parse_config(preset_text(name), name)
    again = parse_config(serialize(cfg), "other")
    assert again == cfg
    assert serialize(again) == serialize(cfg)
