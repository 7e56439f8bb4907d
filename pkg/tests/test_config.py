import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dichotomy import config as cfgmod
from dichotomy.config import ConfigError, parse_config, serialize

MINIMAL = """
[model]
preset = "free"

[grid]
min = -1.0
max = 1.0
step = 0.5
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.model.l == 1 and cfg.model.preset == "free"
    assert cfg.grid_points() == [-1.0, -0.5, 0.0, 0.5, 1.0]
    assert cfg.resolutions.base == 64 and cfg.resolutions.sphere_samples == 512
    assert cfg.resolutions.growth_N == 256
    assert cfg.methods.enabled() == ["growth", "certify", "bounded_orbit", "truncation"]
    assert cfg.output.format == "csv"
    assert cfg.basepoint() == (0.0,)


def test_step_zero_names_the_field():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL.replace("step = 0.5", "step = 0"))
    assert err.value.field == "grid.step"
    assert "grid.step" in str(err.value)


@pytest.mark.parametrize("text, field", [
    (MINIMAL + "\n[grid2]\n", "grid2"),
    (MINIMAL.replace("max = 1.0", "max = 1.0\nmaxx = 2"), "grid.maxx"),
    (MINIMAL.replace("max = 1.0", "max = -2.0"), "grid.max"),
    (MINIMAL.replace('preset = "free"', 'preset = "nope"'), "model.preset"),
    (MINIMAL.replace('preset = "free"', 'preset = "free"\namplitude = 1'), "model.amplitude"),
    (MINIMAL + "\n[methods]\ngrowth = 1\n", "methods.growth"),
    (MINIMAL + "\n[resolutions]\nbase = 2.5\n", "resolutions.base"),
    (MINIMAL + "\n[resolutions]\ngrowth_N = 8\n", "resolutions.growth_N"),
    (MINIMAL + "\n[thresholds]\nbulk_weight = 0\n", "thresholds.bulk_weight"),
    (MINIMAL + "\n[thresholds]\nherglotz_ladder = [1e-3, 1e-2]\n", "thresholds.herglotz_ladder"),
    (MINIMAL + "\n[output]\nformat = \"xml\"\n", "output.format"),
    (MINIMAL + "\n[methods]\nmonodromy = true\n", "methods.monodromy"),
    (MINIMAL + "\n[base]\nkind = \"cycle\"\n", "base.period"),
    (MINIMAL + "\n[methods]\ngrowth = false\ncertify = false\nbounded_orbit = false\ntruncation = false\n",
     "methods"),
])
def test_semantic_errors_name_fields(text, field):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.field == field


def test_missing_sections():
    with pytest.raises(ConfigError) as err:
        parse_config("[model]\npreset = \"free\"\n")
    assert err.value.field == "grid"


def test_malformed_toml_reports_position():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[model]\npreset = \"free\"\nx = = 1\n")


def test_non_finite_number():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL.replace("min = -1.0", "min = nan"))
    assert err.value.field == "grid.min"


def test_block_preset_infers_size():
    cfg = parse_config(MINIMAL.replace('preset = "free"', 'preset = "constant_block"\nV0 = [[0, 0], [0, 5]]'))
    assert cfg.model.l == 2
    f = cfg.family()
    assert f.l == 2 and f.V((0.0,))[1, 1] == 5.0
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL.replace('preset = "free"', 'preset = "constant_block"\nV0 = [[0, 0, 1], [0, 5, 1]]'))
    assert err.value.field == "model.V0"


def test_periodic_preset_builds_its_cycle():
    cfg = parse_config(MINIMAL.replace('preset = "free"', 'preset = "periodic"\nD = [1, 1]\nV = [0, 1.5]'))
    assert cfg.base.kind == "cycle" and cfg.base.period == 2
    assert cfg.basepoint() == 0
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL.replace('preset = "free"', 'preset = "periodic"\nD = [1, 1]\nV = [0, 1.5]')
                     + "\n[base]\nkind = \"rotation\"\n")
    assert err.value.field == "base"


def test_round_trip_is_identity_on_canonical_form():
    cfg = parse_config(MINIMAL)
    text = serialize(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize(again) == text
    assert cfgmod.config_hash(again) == cfgmod.config_hash(cfg)


def test_override_revalidates():
    cfg = parse_config(MINIMAL)
    assert cfgmod.override(cfg, "grid", step=0.25).grid.step == 0.25
    assert cfgmod.override(cfg, "grid", step=None) == cfg
    with pytest.raises(ConfigError):
        cfgmod.override(cfg, "grid", step=-1.0)


def test_model_hash_ignores_grid():
    a = parse_config(MINIMAL)
    b = cfgmod.override(a, "grid", max=2.0)
    assert cfgmod.model_hash(a) == cfgmod.model_hash(b)
    assert cfgmod.config_hash(a) != cfgmod.config_hash(b)
    assert len(cfgmod.model_hash(a)) == 16


def test_grid_count_is_robust_to_rounding():
    g = cfgmod.GridConfig(min=-3.0, max=7.99, step=0.01)
    pts = cfgmod.grid_points(g)
    assert len(pts) == 1100 and pts[-1] == 7.99
    assert len(cfgmod.grid_points(cfgmod.GridConfig(-3.0, 3.0, 0.01))) == 601


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        cfgmod.load_config(tmp_path / "absent.toml")


finite = st.floats(-50, 50, allow_nan=False).map(lambda v: round(v, 6))


@settings(max_examples=60, deadline=None)
@given(finite, st.floats(0.01, 20), st.floats(1e-3, 1.0), st.sampled_from(["free", "cosine", "block"]),
       st.booleans(), st.integers(1, 512), st.floats(1e-3, 0.5))
def test_round_trip_property(lo, width, step, preset, herglotz, base, gap):
    model = {"free": 'preset = "free"\nl = 2', "cosine": 'preset = "cosine"\namplitude = 1.25\nphase = 0.1',
             "block": 'preset = "constant_block"\nV0 = [[1.0, 0.5], [0.5, -2.0]]'}[preset]
    text = (f"[model]\n{model}\n[grid]\nmin = {lo!r}\nmax = {lo + width!r}\nstep = {step!r}\n"
            f"[methods]\nherglotz = {str(herglotz).lower()}\n[resolutions]\nbase = {base}\n"
            f"[thresholds]\ngrowth_gap = {gap!r}\n")
    cfg = parse_config(text)
    canon = serialize(cfg)
    assert serialize(parse_config(canon)) == canon
    assert parse_config(canon) == cfg
    assert math.isclose(cfg.grid.step, step)
