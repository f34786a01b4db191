import math

import pytest

from meshmcl.config import Config, ConfigError, dump_config, load_config, parse_config


def test_defaults_hold_the_published_constants():
    c = Config()
    assert c.map.tile_size == 100.0
    assert c.mcl.sigma_d == 5.0
    assert (c.mcl.n_init, c.mcl.n_track, c.mcl.n_conv) == (10_000, 100, 1)
    assert c.ground.alpha_thres == pytest.approx(math.radians(30))
    assert c.ground.s_voxel == 1.0
    assert c.ground.z_thres == c.sensor.sensor_height


def test_parse_values_and_degrees():
    c = parse_config("""
        # comment
        sensor.width = 450
        sensor.fov_up_deg = 2.0   # trailing comment
        mcl.alpha = 0.1, 0.2, 0.3, 0.4
        mcl.n_min = none
        mcl.d_max = 40
        paths.map = maps/city.ply
    """)
    assert c.sensor.width == 450
    assert c.sensor.fov_up == pytest.approx(math.radians(2.0))
    assert c.mcl.alpha == (0.1, 0.2, 0.3, 0.4)
    assert c.mcl.n_min is None and c.mcl.d_max == 40.0
    assert c.paths.map == "maps/city.ply"


@pytest.mark.parametrize("text, msg", [
    ("sensor.width 5", r"cfg:1: expected"),
    ("width = 5", r"cfg:1: key 'width' has no section"),
    ("\nbogus.x = 1", r"cfg:2: unknown section"),
    ("sensor.colour = 1", r"cfg:1: unknown key sensor.colour"),
    ("sensor.width = wide", r"cfg:1: sensor.width"),
    ("mcl.n_track = 50000", r"\[mcl\] n_track must not exceed n_init"),
])
def test_errors_name_the_line(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text, "cfg")


def test_round_trip(tmp_path):
    c = parse_config("sensor.height = 32\nmcl.sigma_d = 2.5\npaths.output = out.csv\nmcl.n_min = 7")
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(c))
    assert load_config(p) == c
    assert load_config(p, base=Config()) == c


def test_base_is_overridden_only_where_given():
    base = parse_config("sensor.width = 100")
    c = parse_config("sensor.height = 8", base=base)
    assert (c.sensor.width, c.sensor.height) == (100, 8)
