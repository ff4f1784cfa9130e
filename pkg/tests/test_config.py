from pathlib import Path

import pytest

from debris_twin.config import (DEFAULT_CLASSES, DEFAULT_WIND_SPEEDS, PipelineConfig,
                                WindScale, format_config, parse_config_text)
from debris_twin.errors import InvalidConfig

MPH = 0.44704  # m/s


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.class_table == DEFAULT_CLASSES
    assert cfg.downsample == 4 and cfg.grid_size == 0.05 and cfg.min_cells == 4
    assert cfg.risk_threshold is None
    assert cfg.materials()[DEFAULT_CLASSES.index("plywood")] == 600.0


def test_wind_defaults_are_category_lower_bounds():
    # Saffir-Simpson lower bounds: 74, 96, 111, 130, 157 mph
    lower_mph = (74, 96, 111, 130, 157)
    for speed, mph in zip(DEFAULT_WIND_SPEEDS, lower_mph):
        assert speed == pytest.approx(mph * MPH, abs=0.5)
    assert [c for c, _ in WindScale.from_speeds(DEFAULT_WIND_SPEEDS)] == [1, 2, 3, 4, 5]


def test_wind_speeds_must_increase():
    with pytest.raises(InvalidConfig):
        WindScale.from_speeds((33, 33, 50))
    with pytest.raises(InvalidConfig):
        WindScale.from_speeds(())


@pytest.mark.parametrize("text", [
    "[paths]\nbogus = 'x'\n",
    "[nonsense]\n",
    "[volumetry]\ngrid_size = 0\n",
    "[volumetry]\nmin_cells = 0\n",
    "[volumetry]\ngrid_size = 'big'\n",
    "[projection]\ndownsample = 2.5\n",
    "[projection]\neps = -1.0\n",
    "[densities]\nplywood = -5.0\n",
    "[densities]\nunobtainium = 5.0\n",
    "[classes]\nnames = ['a', 'a']\n",
    "[risk]\nthreshold = -1\n",
    "not toml at all [",
])
def test_invalid_configs(text):
    with pytest.raises(InvalidConfig):
        parse_config_text(text)


def test_paths_resolve_against_config_dir():
    cfg = parse_config_text("[paths]\ncameras = 'c.txt'\n", base_dir=Path("/data/site"))
    assert cfg.cameras == Path("/data/site/c.txt")


def test_custom_classes_keep_matching_defaults_only():
    cfg = parse_config_text("[classes]\nnames = ['background', 'plywood', 'rebar']\n"
                            "[densities]\nrebar = 7850.0\n")
    m = cfg.materials()
    assert m[1] == 600.0 and m[2] == 7850.0


def test_format_round_trip(tmp_path):
    cfg = PipelineConfig(cameras=tmp_path / "c.txt", cloud=tmp_path / "p.ply",
                         masks=tmp_path / "m", outdir=tmp_path / "o", eps=0.02,
                         grid_size=0.1, risk_threshold=1e4,
                         wind_speeds=(30.0, 40.0, 60.0))
    back = parse_config_text(format_config(cfg, tmp_path), base_dir=tmp_path)
    assert back == cfg
