import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from debris_twin import risk, volumetry as vol
from debris_twin.config import DEFAULT_CLASSES, MaterialTable, default_wind_scale
from debris_twin.errors import DomainError, MissingDensity
from debris_twin.volumetry import HeightGrid

PLYWOOD = DEFAULT_CLASSES.index("plywood")
MATERIALS = MaterialTable.from_names({"metal_girder": 7850, "portable_toilet": 150,
                                      "pvc_piping": 1400, "plywood": 600,
                                      "metal_piping": 7850}, DEFAULT_CLASSES)
SCALE = default_wind_scale()


def grid(z, classes, gs=0.1):
    z = np.asarray(z, dtype=np.float64)
    classes = np.asarray(classes)
    return HeightGrid((0.0, 0.0), gs, z, classes, (classes > 0).astype(int))


def random_grid(seed, shape=(12, 15)):
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.05, 2.0, size=shape) * (rng.random(shape) < 0.5)
    blocks = rng.integers(1, 6, size=(shape[0] // 3 + 1, shape[1] // 3 + 1))
    classes = np.kron(blocks, np.ones((3, 3), int))[:shape[0], :shape[1]]
    return grid(z, np.where(z > 0, classes, 0), gs=0.05)


def maps_for(g, min_cells=1):
    inst = vol.cluster_instances(g, min_cells)
    return inst, risk.build_risk_maps(g, inst, MATERIALS, SCALE, DEFAULT_CLASSES)


# ---------------------------------------------------------------------------
# kinetic energy
# ---------------------------------------------------------------------------

def test_zero_wind_is_zero_energy():
    assert risk.kinetic_energy(7850, 3.0, 0.0) == 0.0


@pytest.mark.parametrize("rho, volume, speed, expected", [
    (600, 0.1, 50, 75_000.0),
    (7850, 0.01, 70, 192_325.0),
])
def test_hand_evaluated_energy(rho, volume, speed, expected):
    assert risk.kinetic_energy(rho, volume, speed) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("args", [(-1, 1, 1), (1, -1, 1), (1, 1, -1), (0, 1, 1),
                                  (float("nan"), 1, 1), (1, float("inf"), 1)])
def test_invalid_inputs(args):
    with pytest.raises(DomainError):
        risk.kinetic_energy(*args)


# ---------------------------------------------------------------------------
# risk maps
# ---------------------------------------------------------------------------

def test_empty_grid_gives_zero_maps():
    g = grid(np.zeros((4, 4)), np.zeros((4, 4), int))
    inst, maps = maps_for(g)
    assert inst == []
    assert len(maps) == 5
    assert all(not m.ke.any() for m in maps)


def test_single_plywood_cell():
    g = grid([[1.0]], [[PLYWOOD]], gs=0.1)
    _, maps = maps_for(g)
    assert maps[0].speed == 33.0
    assert maps[0].ke[0, 0] == pytest.approx(3267.0, rel=1e-12)


def test_energy_rises_with_category():
    _, maps = maps_for(random_grid(0))
    hot = maps[0].ke > 0
    for lo, hi in zip(maps, maps[1:]):
        assert np.all(hi.ke[hot] > lo.ke[hot])
        assert np.all(hi.ke[~hot] == 0)


def test_missing_density_names_the_class():
    g = grid([[1.0]], [[PLYWOOD]])
    partial = MaterialTable.from_names({"metal_girder": 7850}, DEFAULT_CLASSES)
    with pytest.raises(MissingDensity) as info:
        risk.build_risk_maps(g, [], partial, SCALE, DEFAULT_CLASSES)
    assert "plywood" in str(info.value)


@pytest.mark.parametrize("seed", range(5))
def test_quadratic_law(seed):
    g = random_grid(seed)
    for u in (10.0, 33.0, 70.0):
        ke1 = risk.cell_kinetic_energy(g, MATERIALS, u)
        ke2 = risk.cell_kinetic_energy(g, MATERIALS, 2 * u)
        hot = ke1 > 0
        assert np.allclose(ke2[hot], 4 * ke1[hot], rtol=1e-12, atol=0)


@pytest.mark.parametrize("seed", range(5))
def test_instance_ranking_is_the_same_in_every_category(seed):
    inst, maps = maps_for(random_grid(seed))
    orders = [sorted(m.instance_ke, key=lambda k: (-m.instance_ke[k], k)) for m in maps]
    assert all(o == orders[0] for o in orders)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1e5))
def test_flags_are_nested_across_categories(seed, threshold):
    _, maps = maps_for(random_grid(seed))
    for lo, hi in zip(maps, maps[1:]):
        assert np.all(hi.flagged(threshold) >= lo.flagged(threshold))


@pytest.mark.parametrize("seed", range(5))
def test_instance_energy_is_sum_of_cells(seed):
    inst, maps = maps_for(random_grid(seed))
    for m in maps:
        for i in inst:
            cells = m.ke[i.cells[:, 0], i.cells[:, 1]].sum()
            assert m.instance_ke[i.instance_id] == pytest.approx(cells, rel=1e-9)


def test_no_threshold_flags_nothing():
    _, maps = maps_for(random_grid(1))
    assert not maps[-1].flagged(None).any()


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def read_flags(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_all_zero_map_renders_transparent(tmp_path):
    g = grid(np.zeros((3, 4)), np.zeros((3, 4), int))
    _, maps = maps_for(g)
    flags = risk.render_heatmap(maps[0], 0.0, tmp_path / "risk_cat1.png")
    img = np.asarray(Image.open(tmp_path / "risk_cat1.png"))
    assert img.shape == (3 * risk.CELL_PIXELS, 4 * risk.CELL_PIXELS, 4)
    assert not img[..., 3].any()
    assert read_flags(flags) == []


def test_single_hot_cell(tmp_path):
    z = np.zeros((3, 4))
    z[0, 2] = 1.0  # southern row -> bottom of the north-up image
    g = grid(z, np.where(z > 0, PLYWOOD, 0))
    _, maps = maps_for(g)
    flags = risk.render_heatmap(maps[0], 100.0, tmp_path / "risk_cat1.png",
                                class_table=DEFAULT_CLASSES)
    img = np.asarray(Image.open(tmp_path / "risk_cat1.png"))
    k = risk.CELL_PIXELS
    alpha = img[..., 3] > 0
    assert alpha.sum() == k * k
    assert alpha[2 * k:3 * k, 2 * k:3 * k].all()
    rows = read_flags(flags)
    assert len(rows) == 1
    assert (rows[0]["row"], rows[0]["col"], rows[0]["class_name"]) == ("0", "2", "plywood")
    assert float(rows[0]["ke_j"]) == pytest.approx(3267.0)


def test_rendering_is_byte_identical(tmp_path):
    _, maps = maps_for(random_grid(3))
    rng = risk.global_log_range(maps)
    for name in ("a", "b"):
        for m in maps:
            risk.render_heatmap(m, 50.0, tmp_path / name / f"risk_cat{m.category}.png",
                                log_range=rng, class_table=DEFAULT_CLASSES)
    for m in maps:
        for suffix in (".png", "_flags.csv"):
            a = (tmp_path / "a" / f"risk_cat{m.category}{suffix}").read_bytes()
            b = (tmp_path / "b" / f"risk_cat{m.category}{suffix}").read_bytes()
            assert a == b


def test_shared_colour_scale_across_categories():
    _, maps = maps_for(random_grid(2))
    rng = risk.global_log_range(maps)
    first = risk.heatmap_rgba(maps[0], rng)
    last = risk.heatmap_rgba(maps[-1], rng)
    # same cell, higher category -> different colour on a shared scale
    hot = first[..., 3] > 0
    assert np.any(first[hot] != last[hot])
    # with per-map scaling the two would be identical
    assert np.array_equal(risk.heatmap_rgba(maps[0]), risk.heatmap_rgba(maps[-1]))
