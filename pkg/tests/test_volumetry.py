import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from debris_twin import synth, volumetry as vol
from debris_twin.errors import DegenerateGeometry
from debris_twin.projection import SemanticCloud
from debris_twin.volumetry import GroundPlane, HeightGrid

from _pipeline import fuse, measure, rotation

FLAT = GroundPlane((0.0, 0.0, 1.0), 0.0, 1.0)


def labeled(points, classes, n_classes=6):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    votes = np.zeros((len(points), n_classes), dtype=np.int64)
    votes[np.arange(len(points)), np.asarray(classes)] = 1
    return SemanticCloud.from_votes(points, votes)


def truth_cloud(fixture):
    """The synthetic cloud labeled with its ground-truth classes."""
    return labeled(fixture.scene.points, fixture.truth.point_class)


def grid(z, classes, gs=1.0):
    z = np.asarray(z, dtype=np.float64)
    classes = np.asarray(classes)
    return HeightGrid((0.0, 0.0), gs, z, classes, (classes > 0).astype(int))


# ---------------------------------------------------------------------------
# ground registration
# ---------------------------------------------------------------------------

def test_floor_with_box(unit_box):
    plane = vol.register_ground(truth_cloud(unit_box))
    assert np.allclose(plane.normal, (0, 0, 1), atol=1e-3)
    assert abs(plane.offset) < 1e-3
    pts = unit_box.scene.points
    floor = unit_box.truth.point_class == 0
    # box side points within the threshold of the floor count as inliers too
    expected = np.mean(floor | (np.abs(pts[:, 2]) <= 0.05))
    assert plane.inlier_fraction == pytest.approx(expected, abs=1e-4)
    assert plane.inlier_fraction >= np.mean(floor)


def test_plane_is_equivariant_under_rigid_motion(unit_box):
    cloud = truth_cloud(unit_box)
    R0 = rotation((0.3, -1.0, 0.5), 0.7)
    t0 = np.array([12.5, -3.0, 40.0])
    moved = labeled(cloud.points @ R0.T + t0, cloud.fused)
    plane = vol.register_ground(moved)
    n_expected = R0 @ np.array([0.0, 0.0, 1.0])
    assert np.allclose(plane.normal, n_expected, atol=1e-3)
    # the transformed floor passes through t0
    assert abs(np.dot(plane.normal, t0) + plane.offset) < 1e-3


def test_three_points_give_exact_plane():
    cloud = labeled([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [0, 0, 0])
    plane = vol.register_ground(cloud)
    assert np.allclose(plane.normal, (0, 0, 1))
    assert plane.offset == pytest.approx(0.0, abs=1e-12)


def test_normal_points_towards_debris():
    floor = [[x, y, 0.0] for x in range(5) for y in range(5)]
    below = labeled(floor + [[2, 2, -1.0]] * 3, [0] * 25 + [4] * 3)
    assert vol.register_ground(below).normal[2] == pytest.approx(-1.0)
    above = labeled(floor + [[2, 2, 1.0]] * 3, [0] * 25 + [4] * 3)
    assert vol.register_ground(above).normal[2] == pytest.approx(1.0)


def test_collinear_points_are_degenerate():
    cloud = labeled([[i, 2 * i, 3 * i] for i in range(10)], [0] * 10)
    with pytest.raises(DegenerateGeometry):
        vol.register_ground(cloud)
    with pytest.raises(DegenerateGeometry):
        vol.register_ground(labeled(np.zeros((5, 3)), [0] * 5))


def test_falls_back_to_all_points_without_background():
    floor = [[x, y, 0.0] for x in range(5) for y in range(5)]
    plane = vol.register_ground(labeled(floor, [2] * 25))
    assert np.allclose(np.abs(plane.normal), (0, 0, 1))


def test_registration_is_seeded(unit_box):
    cloud = truth_cloud(unit_box)
    assert vol.register_ground(cloud, seed=5) == vol.register_ground(cloud, seed=5)


def test_tangent_basis_is_right_handed():
    for n in ((0, 0, 1), (1, 0, 0), (0.6, 0.0, 0.8), (-0.3, 0.4, -0.866)):
        n = np.asarray(n) / np.linalg.norm(n)
        u, v = GroundPlane(tuple(n), 0.0, 1.0).basis()
        assert np.allclose(np.cross(u, v), n)
        assert abs(u @ n) < 1e-12 and abs(v @ n) < 1e-12


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def test_single_point_height():
    floor = [[x, y, 0.0] for x in np.arange(0, 3, 0.5) for y in np.arange(0, 3, 0.5)]
    cloud = labeled(floor + [[1.2, 1.3, 2.0]], [0] * len(floor) + [3])
    g = vol.resample(cloud, FLAT, 0.1)
    assert np.count_nonzero(g.z) == 1
    assert g.z.max() == 2.0


def test_box_top_face():
    # 1 x 1 m top face at height 1, sampled at cell centres of a 0.1 m grid
    rng = np.random.default_rng(0)
    xy = rng.uniform(0.0, 1.0, size=(20_000, 2))
    top = np.column_stack([xy, np.ones(len(xy))])
    g = vol.resample(labeled(top, [4] * len(top)), FLAT, 0.1)
    assert g.shape == (10, 10)
    assert np.all(g.occupied)
    assert np.allclose(g.z, 1.0)
    assert np.all(g.classes == 4)


def test_all_background_grid_is_zero():
    pts = np.random.default_rng(1).uniform(0, 2, size=(100, 3))
    g = vol.resample(labeled(pts, [0] * 100), FLAT, 0.1)
    assert not g.z.any() and not g.occupied.any()


def test_negative_heights_clamp_to_zero():
    g = vol.resample(labeled([[0, 0, -0.5], [0.05, 0.05, -0.2]], [2, 2]), FLAT, 0.1)
    assert np.all(g.z == 0.0)
    assert g.occupied.sum() == 1


def test_min_height_drops_low_points():
    cloud = labeled([[0, 0, 0.005], [0.5, 0.5, 0.3]], [2, 2])
    assert vol.resample(cloud, FLAT, 0.1, min_height=0.01).occupied.sum() == 1
    assert vol.resample(cloud, FLAT, 0.1).occupied.sum() == 2


def test_cell_class_is_majority_with_low_index_tie():
    cloud = labeled([[0.01, 0.01, 1], [0.02, 0.02, 1], [0.03, 0.03, 1],
                     [0.51, 0.01, 1], [0.52, 0.01, 1]], [3, 3, 5, 4, 2])
    g = vol.resample(cloud, FLAT, 0.5)
    assert g.classes[0, 0] == 3
    assert g.classes[0, 1] == 2


def test_resample_threads_agree(unit_box):
    cloud = truth_cloud(unit_box)
    a = vol.resample(cloud, FLAT, 0.05, threads=1)
    b = vol.resample(cloud, FLAT, 0.05, threads=8)
    for name in ("z", "classes", "counts"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------

def test_one_cell_volume():
    assert vol.compute_volume(grid([[2.0]], [[1]], gs=1.0)) == 2.0


def test_hundred_cell_volume():
    g = grid(np.ones((10, 10)), np.ones((10, 10), int), gs=0.1)
    assert vol.compute_volume(g) == pytest.approx(1.0, rel=1e-12)


def test_volume_cell_selection_forms():
    g = grid([[1.0, 2.0], [3.0, 4.0]], [[1, 1], [1, 1]])
    assert vol.compute_volume(g, np.array([[0, 1], [1, 0]])) == 5.0
    assert vol.compute_volume(g, np.array([[True, False], [False, True]])) == 5.0


def test_dense_hemisphere_heightfield():
    # sample the dome surface directly (no projection involved)
    spec = synth.hemisphere_spec()
    dome = spec.primitives[0]
    pts = dome.sample(np.random.default_rng(0), 150_000.0)
    g = vol.resample(labeled(pts, [2] * len(pts)), FLAT, 0.01)
    expected = 2.0 / 3.0 * math.pi * 0.5 ** 3
    assert vol.compute_volume(g) == pytest.approx(expected, rel=0.03)


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def test_diagonal_neighbours_of_different_class():
    g = grid([[1.0, 0.0], [0.0, 1.0]], [[1, 0], [0, 2]])
    inst = vol.cluster_instances(g, min_cells=1)
    assert sorted(i.class_index for i in inst) == [1, 2]


def test_diagonal_neighbours_of_same_class_join():
    g = grid([[1.0, 0.0], [0.0, 1.0]], [[3, 0], [0, 3]])
    assert len(vol.cluster_instances(g, min_cells=1)) == 1


def test_single_cell_instance():
    inst = vol.cluster_instances(grid([[0.5]], [[4]]), min_cells=1)
    assert len(inst) == 1 and inst[0].instance_id == 1 and inst[0].volume == 0.5
    assert vol.cluster_instances(grid([[0.5]], [[4]]), min_cells=4) == []


def test_instances_sorted_by_volume():
    z = np.zeros((3, 9))
    z[:, 0:2] = 1.0
    z[:, 4:7] = 2.0
    classes = np.where(z > 0, 4, 0)
    inst = vol.cluster_instances(grid(z, classes), min_cells=1)
    assert [i.instance_id for i in inst] == [1, 2]
    assert [i.volume for i in inst] == [18.0, 6.0]
    assert inst[0].area == 9.0


def test_two_boxes_match_their_oracles():
    # Boundary cells count at full height, so an axis-aligned a x b x h box
    # measures between a*b*h and (a + GS)(b + GS)h depending on how its
    # faces fall on the grid.
    gs = 0.05
    boxes = ((-2.0, 1.0, 1.0, 0.5), (0.5, 1.0, 1.0, 1.0))
    spec = synth.SceneSpec(
        seed=3, ground_extent=(-3, 3, -3, 3),
        primitives=tuple(synth.Box(4, (x, -0.5, 0.0), (a, b, h))
                         for x, a, b, h in boxes),
        density=4000.0)
    scene = synth.generate(spec, render_masks=False)
    m = measure(truth_cloud(scene), gs)
    assert len(m.instances) == 2
    by_x = sorted(m.instances, key=lambda i: i.centroid[0])
    for inst, (_, a, b, h) in zip(by_x, boxes):
        assert a * b * h * (1 - 1e-6) <= inst.volume <= (a + gs) * (b + gs) * h


def test_box_on_grid_origin_is_exact():
    # the grid starts at the debris bounding box, so a lone axis-aligned box
    # has no partial cells
    spec = synth.SceneSpec(seed=1, ground_extent=(-2, 2, -2, 2),
                           primitives=(synth.Box(3, (-0.3, -0.45, 0.0),
                                                 (0.6, 0.9, 0.4)),),
                           density=6000.0)
    m = measure(truth_cloud(synth.generate(spec, render_masks=False)), 0.05)
    assert m.instances[0].volume == pytest.approx(0.6 * 0.9 * 0.4, rel=1e-6)


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

def random_truth(seed):
    return truth_cloud(synth.generate(synth.random_spec(seed), render_masks=False))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_scale_law(seed):
    cloud = random_truth(seed)
    base = measure(cloud, 0.05)
    big = measure(labeled(cloud.points * 2.0, cloud.fused), 0.1, min_height=0.02,
                  inlier_threshold=0.1)
    assert len(base.instances) == len(big.instances) > 0
    for a, b in zip(base.instances, big.instances):
        assert b.volume == pytest.approx(8.0 * a.volume, rel=1e-6)


@pytest.mark.parametrize("shift", [(3.7, -1.9), (-250.3, 1024.06)])
def test_in_plane_translation_invariance(shift):
    cloud = random_truth(4)
    base = measure(cloud, 0.05)
    moved = measure(labeled(cloud.points + (*shift, 0.0), cloud.fused), 0.05)
    assert [i.volume for i in moved.instances] == pytest.approx(
        [i.volume for i in base.instances], rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-0.5, 3.0),
       st.integers(1, 5))
def test_adding_a_point_never_lowers_a_cell(fx, fy, h, cls):
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 1, 300), rng.uniform(0, 1, 300),
                           rng.uniform(0, 1, 300)])
    pts[0, :2], pts[1, :2] = (0, 0), (1, 1)  # pin the grid frame
    classes = rng.integers(1, 6, 300)
    before = vol.resample(labeled(pts, classes), FLAT, 0.1)
    after = vol.resample(labeled(np.vstack([pts, [fx, fy, h]]),
                                 np.append(classes, cls)), FLAT, 0.1)
    assert after.shape == before.shape
    assert np.all(after.z >= before.z)
    assert vol.compute_volume(after) >= vol.compute_volume(before)


@pytest.mark.parametrize("seed", [0, 5])
def test_instance_volume_conservation(seed):
    m = measure(random_truth(seed), 0.05)
    owned = vol.instance_map(m.grid, m.instances) > 0
    expected = m.grid.cell_size ** 2 * m.grid.z[owned].sum()
    total = sum(i.volume for i in m.instances)
    assert total == pytest.approx(expected, rel=1e-12)
    # per instance the identity is exact
    for inst in m.instances:
        cells = inst.cells
        assert inst.volume == m.grid.cell_size ** 2 * m.grid.z[cells[:, 0],
                                                               cells[:, 1]].sum()


def test_unit_box_exact_at_every_grid_size(unit_box):
    cloud = fuse(unit_box.scene)
    for gs in (0.2, 0.1, 0.05):
        volume = sum(i.volume for i in measure(cloud, gs).instances)
        assert volume == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("angle", [0.3, math.pi / 6, 0.7])
def test_rotated_unit_box_error_shrinks_with_grid_size(unit_box, angle):
    # rotated about the vertical, the box edges cut cells diagonally and the
    # boundary-cell excess is proportional to GS
    cloud = truth_cloud(unit_box)
    R = rotation((0, 0, 1), angle)
    turned = labeled(cloud.points @ R.T, cloud.fused)
    errors = [abs(sum(i.volume for i in measure(turned, gs).instances) - 1.0)
              for gs in (0.2, 0.1, 0.05)]
    assert errors[0] >= errors[1] >= errors[2]


def test_site_volume_counts_small_fragments():
    z = np.zeros((5, 5))
    z[0, 0] = 1.0
    z[2:4, 2:4] = 1.0
    g = grid(z, np.where(z > 0, 2, 0))
    inst = vol.cluster_instances(g, min_cells=4)
    assert len(inst) == 1
    assert vol.site_volume(g) == 5.0
