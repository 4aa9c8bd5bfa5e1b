"""Surface sampling, density pruning, and color transfer."""

import io

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from meshanno import make_mesh
from meshanno.sampler import (
    SampledPointCloud,
    montecarlo_sample,
    poisson_prune,
    prune_at_radius,
    read_point_cloud,
    sample_mesh,
    transfer_colors,
    write_point_cloud,
)
from scenes import flat_grid


def barycentric_residual(mesh, cloud):
    """Max reconstruction error when points are re-expressed in their face."""
    worst = 0.0
    for i in range(len(cloud)):
        a, b, c = mesh.vertices[mesh.faces[cloud.source_face[i]]]
        m = np.column_stack([b - a, c - a])
        uv, res, _, _ = np.linalg.lstsq(m, cloud.points[i] - a, rcond=None)
        assert uv[0] >= -1e-9 and uv[1] >= -1e-9
        assert uv.sum() <= 1 + 1e-9
        worst = max(worst, np.linalg.norm(a + m @ uv - cloud.points[i]))
    return worst


def test_poisson_count_on_plane():
    mesh = flat_grid(10, 10)  # 100 m2
    cloud = montecarlo_sample(mesh, raw_density=200.0, seed=3)
    expected = 20000
    assert abs(len(cloud) - expected) < 3 * np.sqrt(expected)


def test_points_lie_on_their_faces():
    mesh = make_mesh([(0, 0, 0), (2, 0, 1), (0, 3, 2)], [(0, 1, 2)])
    cloud = montecarlo_sample(mesh, raw_density=200.0, seed=1)
    assert len(cloud) > 100
    assert (cloud.source_face == 0).all()
    assert barycentric_residual(mesh, cloud) <= 1e-6


def test_near_zero_density_no_crash():
    mesh = flat_grid(2, 2)
    cloud = montecarlo_sample(mesh, raw_density=1e-9, seed=0)
    assert len(cloud) == 0
    assert cloud.points.shape == (0, 3)
    with pytest.raises(ValueError, match="positive"):
        montecarlo_sample(mesh, raw_density=0.0)


def test_sampling_deterministic_given_seed():
    mesh = flat_grid(3, 3)
    a = montecarlo_sample(mesh, 50.0, seed=9)
    b = montecarlo_sample(mesh, 50.0, seed=9)
    c = montecarlo_sample(mesh, 50.0, seed=10)
    np.testing.assert_array_equal(a.points, b.points)
    assert len(a) != len(c) or not np.array_equal(a.points, c.points)


def test_labels_follow_area_histogram():
    # 60 m2 of terrain, 40 m2 of building
    labels = [1] * 120 + [3] * 80
    mesh = flat_grid(10, 10, labels=labels)
    cloud = montecarlo_sample(mesh, raw_density=150.0, seed=4)
    frac_terrain = np.mean(cloud.labels == 1)
    assert frac_terrain == pytest.approx(0.6, abs=0.02)
    assert np.mean(cloud.labels == 3) == pytest.approx(0.4, abs=0.02)


def test_prune_reaches_target_density_with_separation():
    mesh = flat_grid(10, 10)  # 100 m2
    cloud = montecarlo_sample(mesh, raw_density=200.0, seed=7)
    pruned = poisson_prune(cloud, target_density=10.0, mesh=mesh)
    density = len(pruned) / mesh.total_area
    assert 9.5 <= density <= 10.5
    assert pruned.min_spacing > 0
    # full O(n^2) audit of the separation guarantee
    assert pdist(pruned.points).min() >= pruned.min_spacing * (1 - 1e-12)


def test_prune_rejects_thin_clouds():
    mesh = flat_grid(4, 4)
    cloud = montecarlo_sample(mesh, raw_density=15.0, seed=0)
    with pytest.raises(ValueError, match="too low"):
        poisson_prune(cloud, target_density=10.0, mesh=mesh)


def test_prune_idempotent_at_fixed_radius():
    mesh = flat_grid(5, 5)
    cloud = montecarlo_sample(mesh, raw_density=80.0, seed=2)
    once = prune_at_radius(cloud, 0.25)
    twice = prune_at_radius(once, 0.25)
    np.testing.assert_array_equal(once.points, twice.points)
    np.testing.assert_array_equal(once.source_face, twice.source_face)


def test_prune_keeps_labels_consistent():
    mesh = flat_grid(6, 6, labels=[2] * 72)
    pruned = poisson_prune(montecarlo_sample(mesh, 120.0, seed=5), 10.0, mesh)
    assert (pruned.labels == 2).all()
    assert (mesh.face_labels[pruned.source_face] == pruned.labels).all()


def test_single_sample_face_floods_color():
    mesh = make_mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)],
                     face_colors=[(200, 10, 30)])
    cloud = transfer_colors(montecarlo_sample(mesh, 500.0, seed=1), mesh)
    assert (cloud.colors == (200, 10, 30)).all()


def test_corner_point_takes_corner_color():
    mesh = make_mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)],
                     vertex_colors=[(255, 0, 0), (0, 255, 0), (0, 0, 255)])
    cloud = SampledPointCloud(
        points=np.array([[0.01, 0.01, 0], [0.95, 0.02, 0], [0.02, 0.9, 0]]),
        colors=np.zeros((3, 3), dtype=np.uint8),
        labels=np.zeros(3, dtype=np.int32),
        source_face=np.zeros(3, dtype=np.int32))
    out = transfer_colors(cloud, mesh)
    np.testing.assert_array_equal(
        out.colors, [(255, 0, 0), (0, 255, 0), (0, 0, 255)])


def test_transfer_matches_brute_force_scan():
    rng = np.random.default_rng(13)
    mesh = flat_grid(4, 4, vertex_colors=rng.integers(0, 256, (25, 3)))
    cloud = montecarlo_sample(mesh, 40.0, seed=6)
    out = transfer_colors(cloud, mesh)
    for i in range(len(cloud)):
        face = cloud.source_face[i]
        sites = mesh.sample_sites(face)
        d = np.linalg.norm(sites - cloud.points[i], axis=1)
        want = mesh.face_colors[face][np.argmin(d)]
        np.testing.assert_array_equal(out.colors[i], want)


@pytest.mark.parametrize("mode", ["ascii", "binary"])
def test_point_cloud_ply_round_trip(mode):
    mesh = flat_grid(3, 3, labels=np.arange(18) % 7)
    cloud = sample_mesh(mesh, target_density=10.0, seed=8)
    buf = io.BytesIO()
    write_point_cloud(cloud, buf, mode=mode)
    back = read_point_cloud(io.BytesIO(buf.getvalue()))
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_array_equal(back.colors, cloud.colors)
    np.testing.assert_array_equal(back.labels, cloud.labels)
    np.testing.assert_array_equal(back.source_face, cloud.source_face)


def test_full_pipeline_on_colored_scene():
    labels = [1] * 9 + [4] * 9
    mesh = flat_grid(3, 3, labels=labels,
                     face_colors=[(90, 90, 90)] * 9 + [(20, 60, 200)] * 9)
    cloud = sample_mesh(mesh, target_density=12.0, seed=11)
    density = len(cloud) / mesh.total_area
    assert 0.95 * 12 <= density <= 1.05 * 12
    water = cloud.labels == 4
    assert (cloud.colors[water] == (20, 60, 200)).all()
    assert (cloud.colors[~water] == (90, 90, 90)).all()
