"""Acceleration structures for nearest-neighbor and vertical-cylinder queries.

Built once over immutable point sets; safe for concurrent reads. Cylinder
membership ignores Z entirely, and all radius tests use a closed ball
(distance <= radius) so boundary cases are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class CylinderQuery:
    """Vertical cylinder of infinite extent: XY center plus radius in meters."""

    center_xy: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"cylinder radius must be > 0, got {self.radius}")


class PointIndex:
    """KD-tree over a fixed 3D point set with XY-cylinder range queries."""

    def __init__(self, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
            raise ValueError("need a non-empty (N, 3) point array")
        self.points = points
        self._tree3 = cKDTree(points)
        self._tree2 = cKDTree(points[:, :2])

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, p) -> tuple:
        """(index, distance) of the closest point; ties -> lowest index."""
        p = np.asarray(p, dtype=np.float64)
        d, i = self._tree3.query(p)
        # re-rank every candidate at the winning distance so equal-distance
        # points always resolve to the lowest insertion index
        cand = self._tree3.query_ball_point(p, d * (1 + 1e-12) + 1e-300)
        cand = np.array(sorted(cand))
        dists = np.linalg.norm(self.points[cand] - p, axis=1)
        best = dists.min()
        return int(cand[dists == best][0]), float(best)

    def knn(self, p, k: int):
        """(indices, distances) of the k closest points, nearest first."""
        d, i = self._tree3.query(np.asarray(p, dtype=np.float64),
                                 k=min(k, len(self.points)))
        return np.atleast_1d(i), np.atleast_1d(d)

    def within_radius_xy(self, query: CylinderQuery) -> np.ndarray:
        """Sorted indices of points with XY distance <= radius of the center."""
        center = np.asarray(query.center_xy, dtype=np.float64)
        # inflate the tree query a hair, then filter with an exact test so the
        # closed-ball contract holds at the boundary
        cand = self._tree2.query_ball_point(center, query.radius * (1 + 1e-9))
        cand = np.array(sorted(cand), dtype=np.int64)
        if len(cand) == 0:
            return cand
        d = np.linalg.norm(self.points[cand, :2] - center, axis=1)
        return cand[d <= query.radius]


def build_point_index(points) -> PointIndex:
    return PointIndex(points)


def segments_in_cylinder(mesh, segments, query: CylinderQuery) -> list:
    """Segment ids with at least one vertex inside the vertical cylinder.

    ``segments`` may be anything exposing a per-face ``assignment`` array, or
    the raw (F,) array itself. Sorted ascending.
    """
    assignment = np.asarray(getattr(segments, "assignment", segments))
    index = getattr(mesh, "_point_index_cache", None)
    if index is None:
        index = PointIndex(mesh.vertices)
        mesh._point_index_cache = index
    hit_vertices = index.within_radius_xy(query)
    ids = set()
    for v in hit_vertices:
        for face in mesh.vertex_faces[int(v)]:
            sid = int(assignment[face])
            if sid >= 0:
                ids.add(sid)
    return sorted(ids)
