"""Planar over-segmentation of triangle meshes by region growing.

Faces are grouped into planar segments: seeds are taken in order of
descending face area (ties broken by lowest face id) and regions grow
breadth-first over edge adjacency. A face is admitted when all three of its
vertices lie within ``max_distance`` of the region's current plane and the
angle between its normal and the plane normal — treating n and -n as the
same direction — is at most ``max_angle``. The plane is refit from member
vertices every 32 admissions and once when the region closes. Admission is
judged against the plane current at that moment; faces are not re-tested
after later refits.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

REFIT_INTERVAL = 32
_ANGLE_EPS = 1e-9


@dataclass(frozen=True)
class SegmentationParams:
    min_area: float = 0.0  # m²; segments below this merge into a neighbor
    max_distance: float = 0.5  # m; vertex-to-plane admission threshold
    max_angle: float = 90.0  # degrees; 90 accepts any orientation

    def __post_init__(self):
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")
        if not self.max_distance > 0:
            raise ValueError("max_distance must be > 0")
        if not 0 < self.max_angle <= 180:
            raise ValueError("max_angle must be in (0, 180]")


@dataclass(frozen=True)
class Plane:
    """Plane as unit normal n and offset d with n·x + d = 0."""

    normal: np.ndarray
    offset: float

    def distances(self, points) -> np.ndarray:
        return np.abs(np.asarray(points) @ self.normal + self.offset)


def fit_plane(points) -> Plane:
    """Least-squares plane through a point set (principal-axis fit).

    The normal is the covariance eigenvector of smallest eigenvalue; its sign
    is fixed so the largest-magnitude component is positive.
    """
    pts = np.asarray(points, dtype=np.float64)
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T) if len(pts) > 1 else np.eye(3)
    w, v = np.linalg.eigh(np.atleast_2d(cov))
    n = v[:, 0]
    if n[np.argmax(np.abs(n))] < 0:
        n = -n
    return Plane(n, float(-n @ centroid))


def _angle_ok(face_normal, plane_normal, max_angle_deg) -> bool:
    # n and -n are the same direction: compare arccos(|dot|) in [0, 90]
    d = min(1.0, abs(float(face_normal @ plane_normal)))
    return np.degrees(np.arccos(d)) <= max_angle_deg + _ANGLE_EPS


@dataclass(frozen=True)
class Segment:
    id: int
    face_ids: np.ndarray
    plane: Plane
    area: float
    centroid: np.ndarray  # area-weighted mean of member face centroids


class SegmentSet:
    """Immutable partition of a mesh's faces into planar segments.

    ``assignment`` maps face id -> dense segment id in 0..K-1.
    """

    def __init__(self, assignment: np.ndarray, segments: list):
        self.assignment = assignment
        self.segments = segments

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def get(self, segment_id: int) -> Segment:
        if not 0 <= segment_id < len(self.segments):
            raise KeyError(f"unknown segment id {segment_id}")
        return self.segments[segment_id]

    @classmethod
    def from_assignment(cls, mesh, raw_assignment) -> "SegmentSet":
        """Densify arbitrary segment ids and recompute per-segment metadata.

        Raw ids are renumbered 0..K-1 in sorted order; every face must carry
        a valid (>= 0) raw id.
        """
        raw = np.asarray(raw_assignment)
        if raw.min() < 0:
            raise ValueError("every face needs a segment id >= 0")
        uniq, dense = np.unique(raw, return_inverse=True)
        dense = dense.astype(np.int32)
        areas = mesh.face_areas
        centroids = mesh.face_centroids
        segments = []
        for sid in range(len(uniq)):
            fids = np.flatnonzero(dense == sid)
            verts = np.unique(mesh.faces[fids])
            w = areas[fids]
            segments.append(Segment(
                id=sid,
                face_ids=fids,
                plane=fit_plane(mesh.vertices[verts]),
                area=float(w.sum()),
                centroid=(centroids[fids].T @ w) / w.sum(),
            ))
        return cls(dense, segments)


def _grow_regions(mesh, face_ids, params: SegmentationParams) -> list:
    """Grow planar regions over a face subset; returns face-id arrays."""
    face_ids = np.asarray(face_ids)
    in_subset = np.zeros(mesh.n_faces, dtype=bool)
    in_subset[face_ids] = True
    areas = mesh.face_areas
    normals = mesh.face_normals
    vertices = mesh.vertices
    faces = mesh.faces
    adjacency = mesh.face_adjacency

    order = face_ids[np.lexsort((face_ids, -areas[face_ids]))]
    assigned = np.zeros(mesh.n_faces, dtype=bool)
    regions = []

    for seed in order:
        seed = int(seed)
        if assigned[seed]:
            continue
        plane = fit_plane(vertices[faces[seed]])
        member = [seed]
        assigned[seed] = True
        considered = {seed}
        queue = deque()
        for nb in adjacency[seed]:
            nb = int(nb)
            if in_subset[nb] and not assigned[nb] and nb not in considered:
                considered.add(nb)
                queue.append(nb)
        while queue:
            cand = queue.popleft()
            if assigned[cand]:
                continue
            tri = vertices[faces[cand]]
            if plane.distances(tri).max() > params.max_distance:
                continue
            if not _angle_ok(normals[cand], plane.normal, params.max_angle):
                continue
            member.append(cand)
            assigned[cand] = True
            if len(member) % REFIT_INTERVAL == 0:
                plane = fit_plane(vertices[np.unique(faces[member])])
            for nb in adjacency[cand]:
                nb = int(nb)
                if in_subset[nb] and not assigned[nb] and nb not in considered:
                    considered.add(nb)
                    queue.append(nb)
        regions.append(np.array(sorted(member), dtype=np.int64))
    return regions


def _merge_small_regions(mesh, assignment, min_area):
    """Fold regions below min_area into the neighbor sharing the longest
    boundary; isolated small regions are kept."""
    edge_faces: dict = {}
    for i in range(mesh.n_faces):
        a, b, c = (int(v) for v in mesh.faces[i])
        for u, w in ((a, b), (b, c), (c, a)):
            edge_faces.setdefault((u, w) if u < w else (w, u), []).append(i)

    def region_areas():
        ids = np.unique(assignment)
        return {int(s): float(mesh.face_areas[assignment == s].sum())
                for s in ids}

    while True:
        areas = region_areas()
        small = sorted((a, s) for s, a in areas.items() if a < min_area)
        merged = False
        for _, sid in small:
            boundary: dict = {}
            member = np.flatnonzero(assignment == sid)
            member_set = set(int(f) for f in member)
            for (u, w), incident in edge_faces.items():
                inside = [f for f in incident if f in member_set]
                outside = [f for f in incident if f not in member_set]
                if not inside or not outside:
                    continue
                length = float(np.linalg.norm(mesh.vertices[u]
                                              - mesh.vertices[w]))
                for f in outside:
                    other = int(assignment[f])
                    boundary[other] = boundary.get(other, 0.0) + length
            if not boundary:
                continue  # isolated region: keep
            target = max(boundary.items(), key=lambda kv: (kv[1], -kv[0]))[0]
            assignment[member] = target
            merged = True
            break
        if not merged:
            return assignment


def oversegment(mesh, params: SegmentationParams = None) -> SegmentSet:
    """Partition all mesh faces into planar segments by region growing."""
    if params is None:
        params = SegmentationParams()
    regions = _grow_regions(mesh, np.arange(mesh.n_faces), params)
    assignment = np.full(mesh.n_faces, -1, dtype=np.int64)
    for rid, fids in enumerate(regions):
        assignment[fids] = rid
    if params.min_area > 0:
        assignment = _merge_small_regions(mesh, assignment, params.min_area)
    return SegmentSet.from_assignment(mesh, assignment)


def extract_planar_region(mesh, segments: SegmentSet, segment_id: int,
                          max_distance: float, max_angle: float,
                          min_region_faces: int) -> np.ndarray:
    """Largest planar region inside one segment under the given thresholds.

    Returns the face ids of the largest-area grown region having at least
    ``min_region_faces`` faces, or an empty array if none is big enough.
    """
    seg = segments.get(segment_id)
    params = SegmentationParams(min_area=0.0, max_distance=max_distance,
                                max_angle=max_angle)
    regions = _grow_regions(mesh, seg.face_ids, params)
    best, best_area = np.array([], dtype=np.int64), -1.0
    for fids in regions:
        if len(fids) < min_region_faces:
            continue
        area = float(mesh.face_areas[fids].sum())
        if area > best_area:
            best, best_area = fids, area
    return best


def split_by_stroke(mesh, segments: SegmentSet, stroke_faces,
                    max_distance: float) -> SegmentSet:
    """Split along a user stroke drawn across a two-segment border.

    The stroke must touch exactly two segments. The flatter one (lower mean
    vertex distance to its own plane) is the reference; faces of the other
    segment whose vertices all lie within ``max_distance`` of the reference
    plane are carved out into a new segment.
    """
    stroke_faces = np.asarray(stroke_faces, dtype=np.int64)
    if len(stroke_faces) == 0:
        raise ValueError("empty stroke")
    touched = np.unique(segments.assignment[stroke_faces])
    if len(touched) == 1:
        raise ValueError("stroke lies inside a single segment")
    if len(touched) > 2:
        raise ValueError(f"stroke spans {len(touched)} segments, expected 2")

    def mean_plane_dist(sid):
        seg = segments.get(int(sid))
        verts = np.unique(mesh.faces[seg.face_ids])
        return float(seg.plane.distances(mesh.vertices[verts]).mean())

    d0, d1 = mean_plane_dist(touched[0]), mean_plane_dist(touched[1])
    ref_sid, other_sid = (touched[0], touched[1]) if d0 <= d1 \
        else (touched[1], touched[0])
    ref_plane = segments.get(int(ref_sid)).plane
    other = segments.get(int(other_sid))

    tri_dist = ref_plane.distances(
        mesh.vertices[mesh.faces[other.face_ids]].reshape(-1, 3))
    near = tri_dist.reshape(-1, 3).max(axis=1) <= max_distance
    carved = other.face_ids[near]

    assignment = segments.assignment.astype(np.int64).copy()
    if 0 < len(carved) < len(other.face_ids):
        assignment[carved] = assignment.max() + 1
    return SegmentSet.from_assignment(mesh, assignment)


def upper_bound_labels(mesh, segments: SegmentSet) -> np.ndarray:
    """Per-face labels if every segment took its area-majority truth label.

    Ties resolve to the lower class id. This is the ceiling any per-segment
    classifier can reach for the given segmentation.
    """
    out = np.zeros(mesh.n_faces, dtype=np.int32)
    areas = mesh.face_areas
    labels = mesh.face_labels
    for seg in segments:
        votes = np.zeros(7)
        np.add.at(votes, labels[seg.face_ids], areas[seg.face_ids])
        out[seg.face_ids] = int(np.argmax(votes))  # argmax -> lowest id on tie
    return out
