"""Per-segment shape and radiometry descriptors (44 dimensions).

Fixed layout: [0] linearity, [1] sphericity, [2] change of curvature,
[3] verticality, [4] absolute elevation z_a, [5] relative elevation z_r,
[6-8] multiscale elevations at 10/20/40 m, [9] segment area, [10] triangle
density, [11] interior medial-axis (shrinking-ball) radius, [12-14] mean
H/S/V, [15-17] population variance H/S/V, [18-32] 15 hue bins, [33-37]
5 saturation bins, [38-42] 5 value bins, [43] greenness.

Conventions that matter for reproducibility: covariance is taken over the
segment's deduplicated vertices; hue is linear (no circular statistics) with
achromatic pixels at hue 0; every color sample counts equally; histograms
use right-open bins except the last.
"""

from __future__ import annotations

import csv

import numpy as np

from .spatial import CylinderQuery, PointIndex, segments_in_cylinder

FEATURE_NAMES = (
    ["linearity", "sphericity", "curvature_change", "verticality",
     "elevation_absolute", "elevation_relative",
     "elevation_multiscale_10m", "elevation_multiscale_20m",
     "elevation_multiscale_40m",
     "segment_area", "triangle_density", "inmat_radius",
     "hue_mean", "saturation_mean", "value_mean",
     "hue_variance", "saturation_variance", "value_variance"]
    + [f"hue_hist_{i:02d}" for i in range(15)]
    + [f"saturation_hist_{i}" for i in range(5)]
    + [f"value_hist_{i}" for i in range(5)]
    + ["greenness"]
)
assert len(FEATURE_NAMES) == 44

FEATURE_GROUPS = {
    "linearity": [0],
    "sphericity": [1],
    "curvature": [2],
    "verticality": [3],
    "absolute_elevation": [4],
    "relative_elevation": [5],
    "multiscale_elevations": [6, 7, 8],
    "segment_area": [9],
    "triangle_density": [10],
    "inmat": [11],
    "average_hsv": [12, 13, 14],
    "variance_hsv": [15, 16, 17],
    "hsv_histogram": list(range(18, 43)),
    "greenness": [43],
}

GROUND_VERTICALITY = 0.2  # ground candidate: flatter than this ...
GROUND_MIN_AREA = 1.0  # ... and at least this many m²
RELATIVE_RADIUS = 30.0  # cylinder for the local ground search, m
MULTISCALE_RADII = (10.0, 20.0, 40.0)
MAT_MAX_ITER = 30
# reject ball updates whose two touch points subtend less than this at the
# center: genuine medial touches sit near 180 degrees, while discrete-normal
# noise walks the ball onto same-surface neighbors at well under 90
MAT_MIN_SEPARATION_DEG = 120.0
_DUP_EPS = 1e-9


def rgb_to_hsv(rgb) -> np.ndarray:
    """Vectorized RGB(0-255) -> HSV with H in degrees [0, 360), S/V in [0,1].

    Achromatic pixels get hue 0.
    """
    c = np.asarray(rgb, dtype=np.float64).reshape(-1, 3) / 255.0
    mx = c.max(axis=1)
    mn = c.min(axis=1)
    delta = mx - mn
    h = np.zeros(len(c))
    chroma = delta > 0
    r, g, b = c[:, 0], c[:, 1], c[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        rmax = chroma & (mx == r)
        h[rmax] = 60.0 * (((g - b)[rmax] / delta[rmax]) % 6.0)
        gmax = chroma & (mx == g) & ~rmax
        h[gmax] = 60.0 * ((b - r)[gmax] / delta[gmax] + 2.0)
        bmax = chroma & ~rmax & ~gmax
        h[bmax] = 60.0 * ((r - g)[bmax] / delta[bmax] + 4.0)
    h = np.where(h >= 360.0, h - 360.0, h)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=1)


def eigen_features(points) -> tuple:
    """(linearity, sphericity, curvature_change, verticality) of a point set.

    Eigenvalues come from the singular values of the centered coordinates
    (lambda_i = s_i^2 / n). All four are 0 when every point coincides.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centered = pts - pts.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    lam = (s * s) / len(pts)
    lam = np.sort(lam)[::-1]
    if lam[0] <= 0.0:
        return (0.0, 0.0, 0.0, 0.0)
    linearity = (lam[0] - lam[1]) / lam[0]
    sphericity = lam[2] / lam[0]
    curvature = lam[2] / lam.sum()
    n3 = vt[-1]  # right singular vector of the smallest singular value
    verticality = 1.0 - abs(float(n3[2]) / np.linalg.norm(n3))
    return (float(linearity), float(sphericity), float(curvature),
            float(verticality))


def _nearest_excluding(index: PointIndex, c, p) -> tuple:
    """Closest indexed point to c that is not (a near-duplicate of) p."""
    k = 8
    n = len(index)
    while True:
        ids, dists = index.knn(c, k)
        keep = [(float(d), int(i)) for i, d in zip(ids, dists)
                if np.linalg.norm(index.points[int(i)] - p) >= _DUP_EPS]
        if keep:
            dmin = keep[0][0]
            tied = [i for d, i in keep if d <= dmin * (1 + 1e-12) + 1e-300]
            return min(tied), dmin
        if k >= n:
            return -1, np.inf
        k = min(n, k * 4)


def shrinking_ball_radius(p, n, index: PointIndex, initial_radius: float) -> float:
    """Radius of the interior ball tangent at p shot along -n (n outward).

    Iterates the tangent-ball update r = |p-q|^2 / (2 n.(p-q)) against the
    indexed point set until the nearest point to the center stabilizes, the
    ball contains no closer point, or 30 iterations pass. An update is only
    applied while its touch points p and q keep a wide separation angle at
    the new center; without that guard, slightly tilted discrete vertex
    normals let the ball crawl down same-surface neighbors and the radius
    collapses far below the true interior thickness.
    """
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    r = float(initial_radius)
    prev_q = -1
    min_cos = np.cos(np.radians(MAT_MIN_SEPARATION_DEG))
    for _ in range(MAT_MAX_ITER):
        c = p - r * n
        q, _ = _nearest_excluding(index, c, p)
        if q < 0 or q == prev_q:
            break
        qp = index.points[q]
        if np.linalg.norm(c - qp) >= r * (1 - 1e-9):
            break  # ball already empty: tangent or outside
        denom = float(n @ (p - qp))
        if denom <= 1e-12:
            break  # q on the outward side; ball cannot shrink toward it
        r_new = float((p - qp) @ (p - qp)) / (2.0 * denom)
        c_new = p - r_new * n
        a, b = p - c_new, qp - c_new
        cos_sep = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
        if cos_sep > min_cos:
            break  # near-tangent touch: noise, keep the current radius
        r = r_new
        prev_q = q
    return r


def mat_radius(mesh, segment, index: PointIndex = None,
               initial_radius: float = None) -> float:
    """Mean shrinking-ball radius over a segment's vertices, tile-global.

    Balls are shot inward along the negated vertex normal (area-weighted
    average of incident face normals); the initial radius is half the tile
    bounding diagonal.
    """
    if index is None:
        index = PointIndex(mesh.vertices)
    if initial_radius is None:
        initial_radius = initial_ball_radius(mesh)
    verts = np.unique(mesh.faces[segment.face_ids])
    normals = mesh.vertex_normals
    radii = [shrinking_ball_radius(mesh.vertices[v], normals[v], index,
                                   initial_radius) for v in verts]
    return float(np.mean(radii))


def _xy_diameter(xy) -> float:
    """Exact diameter of a 2D point set (max pairwise distance)."""
    from scipy.spatial import ConvexHull, QhullError
    pts = np.unique(np.asarray(xy, dtype=np.float64), axis=0)
    if len(pts) < 2:
        return 0.0
    if len(pts) > 3:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            # collinear set: spread along the principal direction
            d = pts - pts.mean(axis=0)
            _, _, vt = np.linalg.svd(d, full_matrices=False)
            proj = d @ vt[0]
            return float(proj.max() - proj.min())
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2)).max())


def initial_ball_radius(mesh) -> float:
    """Half the tile's bounding diagonal: sqrt(xy_diameter^2 + z_extent^2)/2.

    Measured from the XY point-set diameter rather than the axis-aligned box
    so that the non-shrinking-ball fallback stays invariant under rotations
    about Z.
    """
    dz = float(mesh.vertices[:, 2].max() - mesh.vertices[:, 2].min())
    return 0.5 * float(np.hypot(_xy_diameter(mesh.vertices[:, :2]), dz))


def color_features(mesh, segment) -> np.ndarray:
    """(mean HSV[3], variance HSV[3], 25 histogram bins, greenness) = 32 dims."""
    samples = np.vstack([mesh.face_colors[int(f)] for f in segment.face_ids])
    hsv = rgb_to_hsv(samples)
    mean = hsv.mean(axis=0)
    var = hsv.var(axis=0)  # population variance, linear hue
    hue_hist, _ = np.histogram(hsv[:, 0], bins=15, range=(0.0, 360.0))
    sat_hist, _ = np.histogram(hsv[:, 1], bins=5, range=(0.0, 1.0))
    val_hist, _ = np.histogram(hsv[:, 2], bins=5, range=(0.0, 1.0))
    hists = [h / h.sum() for h in (hue_hist, sat_hist, val_hist)]
    mean_rgb = samples.astype(np.float64).mean(axis=0)
    greenness = mean_rgb[1] - 0.39 * mean_rgb[0] - 0.61 * mean_rgb[2]
    return np.concatenate([mean, var, *hists, [greenness]])


class FeatureExtractor:
    """Featurizes every segment of one tile against shared tile context.

    Precomputes per-segment vertex sets, eigen features and Z statistics so
    the cross-segment elevation lookups (local ground, multiscale extremes)
    reuse them. Pure reads after construction; safe to featurize segments
    from multiple threads.
    """

    def __init__(self, mesh, segments):
        self.mesh = mesh
        self.segments = segments
        self.index = PointIndex(mesh.vertices)
        self.initial_radius = initial_ball_radius(mesh)
        k = len(segments)
        self.seg_verts = [np.unique(mesh.faces[s.face_ids]) for s in segments]
        self.eigen = np.array([eigen_features(mesh.vertices[v])
                               for v in self.seg_verts])
        z = mesh.vertices[:, 2]
        self.z_mean = np.array([z[v].mean() for v in self.seg_verts])
        self.z_min = np.array([z[v].min() for v in self.seg_verts])
        self.z_max = np.array([z[v].max() for v in self.seg_verts])
        self.areas = np.array([s.area for s in segments])
        self.ground_candidates = np.flatnonzero(
            (self.eigen[:, 3] < GROUND_VERTICALITY)
            & (self.areas >= GROUND_MIN_AREA))

    def _cylinder_segments(self, sid: int, radius: float) -> np.ndarray:
        center = self.segments.get(sid).centroid[:2]
        ids = segments_in_cylinder(self.mesh, self.segments,
                                   CylinderQuery(tuple(center), radius))
        return np.asarray(ids, dtype=np.int64)

    def elevation_features(self, sid: int) -> tuple:
        """(z_a, z_r, z_m10, z_m20, z_m40) for one segment."""
        z_a = float(self.z_mean[sid])
        center = self.segments.get(sid).centroid[:2]

        nearby = self._cylinder_segments(sid, RELATIVE_RADIUS)
        grounds = nearby[np.isin(nearby, self.ground_candidates)]
        if len(grounds):
            local_ground = grounds[np.argmax(self.areas[grounds])]
            z_r_min = float(self.z_min[local_ground])
        else:
            verts = self.index.within_radius_xy(
                CylinderQuery(tuple(center), RELATIVE_RADIUS))
            z_r_min = float(self.mesh.vertices[verts, 2].min()) if len(verts) \
                else float(self.z_min[sid])
        z_r = z_a - z_r_min

        z_m = []
        for radius in MULTISCALE_RADII:
            ids = self._cylinder_segments(sid, radius)
            if len(ids) == 0:
                z_m.append(0.0)
                continue
            lo = float(self.z_min[ids].min())
            hi = float(self.z_max[ids].max())
            if hi == lo:
                z_m.append(0.0)
            else:
                t = np.clip((z_a - lo) / (hi - lo), 0.0, 1.0)
                z_m.append(float(np.sqrt(t)))
        return (z_a, z_r, *z_m)

    def featurize(self, sid: int) -> np.ndarray:
        seg = self.segments.get(sid)
        vec = np.empty(44)
        vec[0:4] = self.eigen[sid]
        vec[4:9] = self.elevation_features(sid)
        vec[9] = seg.area
        vec[10] = len(seg.face_ids) / seg.area
        vec[11] = mat_radius(self.mesh, seg, self.index, self.initial_radius)
        vec[12:44] = color_features(self.mesh, seg)
        return vec

    def featurize_all(self) -> np.ndarray:
        return np.stack([self.featurize(s.id) for s in self.segments])


def featurize_segments(mesh, segments) -> np.ndarray:
    """(K, 44) feature matrix for all segments of one tile."""
    return FeatureExtractor(mesh, segments).featurize_all()


def feature_ablation_mask(names) -> np.ndarray:
    """Boolean length-44 mask with the named feature groups switched off."""
    mask = np.ones(44, dtype=bool)
    for name in names:
        if name not in FEATURE_GROUPS:
            raise KeyError(f"unknown feature group {name!r}")
        mask[FEATURE_GROUPS[name]] = False
    return mask


def write_feature_csv(stream, matrix, segment_ids, tile_id, labels=None):
    """Write one tile's features as CSV: ids and label first, then 44 dims."""
    matrix = np.asarray(matrix)
    writer = csv.writer(stream)
    writer.writerow(["segment_id", "tile_id", "label"] + list(FEATURE_NAMES))
    for row, sid in zip(matrix, segment_ids):
        label = int(labels[sid]) if labels is not None else -1
        writer.writerow([int(sid), tile_id, label]
                        + [repr(float(x)) for x in row])


def read_feature_csv(stream) -> tuple:
    """Inverse of write_feature_csv: (matrix, segment_ids, tile_ids, labels)."""
    reader = csv.reader(stream)
    header = next(reader)
    if header[3:] != list(FEATURE_NAMES):
        raise ValueError("feature CSV header does not match the 44-dim schema")
    sids, tiles, labels, rows = [], [], [], []
    for rec in reader:
        sids.append(int(rec[0]))
        tiles.append(rec[1])
        labels.append(int(rec[2]))
        rows.append([float(x) for x in rec[3:]])
    return (np.array(rows), np.array(sids), tiles, np.array(labels))
