"""Procedural town tiles for end-to-end pipeline exercises.

Each tile is one mesh holding a terrain slab, a water strip, and a handful
of free-standing objects (buildings, tree canopies, vehicles, boats). Every
object gets its own vertices, so objects never share an edge with the
ground and planar segmentation cannot bleed labels across objects.
"""

from __future__ import annotations

import numpy as np

from .mesh import (
    CLASS_BOAT,
    CLASS_BUILDING,
    CLASS_HIGH_VEGETATION,
    CLASS_TERRAIN,
    CLASS_VEHICLE,
    CLASS_WATER,
    TriangleMesh,
    make_mesh,
    write_ply,
)

TERRAIN_SIZE = 16.0   # m, square ground slab
WATER_WIDTH = 6.0     # m, strip east of the terrain
WATER_Z = -0.6


def _grid(nx, ny, cell, z, origin=(0.0, 0.0)):
    ox, oy = origin
    verts = [(ox + x * cell, oy + y * cell, z)
             for y in range(ny + 1) for x in range(nx + 1)]
    faces = []
    for y in range(ny):
        for x in range(nx):
            a = y * (nx + 1) + x
            b, c = a + 1, a + nx + 1
            faces += [(a, b, c), (b, c + 1, c)]
    return np.array(verts), np.array(faces)


def _open_box(cx, cy, w, d, z0, z1):
    """Box without a bottom: roof faces first, then the four walls."""
    x0, x1 = cx - w / 2, cx + w / 2
    y0, y1 = cy - d / 2, cy + d / 2
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x0, y1, z0], [x1, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x0, y1, z1], [x1, y1, z1]])
    f = np.array([(4, 5, 6), (5, 7, 6),              # roof
                  (0, 1, 4), (1, 5, 4), (2, 6, 3), (3, 6, 7),
                  (0, 4, 2), (2, 4, 6), (1, 3, 5), (3, 7, 5)])
    return v, f


def _sphere(cx, cy, cz, r, nlat=6, nlon=10):
    center = np.array([cx, cy, cz])
    verts = [center + (0, 0, r)]
    for i in range(1, nlat):
        th = np.pi * i / nlat
        for j in range(nlon):
            ph = 2 * np.pi * j / nlon
            verts.append(center + r * np.array(
                [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph),
                 np.cos(th)]))
    verts.append(center - (0, 0, r))
    faces = []
    for j in range(nlon):
        faces.append((0, 1 + j, 1 + (j + 1) % nlon))
    for i in range(nlat - 2):
        a, b = 1 + i * nlon, 1 + (i + 1) * nlon
        for j in range(nlon):
            jn = (j + 1) % nlon
            faces += [(a + j, b + j, a + jn), (a + jn, b + j, b + jn)]
    last = 1 + (nlat - 1) * nlon
    base = last - nlon
    for j in range(nlon):
        faces.append((last, base + (j + 1) % nlon, base + j))
    verts = np.array(verts)
    faces = np.array(faces)
    # enforce outward winding so vertex normals point away from the center
    tri = verts[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    outward = np.einsum("ij,ij->i", n, tri.mean(axis=1) - center) > 0
    faces[~outward] = faces[~outward][:, ::-1]
    return verts, faces


def _jitter(rng, base, spread=12):
    c = np.asarray(base, dtype=np.int64) + rng.integers(-spread, spread + 1, 3)
    return tuple(int(x) for x in np.clip(c, 0, 255))


def make_town_tile(index: int, seed: int = 0) -> TriangleMesh:
    """One deterministic tile; different indexes give different layouts."""
    rng = np.random.default_rng((seed, index))
    parts, labels, colors = [], [], []

    def add(verts, faces, label, color):
        parts.append((verts, faces))
        labels.extend([label] * len(faces))
        colors.extend([color] * len(faces))

    terrain_z = float(rng.uniform(-0.1, 0.1))
    v, f = _grid(8, 8, TERRAIN_SIZE / 8, terrain_z)
    add(v, f, CLASS_TERRAIN, _jitter(rng, (120, 104, 82)))

    v, f = _grid(3, 4, 2.0, WATER_Z, origin=(TERRAIN_SIZE, 0.0))
    add(v, f, CLASS_WATER, _jitter(rng, (36, 84, 176), spread=8))

    for _ in range(int(rng.integers(2, 4))):
        cx, cy = rng.uniform(2.5, TERRAIN_SIZE - 2.5, 2)
        w, d = rng.uniform(2.5, 4.5, 2)
        h = float(rng.uniform(4.0, 8.0))
        v, f = _open_box(cx, cy, w, d, terrain_z, terrain_z + h)
        wall = _jitter(rng, (198, 188, 168))
        roof = _jitter(rng, (96, 96, 100))
        parts.append((v, f))
        labels.extend([CLASS_BUILDING] * len(f))
        colors.extend([roof] * 2 + [wall] * (len(f) - 2))

    for _ in range(int(rng.integers(2, 5))):
        cx, cy = rng.uniform(1.5, TERRAIN_SIZE - 1.5, 2)
        r = float(rng.uniform(0.9, 1.6))
        v, f = _sphere(cx, cy, terrain_z + r + 0.8, r)
        add(v, f, CLASS_HIGH_VEGETATION, _jitter(rng, (46, 138, 52)))

    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(1.0, TERRAIN_SIZE - 1.0, 2)
        w = float(rng.uniform(1.6, 2.4))
        d = float(rng.uniform(0.9, 1.3))
        v, f = _open_box(cx, cy, w, d, terrain_z,
                         terrain_z + float(rng.uniform(0.8, 1.2)))
        add(v, f, CLASS_VEHICLE, _jitter(rng, (178, 34, 34)))

    for _ in range(int(rng.integers(1, 3))):
        cx = float(rng.uniform(TERRAIN_SIZE + 1.5, TERRAIN_SIZE + 4.5))
        cy = float(rng.uniform(1.5, 6.5))
        v, f = _open_box(cx, cy, float(rng.uniform(1.8, 2.6)),
                         float(rng.uniform(0.9, 1.4)),
                         WATER_Z, WATER_Z + float(rng.uniform(0.6, 1.0)))
        add(v, f, CLASS_BOAT, _jitter(rng, (226, 226, 228), spread=6))

    all_v, all_f, offset = [], [], 0
    for verts, faces in parts:
        all_v.append(np.asarray(verts, dtype=np.float64))
        all_f.append(np.asarray(faces, dtype=np.int64) + offset)
        offset += len(verts)
    return make_mesh(np.vstack(all_v), np.vstack(all_f),
                     face_labels=np.array(labels, dtype=np.int32),
                     face_colors=np.array(colors, dtype=np.uint8),
                     tile_id=f"tile_{index:03d}")


def make_town(n_tiles: int, seed: int = 0):
    return [make_town_tile(i, seed=seed) for i in range(n_tiles)]


def write_town(directory, n_tiles: int, seed: int = 0, mode="binary"):
    """Write tile_*.ply files; returns the written paths."""
    import pathlib

    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for mesh in make_town(n_tiles, seed=seed):
        path = directory / f"{mesh.tile_id}.ply"
        path.write_bytes(write_ply(mesh, mode=mode))
        paths.append(path)
    return paths
