"""Triangle meshes with semantic attributes, and PLY / texel-sidecar I/O.

The on-disk interchange format is PLY 1.0 (ascii or binary_little_endian)
with per-face ``label`` (int32) and ``segment_id`` (int32) properties.
Radiometric data is carried as per-face color samples: parsing a PLY with
per-vertex colors yields 3 corner samples per face, a per-face color yields
one sample at the face centroid, and a colorless PLY falls back to a single
neutral gray sample so that every face always has at least one sample.
Dense texel sampling arrives through a plain-text sidecar, one sample per
line: ``face_index r g b`` with optional barycentric site columns
``face_index r g b b0 b1 b2`` and ``#`` comments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from io import BytesIO
from typing import BinaryIO

import numpy as np

from .errors import PlyParseError, SidecarError

CLASS_UNCLASSIFIED = 0
CLASS_TERRAIN = 1
CLASS_HIGH_VEGETATION = 2
CLASS_BUILDING = 3
CLASS_WATER = 4
CLASS_VEHICLE = 5
CLASS_BOAT = 6

CLASS_NAMES = {
    CLASS_UNCLASSIFIED: "unclassified",
    CLASS_TERRAIN: "terrain",
    CLASS_HIGH_VEGETATION: "high_vegetation",
    CLASS_BUILDING: "building",
    CLASS_WATER: "water",
    CLASS_VEHICLE: "vehicle",
    CLASS_BOAT: "boat",
}

# The six real classes; 0 marks ambiguous regions and is excluded from
# training and evaluation.
REAL_CLASSES = (1, 2, 3, 4, 5, 6)

_CENTROID_BARY = np.full((1, 3), 1.0 / 3.0)
_CORNER_BARY = np.eye(3)
_GRAY = np.array([[128, 128, 128]], dtype=np.uint8)


def is_valid_class(label: int) -> bool:
    return 0 <= int(label) <= 6


@dataclass(eq=False)
class TriangleMesh:
    """Indexed triangle mesh with per-face label, segment id and color samples.

    Geometry is immutable by convention; editing code copies the attribute
    arrays it mutates so cached derived quantities stay valid.
    """

    vertices: np.ndarray  # (V, 3) float64, meters, +Z up
    faces: np.ndarray  # (F, 3) int32 vertex indices
    face_labels: np.ndarray  # (F,) int32 in 0..6
    face_segments: np.ndarray  # (F,) int32, -1 = unassigned
    face_colors: list = field(repr=False)  # per face: (k, 3) uint8 RGB samples
    face_color_bary: list = field(repr=False)  # per face: (k, 3) barycentric sites
    tile_id: str = ""

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self) -> None:
        """Check all mesh invariants; raises PlyParseError on violation."""
        v, f = self.n_vertices, self.n_faces
        if self.faces.shape != (f, 3):
            raise PlyParseError("faces must be an (F, 3) index array")
        for name, arr in (("face_labels", self.face_labels),
                          ("face_segments", self.face_segments)):
            if len(arr) != f:
                raise PlyParseError(f"{name} has length {len(arr)}, expected {f}")
        if len(self.face_colors) != f or len(self.face_color_bary) != f:
            raise PlyParseError("color sample lists must match face count")
        for i in range(f):
            tri = self.faces[i]
            if tri.min() < 0 or tri.max() >= v:
                raise PlyParseError(
                    f"face {i} references vertex {int(tri.max())} of {v}")
            if len(set(int(x) for x in tri)) != 3:
                raise PlyParseError(f"face {i} has repeated vertex indices")
            if len(self.face_colors[i]) < 1:
                raise PlyParseError(f"face {i} has no color samples")
        bad = np.flatnonzero(self.face_areas <= 0.0)
        if len(bad):
            raise PlyParseError(f"face {int(bad[0])} is degenerate (zero area)")
        labels = self.face_labels
        if labels.min() < 0 or labels.max() > 6:
            raise PlyParseError("face labels must lie in 0..6")

    @cached_property
    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals from the vertex order as given; no re-orientation."""
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        n = np.cross(b - a, c - a)
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return n / norms

    @cached_property
    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    @cached_property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def face_adjacency(self) -> list:
        """Per-face neighbor lists over shared undirected edges.

        Non-manifold edges (shared by >2 faces) link all incident faces.
        """
        edge_faces: dict = {}
        faces = self.faces
        for i in range(len(faces)):
            a, b, c = (int(faces[i, 0]), int(faces[i, 1]), int(faces[i, 2]))
            for u, w in ((a, b), (b, c), (c, a)):
                key = (u, w) if u < w else (w, u)
                edge_faces.setdefault(key, []).append(i)
        neighbors: list = [set() for _ in range(len(faces))]
        for incident in edge_faces.values():
            if len(incident) < 2:
                continue
            for i in incident:
                neighbors[i].update(incident)
        return [np.array(sorted(s - {i}), dtype=np.int64)
                for i, s in enumerate(neighbors)]

    @cached_property
    def vertex_faces(self) -> list:
        """Per-vertex list of incident face ids."""
        out: list = [[] for _ in range(self.n_vertices)]
        for i, tri in enumerate(self.faces):
            for vid in tri:
                out[int(vid)].append(i)
        return [np.array(ids, dtype=np.int64) for ids in out]

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted average of incident face normals, unit length."""
        n = np.zeros((self.n_vertices, 3))
        w = (self.face_normals.T * self.face_areas).T
        for i, tri in enumerate(self.faces):
            n[tri] += w[i]
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return n / norms

    def sample_sites(self, face: int) -> np.ndarray:
        """World positions of a face's color-sample sites."""
        corners = self.vertices[self.faces[face]]
        return self.face_color_bary[face] @ corners

    def with_attributes(self, labels=None, segments=None) -> "TriangleMesh":
        """Copy sharing geometry but with replaced label/segment arrays."""
        return TriangleMesh(
            vertices=self.vertices,
            faces=self.faces,
            face_labels=np.asarray(labels if labels is not None
                                   else self.face_labels.copy(), dtype=np.int32),
            face_segments=np.asarray(segments if segments is not None
                                     else self.face_segments.copy(), dtype=np.int32),
            face_colors=self.face_colors,
            face_color_bary=self.face_color_bary,
            tile_id=self.tile_id,
        )


def make_mesh(vertices, faces, face_labels=None, face_segments=None,
              face_colors=None, vertex_colors=None, tile_id="") -> TriangleMesh:
    """Build a validated TriangleMesh from arrays.

    ``face_colors`` may be an (F, 3) array (one centroid sample per face) or a
    list of per-face (k, 3) sample arrays; ``vertex_colors`` is a (V, 3) array
    expanded to 3 corner samples per face. With neither, faces get one gray
    sample.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
    f = len(faces)
    if face_labels is None:
        face_labels = np.zeros(f, dtype=np.int32)
    if face_segments is None:
        face_segments = np.full(f, -1, dtype=np.int32)
    colors: list = []
    bary: list = []
    if face_colors is not None and not isinstance(face_colors, list):
        face_colors = [np.asarray(c).reshape(-1, 3) for c in face_colors]
    for i in range(f):
        if face_colors is not None:
            c = np.asarray(face_colors[i], dtype=np.uint8).reshape(-1, 3)
            colors.append(c)
            bary.append(np.repeat(_CENTROID_BARY, len(c), axis=0))
        elif vertex_colors is not None:
            vc = np.asarray(vertex_colors, dtype=np.uint8)
            colors.append(vc[faces[i]])
            bary.append(_CORNER_BARY.copy())
        else:
            colors.append(_GRAY.copy())
            bary.append(_CENTROID_BARY.copy())
    mesh = TriangleMesh(vertices, faces,
                        np.asarray(face_labels, dtype=np.int32),
                        np.asarray(face_segments, dtype=np.int32),
                        colors, bary, tile_id)
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# PLY parsing

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class _Property:
    def __init__(self, name, dtype, is_list=False, count_dtype=None):
        self.name = name
        self.dtype = dtype
        self.is_list = is_list
        self.count_dtype = count_dtype


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.properties: list = []


def _parse_header(stream: BinaryIO):
    magic = stream.readline().strip()
    if magic != b"ply":
        raise PlyParseError("not a PLY stream (missing 'ply' magic)")
    fmt = None
    elements: list = []
    comments: list = []
    while True:
        raw = stream.readline()
        if not raw:
            raise PlyParseError("unexpected end of header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line:
            continue
        parts = line.split()
        kw = parts[0]
        if kw == "format":
            if len(parts) < 3:
                raise PlyParseError(f"malformed format line: {line!r}")
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary"
            else:
                raise PlyParseError(f"unsupported PLY format {parts[1]!r}")
        elif kw in ("comment", "obj_info"):
            comments.append(line.split(None, 1)[1] if len(parts) > 1 else "")
        elif kw == "element":
            if len(parts) != 3:
                raise PlyParseError(f"malformed element line: {line!r}")
            try:
                elements.append(_Element(parts[1], int(parts[2])))
            except ValueError:
                raise PlyParseError(f"bad element count in: {line!r}") from None
        elif kw == "property":
            if not elements:
                raise PlyParseError("property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise PlyParseError(f"malformed list property: {line!r}")
                cdt, idt, name = parts[2], parts[3], parts[4]
                if cdt not in _PLY_TYPES or idt not in _PLY_TYPES:
                    raise PlyParseError(f"unknown property type in: {line!r}")
                elements[-1].properties.append(
                    _Property(name, _PLY_TYPES[idt], True, _PLY_TYPES[cdt]))
            else:
                if len(parts) != 3:
                    raise PlyParseError(f"malformed property line: {line!r}")
                if parts[1] not in _PLY_TYPES:
                    raise PlyParseError(f"unknown property type {parts[1]!r}")
                elements[-1].properties.append(
                    _Property(parts[2], _PLY_TYPES[parts[1]]))
        elif kw == "end_header":
            break
        else:
            raise PlyParseError(f"unexpected header keyword {kw!r}")
    if fmt is None:
        raise PlyParseError("header has no format line")
    return fmt, elements, comments


def _read_elements_ascii(stream, elements):
    data = {}
    for elem in elements:
        scalars = {p.name: [] for p in elem.properties}
        for row in range(elem.count):
            line = stream.readline()
            if not line:
                raise PlyParseError(
                    f"unexpected end of data in element '{elem.name}'")
            tokens = line.split()
            pos = 0
            for p in elem.properties:
                try:
                    if p.is_list:
                        n = int(tokens[pos]); pos += 1
                        vals = [float(t) for t in tokens[pos:pos + n]]
                        if len(vals) != n:
                            raise IndexError
                        pos += n
                        scalars[p.name].append(np.array(vals))
                    else:
                        scalars[p.name].append(float(tokens[pos])); pos += 1
                except (ValueError, IndexError):
                    raise PlyParseError(
                        f"malformed {elem.name} row {row}") from None
        data[elem.name] = {
            p.name: (scalars[p.name] if p.is_list
                     else np.array(scalars[p.name], dtype=np.dtype(p.dtype)))
            for p in elem.properties}
    return data


def _read_elements_binary(stream, elements):
    data = {}
    for elem in elements:
        if not any(p.is_list for p in elem.properties):
            dt = np.dtype([(p.name, "<" + p.dtype) for p in elem.properties])
            buf = stream.read(dt.itemsize * elem.count)
            if len(buf) != dt.itemsize * elem.count:
                raise PlyParseError(
                    f"unexpected end of data in element '{elem.name}'")
            rows = np.frombuffer(buf, dtype=dt)
            data[elem.name] = {p.name: rows[p.name].copy()
                               for p in elem.properties}
            continue
        cols: dict = {p.name: [] for p in elem.properties}
        for row in range(elem.count):
            for p in elem.properties:
                if p.is_list:
                    cdt = np.dtype("<" + p.count_dtype)
                    cbuf = stream.read(cdt.itemsize)
                    if len(cbuf) != cdt.itemsize:
                        raise PlyParseError(
                            f"unexpected end of data in element '{elem.name}'")
                    n = int(np.frombuffer(cbuf, dtype=cdt)[0])
                    idt = np.dtype("<" + p.dtype)
                    vbuf = stream.read(idt.itemsize * n)
                    if len(vbuf) != idt.itemsize * n:
                        raise PlyParseError(
                            f"unexpected end of data in element '{elem.name}'")
                    cols[p.name].append(
                        np.frombuffer(vbuf, dtype=idt).astype(np.float64))
                else:
                    idt = np.dtype("<" + p.dtype)
                    vbuf = stream.read(idt.itemsize)
                    if len(vbuf) != idt.itemsize:
                        raise PlyParseError(
                            f"unexpected end of data in element '{elem.name}'")
                    cols[p.name].append(np.frombuffer(vbuf, dtype=idt)[0])
        data[elem.name] = {
            p.name: (cols[p.name] if p.is_list
                     else np.array(cols[p.name], dtype=np.dtype(p.dtype)))
            for p in elem.properties}
    return data


def _color_triplet(props: dict):
    for names in (("red", "green", "blue"), ("r", "g", "b")):
        if all(n in props for n in names):
            cols = np.stack([np.asarray(props[n], dtype=np.float64)
                             for n in names], axis=1)
            if cols.size and (cols.min() < 0 or cols.max() > 255):
                raise PlyParseError("color channel outside 0-255")
            return cols.astype(np.uint8)
    return None


def parse_ply(data) -> TriangleMesh:
    """Parse a PLY byte stream (or bytes) into a TriangleMesh.

    Faces without a ``label`` property default to 0 (unclassified); without
    ``segment_id`` they default to -1 (unassigned).
    """
    stream = BytesIO(data) if isinstance(data, (bytes, bytearray)) else data
    fmt, elements, comments = _parse_header(stream)
    reader = _read_elements_ascii if fmt == "ascii" else _read_elements_binary
    raw = reader(stream, elements)

    if "vertex" not in raw:
        raise PlyParseError("PLY has no vertex element")
    if "face" not in raw:
        raise PlyParseError("PLY has no face element")
    vp = raw["vertex"]
    for axis in ("x", "y", "z"):
        if axis not in vp:
            raise PlyParseError(f"vertex element lacks '{axis}' property")
    vertices = np.stack([np.asarray(vp[a], dtype=np.float64)
                         for a in ("x", "y", "z")], axis=1)

    fp = raw["face"]
    idx_name = next((n for n in ("vertex_indices", "vertex_index") if n in fp),
                    None)
    if idx_name is None:
        raise PlyParseError("face element lacks vertex_indices")
    rows = fp[idx_name]
    faces = np.zeros((len(rows), 3), dtype=np.int32)
    for i, row in enumerate(rows):
        if len(row) != 3:
            raise PlyParseError(f"face {i} has {len(row)} vertices, expected 3")
        faces[i] = row
    n_faces = len(faces)

    if "label" in fp:
        labels = np.asarray(fp["label"], dtype=np.int32)
    else:
        labels = np.zeros(n_faces, dtype=np.int32)
    if "segment_id" in fp:
        segments = np.asarray(fp["segment_id"], dtype=np.int32)
    else:
        segments = np.full(n_faces, -1, dtype=np.int32)

    face_rgb = _color_triplet(fp)
    vertex_rgb = _color_triplet(vp)
    colors: list = []
    bary: list = []
    for i in range(n_faces):
        if face_rgb is not None:
            colors.append(face_rgb[i:i + 1])
            bary.append(_CENTROID_BARY.copy())
        elif vertex_rgb is not None:
            colors.append(vertex_rgb[faces[i]])
            bary.append(_CORNER_BARY.copy())
        else:
            colors.append(_GRAY.copy())
            bary.append(_CENTROID_BARY.copy())

    tile_id = ""
    for c in comments:
        parts = c.split()
        if len(parts) == 2 and parts[0] == "tile_id":
            tile_id = parts[1]

    mesh = TriangleMesh(vertices, faces, labels, segments, colors, bary,
                        tile_id)
    mesh.validate()
    return mesh


def write_ply(mesh: TriangleMesh, mode: str = "binary") -> bytes:
    """Serialize a mesh to PLY bytes.

    Binary round-trips positions, labels and segment ids exactly; ascii
    positions use shortest-repr floats (also exact for float64). Per-face
    colors are written as the rounded mean of each face's samples.
    """
    if mode not in ("ascii", "binary"):
        raise ValueError(f"mode must be 'ascii' or 'binary', got {mode!r}")
    mean_rgb = np.stack([
        np.clip(np.rint(c.astype(np.float64).mean(axis=0)), 0, 255)
        for c in mesh.face_colors]).astype(np.uint8) if mesh.n_faces else \
        np.zeros((0, 3), dtype=np.uint8)

    out = BytesIO()
    fmt = "ascii 1.0" if mode == "ascii" else "binary_little_endian 1.0"
    out.write(b"ply\n")
    out.write(f"format {fmt}\n".encode())
    if mesh.tile_id:
        out.write(f"comment tile_id {mesh.tile_id}\n".encode())
    out.write(f"element vertex {mesh.n_vertices}\n".encode())
    for axis in ("x", "y", "z"):
        out.write(f"property double {axis}\n".encode())
    out.write(f"element face {mesh.n_faces}\n".encode())
    out.write(b"property list uchar int vertex_indices\n")
    out.write(b"property int label\n")
    out.write(b"property int segment_id\n")
    for ch in ("red", "green", "blue"):
        out.write(f"property uchar {ch}\n".encode())
    out.write(b"end_header\n")

    if mode == "ascii":
        for v in mesh.vertices:
            out.write(f"{float(v[0])!r} {float(v[1])!r} "
                      f"{float(v[2])!r}\n".encode())
        for i in range(mesh.n_faces):
            a, b, c = mesh.faces[i]
            r, g, bl = mean_rgb[i]
            out.write(f"3 {a} {b} {c} {mesh.face_labels[i]} "
                      f"{mesh.face_segments[i]} {r} {g} {bl}\n".encode())
    else:
        out.write(mesh.vertices.astype("<f8").tobytes())
        packer = struct.Struct("<B3iii3B")
        for i in range(mesh.n_faces):
            a, b, c = (int(x) for x in mesh.faces[i])
            out.write(packer.pack(3, a, b, c, int(mesh.face_labels[i]),
                                  int(mesh.face_segments[i]), *mean_rgb[i]))
    return out.getvalue()


def attach_texel_samples(mesh: TriangleMesh, sidecar: bytes) -> TriangleMesh:
    """Replace listed faces' color samples with the sidecar's samples.

    Each non-comment line is ``face_index r g b`` or ``face_index r g b
    b0 b1 b2`` (barycentric sample site). Faces appearing in the sidecar get
    exactly the listed samples; unlisted faces keep their prior samples.
    """
    if isinstance(sidecar, (bytes, bytearray)):
        text = sidecar.decode("utf-8")
    else:
        text = sidecar.read().decode("utf-8")
    new_colors: dict = {}
    new_bary: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) not in (4, 7):
            raise SidecarError(f"line {lineno}: expected 4 or 7 fields")
        try:
            face = int(parts[0])
            rgb = [int(p) for p in parts[1:4]]
        except ValueError:
            raise SidecarError(f"line {lineno}: non-integer field") from None
        if not 0 <= face < mesh.n_faces:
            raise SidecarError(
                f"line {lineno}: face index {face} out of range")
        if any(ch < 0 or ch > 255 for ch in rgb):
            raise SidecarError(f"line {lineno}: channel out of range")
        if len(parts) == 7:
            try:
                b = np.array([float(p) for p in parts[4:7]])
            except ValueError:
                raise SidecarError(
                    f"line {lineno}: bad barycentric field") from None
            if b.min() < -1e-9 or abs(b.sum() - 1.0) > 1e-6:
                raise SidecarError(
                    f"line {lineno}: barycentric coords must be >=0, sum 1")
        else:
            b = _CENTROID_BARY[0]
        new_colors.setdefault(face, []).append(rgb)
        new_bary.setdefault(face, []).append(b)

    colors = list(mesh.face_colors)
    bary = list(mesh.face_color_bary)
    for face, samples in new_colors.items():
        colors[face] = np.array(samples, dtype=np.uint8)
        bary[face] = np.array(new_bary[face], dtype=np.float64)
    return TriangleMesh(mesh.vertices, mesh.faces,
                        mesh.face_labels.copy(), mesh.face_segments.copy(),
                        colors, bary, mesh.tile_id)
