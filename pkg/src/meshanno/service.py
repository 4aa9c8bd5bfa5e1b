"""Stateful annotation sessions and the HTTP API backing the client tool.

A session is event-sourced: every successful edit appends one log entry,
and replaying the log against the session's initial snapshot reproduces
the current labels, segment partition, and confirmation flags. Progress
counts only human-confirmed area; model predictions never advance it.
"""

from __future__ import annotations

import datetime
import json
import os
import pathlib
import struct

import numpy as np

from .errors import SessionLockError
from .forest import ForestModel
from .features import featurize_segments
from .mesh import TriangleMesh, parse_ply, write_ply
from .segmentation import (
    SegmentationParams,
    SegmentSet,
    extract_planar_region,
    oversegment,
    split_by_stroke,
)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class AnnotationSession:
    """Working state for one tile: mesh labels, partition, probabilities.

    ``probs`` maps segment id -> length-6 probability vector or None for
    segments without a model prediction (treated as fully confident by the
    probability filter, so they are never flagged for review).
    """

    def __init__(self, tile_id: str, mesh: TriangleMesh,
                 segments: SegmentSet, probs: dict,
                 confirmed=None, log=None, initial=None):
        self.tile_id = tile_id
        self.mesh = mesh
        self.segments = segments
        self.probs = probs
        self.confirmed = np.zeros(mesh.n_faces, dtype=bool) \
            if confirmed is None else np.asarray(confirmed, dtype=bool).copy()
        self.log = list(log) if log else []
        # immutable snapshot the edit log replays against
        self.initial = initial if initial is not None else {
            "labels": mesh.face_labels.copy(),
            "assignment": segments.assignment.copy(),
            "probs": {k: (None if v is None else np.array(v, copy=True))
                      for k, v in probs.items()},
            "confirmed": self.confirmed.copy(),
        }
        self._lock_path = None

    # -- derived state -------------------------------------------------

    @property
    def total_area(self) -> float:
        return float(self.mesh.total_area)

    @property
    def confirmed_area(self) -> float:
        return float(self.mesh.face_areas[self.confirmed].sum())

    @property
    def progress(self) -> float:
        """Confirmed fraction of the area that still needs attention.

        Unconfirmed faces labeled 0 carry no ground truth yet and are
        excluded from the denominator; confirming a face (even as class 0)
        moves it in.
        """
        pending0 = (self.mesh.face_labels == 0) & ~self.confirmed
        denom = self.total_area - float(self.mesh.face_areas[pending0].sum())
        return self.confirmed_area / denom if denom > 0 else 0.0

    def segment_class(self, segment_id: int) -> int:
        """Area-majority label of a segment's faces (current, post-edit)."""
        seg = self.segments.get(segment_id)
        votes = np.zeros(7)
        np.add.at(votes, self.mesh.face_labels[seg.face_ids],
                  self.mesh.face_areas[seg.face_ids])
        return int(np.argmax(votes))

    def check_partition(self) -> None:
        """Audit: segment face lists exactly tile the mesh."""
        seen = np.zeros(self.mesh.n_faces, dtype=np.int32)
        for seg in self.segments:
            np.add.at(seen, seg.face_ids, 1)
            if not np.array_equal(
                    np.flatnonzero(self.segments.assignment == seg.id),
                    seg.face_ids):
                raise AssertionError(f"segment {seg.id} out of sync")
        if not (seen == 1).all():
            raise AssertionError("faces not covered exactly once")

    # -- mutators (log only on success) --------------------------------

    def _rebuild(self, raw_assignment, inherit_from=None) -> int:
        """Re-densify the partition; returns the new max id.

        ``inherit_from`` maps a freshly created id to the id whose
        probability vector it copies.
        """
        self.segments = SegmentSet.from_assignment(self.mesh, raw_assignment)
        ids = {seg.id for seg in self.segments}
        self.probs = {k: v for k, v in self.probs.items() if k in ids}
        if inherit_from:
            for new_id, src in inherit_from.items():
                if new_id in ids and new_id not in self.probs:
                    src_probs = self.probs.get(src)
                    self.probs[new_id] = None if src_probs is None \
                        else np.array(src_probs, copy=True)
        return max(ids)

    def _apply_assign(self, faces: np.ndarray, cls: int) -> list:
        assignment = self.segments.assignment.astype(np.int64).copy()
        target = np.zeros(self.mesh.n_faces, dtype=bool)
        target[faces] = True
        new_ids = []
        next_id = int(assignment.max()) + 1
        inherit = {}
        for sid in np.unique(assignment[faces]):
            seg_faces = np.flatnonzero(assignment == sid)
            hit = seg_faces[target[seg_faces]]
            if len(hit) < len(seg_faces):  # partial: carve a new segment
                assignment[hit] = next_id
                inherit[next_id] = int(sid)
                new_ids.append(next_id)
                next_id += 1
            else:
                new_ids.append(int(sid))
        self.mesh.face_labels[faces] = cls
        self.confirmed[faces] = True
        self._rebuild(assignment, inherit)
        # a confirmed segment is certain: its probability becomes one-hot
        for sid in new_ids:
            if 1 <= cls <= 6:
                onehot = np.zeros(6)
                onehot[cls - 1] = 1.0
                self.probs[sid] = onehot
            else:
                self.probs[sid] = None
        return new_ids

    def _apply_split_planar(self, segment_id, max_distance, max_angle,
                            min_region_faces) -> int:
        region = extract_planar_region(self.mesh, self.segments, segment_id,
                                       max_distance, max_angle,
                                       min_region_faces)
        whole = self.segments.get(segment_id).face_ids
        if len(region) == 0 or len(region) == len(whole):
            return segment_id  # nothing to carve
        assignment = self.segments.assignment.astype(np.int64).copy()
        new_id = int(assignment.max()) + 1
        assignment[region] = new_id
        self._rebuild(assignment, {new_id: segment_id})
        return new_id

    def _apply_split_stroke(self, stroke_faces, max_distance) -> None:
        before = self.probs
        old_assignment = self.segments.assignment.copy()
        new_set = split_by_stroke(self.mesh, self.segments, stroke_faces,
                                  max_distance)
        self.segments = new_set
        new_max = max(seg.id for seg in new_set)
        self.probs = {k: v for k, v in before.items()
                      if k <= new_max}
        if new_max not in self.probs:
            # the carved faces came from one old segment: inherit its probs
            carved = np.flatnonzero(new_set.assignment == new_max)
            parent = int(old_assignment[carved[0]])
            p = before.get(parent)
            self.probs[new_max] = None if p is None else np.array(p,
                                                                  copy=True)

    # -- log helpers ---------------------------------------------------

    def _log(self, op: str, **fields) -> None:
        self.log.append({"op": op, "seq": len(self.log),
                         "timestamp": _now(), **fields})


def _resolve_targets(session, faces, segment_ids) -> np.ndarray:
    out = []
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64)
        if len(faces) and (faces.min() < 0
                           or faces.max() >= session.mesh.n_faces):
            raise ValueError("face id out of range")
        out.append(faces)
    if segment_ids is not None:
        for sid in segment_ids:
            out.append(session.segments.get(int(sid)).face_ids)
    if not out:
        raise ValueError("empty target")
    merged = np.unique(np.concatenate(out))
    if len(merged) == 0:
        raise ValueError("empty target")
    return merged


def assign_label(session: AnnotationSession, cls: int,
                 faces=None, segment_ids=None) -> list:
    """Label faces and/or whole segments; returns the affected segment ids.

    A strict subset of a segment's faces is carved out into a new segment
    so the partition stays intact; class 0 is allowed to mark a region as
    ambiguous.
    """
    cls = int(cls)
    if not 0 <= cls <= 6:
        raise ValueError(f"class {cls} outside 0..6")
    target = _resolve_targets(session, faces, segment_ids)
    new_ids = session._apply_assign(target, cls)
    session._log("assign", faces=[int(f) for f in target], klass=cls)
    return new_ids


def filter_segments(session: AnnotationSession, prob_max: float = 1.0,
                    area_min: float = 0.0, area_max: float = float("inf"),
                    cls: int = None) -> list:
    """Segment ids whose top-class probability is at most prob_max and
    whose area lies in [area_min, area_max]; optionally one class only."""
    if not 0 <= prob_max <= 1:
        raise ValueError("prob_max outside [0, 1]")
    if area_min < 0 or area_max < area_min:
        raise ValueError("invalid area range")
    if cls is not None and not 0 <= int(cls) <= 6:
        raise ValueError(f"class {cls} outside 0..6")
    out = []
    for seg in session.segments:
        p = session.probs.get(seg.id)
        top = 1.0 if p is None else float(np.max(p))
        if top > prob_max:
            continue
        if not area_min <= seg.area <= area_max:
            continue
        if cls is not None and session.segment_class(seg.id) != int(cls):
            continue
        out.append(seg.id)
    return out


def split_segment_planar(session: AnnotationSession, segment_id: int,
                         max_distance: float, max_angle: float,
                         min_region_faces: int = 1) -> int:
    """Carve the most planar region out of a segment; returns its id."""
    new_id = session._apply_split_planar(int(segment_id), max_distance,
                                         max_angle, min_region_faces)
    session._log("split_planar", segment=int(segment_id),
                 max_distance=float(max_distance),
                 max_angle=float(max_angle),
                 min_region_faces=int(min_region_faces))
    return new_id


def split_by_stroke_service(session: AnnotationSession, stroke_faces,
                            max_distance: float) -> None:
    stroke_faces = np.asarray(stroke_faces, dtype=np.int64)
    if len(stroke_faces) and (stroke_faces.min() < 0 or
                              stroke_faces.max() >= session.mesh.n_faces):
        raise ValueError("face id out of range")
    session._apply_split_stroke(stroke_faces, max_distance)
    session._log("split_stroke", faces=[int(f) for f in stroke_faces],
                 max_distance=float(max_distance))


def replay_session(session: AnnotationSession) -> AnnotationSession:
    """Rebuild state by applying the edit log to the initial snapshot."""
    init = session.initial
    mesh = session.mesh.with_attributes(
        labels=init["labels"].copy(),
        segments=init["assignment"].copy())
    mesh.tile_id = session.tile_id
    fresh = AnnotationSession(
        session.tile_id, mesh,
        SegmentSet.from_assignment(mesh, init["assignment"]),
        {k: (None if v is None else np.array(v, copy=True))
         for k, v in init["probs"].items()},
        confirmed=init["confirmed"])
    for entry in session.log:
        if entry["op"] == "assign":
            fresh._apply_assign(np.asarray(entry["faces"], dtype=np.int64),
                                entry["klass"])
        elif entry["op"] == "split_planar":
            fresh._apply_split_planar(entry["segment"],
                                      entry["max_distance"],
                                      entry["max_angle"],
                                      entry["min_region_faces"])
        elif entry["op"] == "split_stroke":
            fresh._apply_split_stroke(
                np.asarray(entry["faces"], dtype=np.int64),
                entry["max_distance"])
        else:
            raise ValueError(f"unknown op {entry['op']!r} in edit log")
    fresh.log = list(session.log)
    return fresh


def same_state(a: AnnotationSession, b: AnnotationSession) -> bool:
    if not np.array_equal(a.mesh.face_labels, b.mesh.face_labels):
        return False
    if not np.array_equal(a.segments.assignment, b.segments.assignment):
        return False
    if not np.array_equal(a.confirmed, b.confirmed):
        return False
    if set(a.probs) != set(b.probs):
        return False
    for k, v in a.probs.items():
        w = b.probs[k]
        if (v is None) != (w is None):
            return False
        if v is not None and not np.allclose(v, w, atol=0):
            return False
    return True


class SessionStore:
    """Tile directory with one-writer-per-tile lock files.

    A tile lives in ``<root>/<tile_id>.ply``; session state rides along in
    ``<tile_id>.session.json``. Opening takes the lock; ``close`` frees it.
    """

    def __init__(self, root):
        self.root = pathlib.Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sessions: dict = {}

    def tile_ids(self) -> list:
        return sorted(p.stem for p in self.root.glob("*.ply"))

    def _lock(self, tile_id: str) -> pathlib.Path:
        path = self.root / f"{tile_id}.lock"
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise SessionLockError(
                f"tile {tile_id!r} is locked by another session") from None
        os.close(fd)
        return path

    def open(self, tile_id: str, model: ForestModel = None,
             params: SegmentationParams = None) -> AnnotationSession:
        if tile_id in self.sessions:
            return self.sessions[tile_id]
        ply_path = self.root / f"{tile_id}.ply"
        if not ply_path.exists():
            raise FileNotFoundError(f"no tile {tile_id!r} in {self.root}")
        lock = self._lock(tile_id)
        try:
            session = self._load(tile_id, ply_path, model, params)
        except BaseException:
            os.unlink(lock)
            raise
        session._lock_path = lock
        self.sessions[tile_id] = session
        return session

    def _load(self, tile_id, ply_path, model, params):
        mesh = parse_ply(ply_path.read_bytes())
        mesh.tile_id = tile_id
        state_path = self.root / f"{tile_id}.session.json"
        if state_path.exists():
            return _session_from_state(
                tile_id, mesh, json.loads(state_path.read_text()))
        if (mesh.face_segments >= 0).all() and mesh.n_faces:
            segments = SegmentSet.from_assignment(mesh, mesh.face_segments)
        else:
            segments = oversegment(mesh, params or SegmentationParams())
            mesh.face_segments[:] = segments.assignment
        probs = {seg.id: None for seg in segments}
        if model is not None:
            x = featurize_segments(mesh, segments)
            p = model.predict_proba(x)
            ids = sorted(seg.id for seg in segments)
            labels = np.zeros(mesh.n_faces, dtype=np.int32)
            for row, sid in enumerate(ids):
                probs[sid] = p[row]
                labels[segments.get(sid).face_ids] = \
                    int(np.argmax(p[row])) + 1
            mesh.face_labels[:] = labels
        return AnnotationSession(tile_id, mesh, segments, probs)

    def save(self, session: AnnotationSession) -> None:
        if session._lock_path is None or not session._lock_path.exists():
            raise SessionLockError(
                f"session for {session.tile_id!r} does not hold the lock")
        mesh = session.mesh.with_attributes(
            labels=session.mesh.face_labels,
            segments=session.segments.assignment)
        mesh.tile_id = session.tile_id
        ply_path = self.root / f"{session.tile_id}.ply"
        tmp = ply_path.with_suffix(".ply.tmp")
        tmp.write_bytes(write_ply(mesh))
        os.replace(tmp, ply_path)
        state_path = self.root / f"{session.tile_id}.session.json"
        tmp = state_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(_session_state(session)))
        os.replace(tmp, state_path)

    def close(self, session: AnnotationSession) -> None:
        self.sessions.pop(session.tile_id, None)
        if session._lock_path and session._lock_path.exists():
            os.unlink(session._lock_path)
        session._lock_path = None


def _probs_json(probs: dict) -> dict:
    return {str(k): (None if v is None else [float(x) for x in v])
            for k, v in probs.items()}


def _probs_from_json(raw: dict) -> dict:
    return {int(k): (None if v is None else np.array(v, dtype=np.float64))
            for k, v in raw.items()}


def _session_state(session: AnnotationSession) -> dict:
    return {
        "tile_id": session.tile_id,
        "confirmed": [int(i) for i in np.flatnonzero(session.confirmed)],
        "probs": _probs_json(session.probs),
        "log": session.log,
        "initial": {
            "labels": [int(x) for x in session.initial["labels"]],
            "assignment": [int(x) for x in session.initial["assignment"]],
            "probs": _probs_json(session.initial["probs"]),
            "confirmed": [int(i)
                          for i in np.flatnonzero(session.initial["confirmed"])],
        },
    }


def _session_from_state(tile_id, mesh, state) -> AnnotationSession:
    confirmed = np.zeros(mesh.n_faces, dtype=bool)
    confirmed[np.asarray(state["confirmed"], dtype=np.int64)] = True
    init_confirmed = np.zeros(mesh.n_faces, dtype=bool)
    init_confirmed[np.asarray(state["initial"]["confirmed"],
                              dtype=np.int64)] = True
    initial = {
        "labels": np.asarray(state["initial"]["labels"], dtype=np.int32),
        "assignment": np.asarray(state["initial"]["assignment"],
                                 dtype=np.int32),
        "probs": _probs_from_json(state["initial"]["probs"]),
        "confirmed": init_confirmed,
    }
    segments = SegmentSet.from_assignment(mesh, mesh.face_segments)
    return AnnotationSession(tile_id, mesh, segments,
                             _probs_from_json(state["probs"]),
                             confirmed=confirmed, log=state["log"],
                             initial=initial)


# -- HTTP API ----------------------------------------------------------

_BIN_MAGIC = b"MTIL"


def mesh_payload_bytes(session: AnnotationSession) -> bytes:
    """Length-prefixed little-endian binary tile payload.

    Layout: magic b"MTIL", then five blocks, each a uint32 element count
    followed by the payload: positions (float32, 3 per vertex), faces
    (uint32, 3 per face), labels (uint32 per face), segments (uint32 per
    face), confirmed flags (uint32 per face, 0 or 1).
    """
    mesh = session.mesh
    parts = [_BIN_MAGIC]

    def block(count, payload):
        parts.append(struct.pack("<I", count))
        parts.append(payload.tobytes())

    block(mesh.n_vertices, mesh.vertices.astype("<f4"))
    block(mesh.n_faces, mesh.faces.astype("<u4"))
    block(mesh.n_faces, mesh.face_labels.astype("<u4"))
    block(mesh.n_faces, session.segments.assignment.astype("<u4"))
    block(mesh.n_faces, session.confirmed.astype("<u4"))
    return b"".join(parts)


def tile_payload(session: AnnotationSession) -> dict:
    mesh = session.mesh
    return {
        "tile_id": session.tile_id,
        "positions": [float(x) for x in mesh.vertices.ravel()],
        "faces": [int(i) for i in mesh.faces.ravel()],
        "labels": [int(x) for x in mesh.face_labels],
        "segments": [int(x) for x in session.segments.assignment],
        "confirmed": [bool(x) for x in session.confirmed],
        "face_colors": [[int(c) for c in
                         np.asarray(cols, dtype=np.float64).mean(axis=0)]
                        for cols in mesh.face_colors],
        "segment_probs": _probs_json(session.probs),
        "segment_areas": {str(seg.id): float(seg.area)
                          for seg in session.segments},
        "progress": session.progress,
    }


def create_app(store: SessionStore, model: ForestModel = None):
    from fastapi import Body, FastAPI, HTTPException, Response

    app = FastAPI(title="mesh annotation service")

    def get_session(tile_id: str) -> AnnotationSession:
        try:
            return store.open(tile_id, model=model)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except SessionLockError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/tiles")
    def list_tiles():
        return {"tiles": store.tile_ids()}

    @app.get("/tiles/{tile_id}")
    def get_tile(tile_id: str):
        return tile_payload(get_session(tile_id))

    @app.get("/tiles/{tile_id}/mesh.bin")
    def get_tile_binary(tile_id: str):
        data = mesh_payload_bytes(get_session(tile_id))
        return Response(content=data, media_type="application/octet-stream")

    @app.post("/tiles/{tile_id}/label")
    def post_label(tile_id: str, body: dict = Body(...)):
        session = get_session(tile_id)
        try:
            new_ids = assign_label(session, body.get("class"),
                                   faces=body.get("faces"),
                                   segment_ids=body.get("segments"))
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"segments": new_ids, "progress": session.progress}

    @app.post("/tiles/{tile_id}/split_planar")
    def post_split_planar(tile_id: str, body: dict = Body(...)):
        session = get_session(tile_id)
        try:
            new_id = split_segment_planar(
                session, body["segment_id"], body["max_distance"],
                body["max_angle"], body.get("min_region_faces", 1))
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"segment": new_id, "progress": session.progress}

    @app.post("/tiles/{tile_id}/split_stroke")
    def post_split_stroke(tile_id: str, body: dict = Body(...)):
        session = get_session(tile_id)
        try:
            split_by_stroke_service(session, body["faces"],
                                    body["max_distance"])
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"progress": session.progress}

    @app.get("/tiles/{tile_id}/segments")
    def get_segments(tile_id: str, prob_max: float = 1.0,
                     area_min: float = 0.0,
                     area_max: float | None = None,
                     klass: int | None = None):
        session = get_session(tile_id)
        try:
            ids = filter_segments(
                session, prob_max=prob_max, area_min=area_min,
                area_max=float("inf") if area_max is None else area_max,
                cls=klass)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"segments": ids}

    @app.get("/tiles/{tile_id}/progress")
    def get_progress(tile_id: str):
        session = get_session(tile_id)
        return {"progress": session.progress,
                "confirmed_area": session.confirmed_area,
                "total_area": session.total_area}

    @app.post("/tiles/{tile_id}/save")
    def post_save(tile_id: str):
        session = get_session(tile_id)
        try:
            store.save(session)
        except SessionLockError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"saved": True}

    return app
