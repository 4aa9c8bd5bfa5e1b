"""Annotation sessions: edits, event-sourcing replay, locking, HTTP API."""

import struct

import numpy as np
import pytest

from meshanno import make_mesh, write_ply
from meshanno.errors import SessionLockError
from meshanno.features import featurize_segments
from meshanno.forest import ForestParams, train
from meshanno.segmentation import oversegment
from meshanno.service import (
    SessionStore,
    assign_label,
    create_app,
    filter_segments,
    mesh_payload_bytes,
    replay_session,
    same_state,
    split_by_stroke_service,
    split_segment_planar,
    tile_payload,
)
from scenes import flat_grid, quad_strip


def save_tile(root, mesh, tile_id):
    mesh.tile_id = tile_id
    (root / f"{tile_id}.ply").write_bytes(write_ply(mesh))


def two_plane_mesh():
    """Two disjoint strips -> two segments; labels terrain / building."""
    a = quad_strip([0.0, 1.0, 2.0, 3.0], [0.0, 0.0, 0.0, 0.0])
    b = quad_strip([0.0, 1.0, 2.0], [2.0, 2.0, 2.0])
    verts = np.vstack([a.vertices, b.vertices])
    faces = np.vstack([a.faces, b.faces + a.n_vertices])
    labels = [1] * a.n_faces + [3] * b.n_faces
    segments = [0] * a.n_faces + [1] * b.n_faces
    return make_mesh(verts, faces, face_labels=labels,
                     face_segments=segments)


@pytest.fixture
def store(tmp_path):
    st = SessionStore(tmp_path / "tiles")
    save_tile(st.root, two_plane_mesh(), "planes")
    save_tile(st.root, flat_grid(10, 10, labels=[1] * 200), "flat")
    return st


def test_open_loads_saved_labels(store):
    session = store.open("planes")
    assert session.progress == 0.0
    assert not session.confirmed.any()
    assert len(session.segments) == 2
    assert session.segment_class(0) == 1
    assert session.segment_class(1) == 3
    session.check_partition()


def test_open_oversegments_unsegmented_tile(tmp_path):
    st = SessionStore(tmp_path)
    save_tile(st.root, flat_grid(4, 4, labels=[2] * 32), "plain")
    session = st.open("plain")
    assert len(session.segments) == 1
    session.check_partition()


def test_open_unknown_tile_errors(store):
    with pytest.raises(FileNotFoundError, match="ghost"):
        store.open("ghost")


def test_open_with_model_predicts(store):
    mesh = two_plane_mesh()
    segs = oversegment(mesh)
    x = featurize_segments(mesh, segs)
    model = train(x, np.array([1, 3]), params=ForestParams(n_trees=5))
    session = store.open("planes", model=model)
    for seg in session.segments:
        p = session.probs[seg.id]
        assert p is not None and p.sum() == pytest.approx(1.0)
        # faces carry the argmax class of their segment
        want = int(np.argmax(p)) + 1
        assert (session.mesh.face_labels[seg.face_ids] == want).all()
    assert session.progress == 0.0


def test_assign_whole_segment(store):
    session = store.open("planes")
    new_ids = assign_label(session, 5, segment_ids=[1])
    assert new_ids == [1]
    seg = session.segments.get(1)
    assert (session.mesh.face_labels[seg.face_ids] == 5).all()
    assert session.confirmed[seg.face_ids].all()
    np.testing.assert_allclose(session.probs[1], [0, 0, 0, 0, 1, 0])
    assert session.progress == pytest.approx(seg.area / session.total_area)
    session.check_partition()


def test_assign_face_subset_carves_new_segment(store):
    session = store.open("flat")
    target = list(range(40, 50))
    new_ids = assign_label(session, 2, faces=target)
    assert new_ids == [1]
    carved = session.segments.get(1)
    np.testing.assert_array_equal(carved.face_ids, target)
    assert (session.mesh.face_labels[target] == 2).all()
    assert len(session.segments) == 2
    session.check_partition()
    # parent keeps the remaining faces and its original label
    assert session.segments.get(0).face_ids.size == 190
    assert session.segment_class(0) == 1


def test_assign_class_zero_marks_ambiguous(store):
    session = store.open("planes")
    p0 = session.progress
    assign_label(session, 0, faces=[0, 1])
    assert (session.mesh.face_labels[[0, 1]] == 0).all()
    assert session.confirmed[[0, 1]].all()
    assert 0.0 <= session.progress <= 1.0
    assert session.progress >= p0


def test_assign_validation(store):
    session = store.open("planes")
    with pytest.raises(ValueError, match="outside 0..6"):
        assign_label(session, 7, faces=[0])
    with pytest.raises(ValueError, match="empty target"):
        assign_label(session, 1, faces=[])
    with pytest.raises(ValueError, match="out of range"):
        assign_label(session, 1, faces=[999])
    with pytest.raises(KeyError):
        assign_label(session, 1, segment_ids=[42])
    assert session.log == []  # failed ops leave no trace


def test_filter_matches_brute_force(store):
    rng = np.random.default_rng(4)
    session = store.open("flat")
    # carve a few segments, then fabricate probabilities
    assign_label(session, 2, faces=list(range(10)))
    assign_label(session, 4, faces=list(range(100, 130)))
    for seg in session.segments:
        p = rng.dirichlet(np.ones(6))
        session.probs[seg.id] = p
    for _ in range(20):
        prob_max = float(rng.uniform(0, 1))
        lo = float(rng.uniform(0, 30))
        hi = lo + float(rng.uniform(0, 40))
        cls = int(rng.integers(0, 7)) if rng.random() < 0.5 else None
        got = filter_segments(session, prob_max, lo, hi, cls)
        want = [seg.id for seg in session.segments
                if np.max(session.probs[seg.id]) <= prob_max
                and lo <= seg.area <= hi
                and (cls is None or session.segment_class(seg.id) == cls)]
        assert got == want


def test_filter_defaults_and_validation(store):
    session = store.open("planes")
    assert filter_segments(session) == [0, 1]
    assert filter_segments(session, prob_max=0.0) == []
    with pytest.raises(ValueError, match="prob_max"):
        filter_segments(session, prob_max=1.5)
    with pytest.raises(ValueError, match="area"):
        filter_segments(session, area_min=5.0, area_max=1.0)


def test_split_planar_carves_spike(tmp_path):
    w = 0.5
    verts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0),
             (1 + w * 0.5, 0.5, w * np.sqrt(3) / 2)]
    mesh = make_mesh(verts, [(0, 1, 2), (1, 3, 2), (1, 4, 3)],
                     face_segments=[0, 0, 0])
    st = SessionStore(tmp_path)
    save_tile(st.root, mesh, "spike")
    session = st.open("spike")
    new_id = split_segment_planar(session, 0, max_distance=0.05,
                                  max_angle=30.0)
    assert new_id == 1
    np.testing.assert_array_equal(session.segments.get(1).face_ids, [0, 1])
    np.testing.assert_array_equal(session.segments.get(0).face_ids, [2])
    session.check_partition()
    assert same_state(session, replay_session(session))


def test_split_planar_whole_region_is_noop(store):
    session = store.open("flat")
    out = split_segment_planar(session, 0, max_distance=0.1, max_angle=10.0)
    assert out == 0
    assert len(session.segments) == 1
    assert same_state(session, replay_session(session))


def test_split_stroke_and_replay(tmp_path):
    xs = [0.4 * i for i in range(11)]
    zs = [0.0] * 8 + [1.0, 2.0, 3.0]
    mesh = quad_strip(xs, zs)
    mesh = mesh.with_attributes(segments=np.array([0] * 10 + [1] * 10))
    st = SessionStore(tmp_path)
    save_tile(st.root, mesh, "ramp")
    session = st.open("ramp")
    split_by_stroke_service(session, [9, 10], max_distance=0.5)
    assert len(session.segments) == 3
    session.check_partition()
    assert same_state(session, replay_session(session))
    with pytest.raises(ValueError, match="single segment"):
        split_by_stroke_service(session, [0, 1], max_distance=0.5)


def test_random_edit_sequences_replay(store):
    rng = np.random.default_rng(99)
    session = store.open("flat")
    last_progress = session.progress
    for _ in range(200):
        kind = rng.random()
        try:
            if kind < 0.45:
                n = int(rng.integers(1, 13))
                faces = rng.choice(200, size=n, replace=False)
                assign_label(session, int(rng.integers(0, 7)), faces=faces)
            elif kind < 0.7:
                ids = sorted(seg.id for seg in session.segments)
                sid = int(rng.choice(ids))
                assign_label(session, int(rng.integers(1, 7)),
                             segment_ids=[sid])
            elif kind < 0.85:
                ids = sorted(seg.id for seg in session.segments)
                sid = int(rng.choice(ids))
                split_segment_planar(session, sid, max_distance=0.05,
                                     max_angle=30.0)
            else:
                a = session.segments.assignment
                sids = np.unique(a)
                if len(sids) >= 2:
                    s1, s2 = rng.choice(sids, size=2, replace=False)
                    f1 = int(rng.choice(np.flatnonzero(a == s1)))
                    f2 = int(rng.choice(np.flatnonzero(a == s2)))
                    split_by_stroke_service(session, [f1, f2],
                                            max_distance=0.25)
        except ValueError:
            pass
        session.check_partition()
        p = session.progress
        assert 0.0 <= p <= 1.0
        assert p >= last_progress - 1e-12
        last_progress = p
    assert len(session.log) > 100
    assert same_state(session, replay_session(session))


def test_save_open_round_trip(store):
    session = store.open("planes")
    assign_label(session, 6, segment_ids=[0])
    assign_label(session, 2, faces=[6, 7])
    store.save(session)
    log = list(session.log)
    store.close(session)

    again = store.open("planes")
    assert again.log == log
    assert same_state(again, session)
    assert again.progress == pytest.approx(session.progress)
    assert same_state(again, replay_session(again))


def test_save_with_empty_log(store):
    session = store.open("flat")
    store.save(session)
    store.close(session)
    assert same_state(store.open("flat"), session)


def test_session_lock_one_writer(store):
    session = store.open("planes")
    other = SessionStore(store.root)
    with pytest.raises(SessionLockError, match="locked"):
        other.open("planes")
    store.close(session)
    reopened = other.open("planes")
    assert reopened.tile_id == "planes"
    with pytest.raises(SessionLockError):
        store.save(session)  # closed session lost the lock


# -- HTTP layer --------------------------------------------------------


@pytest.fixture
def client(store):
    from fastapi.testclient import TestClient

    return TestClient(create_app(store)), store


def test_http_tiles_and_payload(client):
    http, store = client
    assert http.get("/tiles").json() == {"tiles": ["flat", "planes"]}
    body = http.get("/tiles/planes").json()
    assert body["tile_id"] == "planes"
    assert len(body["labels"]) == 10
    assert len(body["positions"]) % 3 == 0
    assert body["progress"] == 0.0
    assert set(body["segment_probs"]) == {"0", "1"}
    assert len(body["face_colors"]) == 10
    assert all(len(c) == 3 and 0 <= min(c) <= max(c) <= 255
               for c in body["face_colors"])


def test_http_label_advances_progress(client):
    http, store = client
    before = http.get("/tiles/planes/progress").json()
    assert before["progress"] == 0.0
    resp = http.post("/tiles/planes/label",
                     json={"segments": [1], "class": 5})
    assert resp.status_code == 200
    session = store.sessions["planes"]
    frac = session.segments.get(1).area / session.total_area
    assert resp.json()["progress"] == pytest.approx(frac)
    after = http.get("/tiles/planes/progress").json()
    assert after["progress"] == pytest.approx(frac)
    assert after["confirmed_area"] == pytest.approx(
        session.segments.get(1).area)


def test_http_segment_filter_matches_direct_call(client):
    http, store = client
    session = store.open("planes")
    rng = np.random.default_rng(7)
    for seg in session.segments:
        session.probs[seg.id] = rng.dirichlet(np.ones(6))
    got = http.get("/tiles/planes/segments",
                   params={"prob_max": 0.9, "area_min": 0.0}).json()
    assert got["segments"] == filter_segments(session, prob_max=0.9)
    got = http.get("/tiles/planes/segments", params={"klass": 1}).json()
    assert got["segments"] == filter_segments(session, cls=1)


def test_http_binary_payload_layout(client):
    http, store = client
    raw = http.get("/tiles/planes/mesh.bin").content
    session = store.sessions["planes"]
    assert raw[:4] == b"MTIL"
    off = 4
    arrays = []
    for dtype, width in (("<f4", 3), ("<u4", 3), ("<u4", 1), ("<u4", 1),
                         ("<u4", 1)):
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        n = count * width * 4
        arrays.append(np.frombuffer(raw[off:off + n], dtype=dtype))
        off += n
    assert off == len(raw)
    np.testing.assert_allclose(
        arrays[0], session.mesh.vertices.ravel().astype(np.float32))
    np.testing.assert_array_equal(arrays[1], session.mesh.faces.ravel())
    np.testing.assert_array_equal(arrays[2], session.mesh.face_labels)
    np.testing.assert_array_equal(arrays[3], session.segments.assignment)
    assert raw == mesh_payload_bytes(session)


def test_http_errors_and_save(client):
    http, store = client
    assert http.get("/tiles/ghost").status_code == 404
    assert http.post("/tiles/planes/label",
                     json={"faces": [0], "class": 9}).status_code == 400
    assert http.post("/tiles/planes/label",
                     json={"class": 1}).status_code == 400
    resp = http.post("/tiles/planes/save")
    assert resp.json() == {"saved": True}
    assert (store.root / "planes.session.json").exists()
    payload = tile_payload(store.sessions["planes"])
    assert payload["labels"] == [int(x) for x in
                                 store.sessions["planes"].mesh.face_labels]
