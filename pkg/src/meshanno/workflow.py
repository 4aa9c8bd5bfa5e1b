"""Orchestration: tile ranking, dataset splits, and the batch pipeline.

The pipeline runs oversegment -> featurize -> train -> predict -> evaluate
over a directory of PLY tiles and persists every artifact plus a manifest.
Outputs are a pure function of the manifest: no timestamps, fixed seeds,
atomic writes.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import PipelineStageError
from .evaluate import ConfusionMatrix, MetricsReport, confusion_from_labels, \
    report
from .features import featurize_segments, write_feature_csv
from .forest import ForestModel, ForestParams, model_to_bytes, train
from .mesh import TriangleMesh, parse_ply, write_ply
from .segmentation import SegmentationParams, SegmentSet, oversegment, \
    upper_bound_labels

N_FEATURES = 44
ROLES = ("train", "test", "validation", "unlabeled")


@dataclass
class TileRecord:
    tile_id: str
    role: str = "unlabeled"
    diversity: float = 0.0
    refined: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.diversity < 0:
            raise ValueError("diversity must be >= 0")


def feature_diversity(descriptor) -> float:
    """Population variance of the descriptor's components."""
    f = np.asarray(descriptor, dtype=np.float64)
    if f.size == 0:
        raise ValueError("empty descriptor")
    return float(np.mean((f - f.mean()) ** 2))


def tile_descriptors(tile_features: dict) -> dict:
    """Per-tile descriptors from {tile_id: (features (K,44), areas (K,))}.

    Min-max normalization runs per dimension over every segment of the
    whole tile set first, so dimensions with big units (area, elevation)
    cannot dominate. Each descriptor component is the area-weighted spread
    (population std) of that dimension across the tile's segments: a tile
    of identical segments maps to the zero descriptor and the lowest
    possible diversity, a tile mixing many contents does not.
    """
    if not tile_features:
        return {}
    for tile_id, (x, _) in tile_features.items():
        if len(x) == 0:
            raise ValueError(f"tile {tile_id!r} has no segments")
    stacked = np.vstack([x for x, _ in tile_features.values()])
    lo = stacked.min(axis=0)
    span = stacked.max(axis=0) - lo
    span[span == 0] = 1.0
    out = {}
    for tile_id, (x, areas) in tile_features.items():
        areas = np.asarray(areas, dtype=np.float64)
        w = areas / areas.sum()
        norm = (np.asarray(x, dtype=np.float64) - lo) / span
        mean = w @ norm
        out[tile_id] = np.sqrt(w @ (norm - mean) ** 2)
    return out


def compute_diversities(tile_features: dict) -> dict:
    return {tid: feature_diversity(desc)
            for tid, desc in tile_descriptors(tile_features).items()}


def rank_tiles(tiles) -> list:
    """Tile ids by descending diversity; ties break lexicographically."""
    return [t.tile_id
            for t in sorted(tiles, key=lambda t: (-t.diversity, t.tile_id))]


def split_dataset(tile_ids, counts, seed: int = 0) -> dict:
    """Random role assignment: counts = (n_train, n_test, n_validation)."""
    tile_ids = sorted(tile_ids)
    n_train, n_test, n_val = counts
    if n_train + n_test + n_val > len(tile_ids):
        raise ValueError("split counts exceed the number of tiles")
    order = np.random.default_rng(seed).permutation(len(tile_ids))
    roles = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            role = "train"
        elif pos < n_train + n_test:
            role = "test"
        elif pos < n_train + n_test + n_val:
            role = "validation"
        else:
            role = "unlabeled"
        roles[tile_ids[idx]] = role
    return roles


def class_area_table(meshes, roles=None) -> dict:
    """Labeled area per class (1..6), overall or grouped by role."""
    groups: dict = {}
    for mesh in meshes:
        key = roles.get(mesh.tile_id, "unlabeled") if roles else "all"
        areas = groups.setdefault(key, np.zeros(6))
        for c in range(1, 7):
            areas[c - 1] += mesh.face_areas[mesh.face_labels == c].sum()
    return {k: v.tolist() for k, v in sorted(groups.items())}


def segment_majority_labels(mesh: TriangleMesh, segments: SegmentSet):
    """(ids, labels, areas) per segment; label = area-majority GT class.

    Ties go to the lower class id; a segment whose majority is the
    unclassified class gets label 0.
    """
    ids = np.array(sorted(s.id for s in segments.segments), dtype=np.int64)
    votes = np.zeros((ids.max() + 1, 7))
    np.add.at(votes, (segments.assignment, mesh.face_labels),
              mesh.face_areas)
    labels = votes.argmax(axis=1)[ids]
    areas = votes.sum(axis=1)[ids]
    return ids, labels.astype(np.int64), areas


@dataclass
class PipelineConfig:
    tiles_dir: str
    out_dir: str
    train_tiles: list
    test_tiles: list
    segmentation: SegmentationParams = field(
        default_factory=SegmentationParams)
    forest: ForestParams = field(default_factory=ForestParams)
    seed: int = 0
    ply_mode: str = "binary"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        raw = json.loads(text)
        raw["segmentation"] = SegmentationParams(
            **raw.get("segmentation", {}))
        raw["forest"] = ForestParams(**raw.get("forest", {}))
        return cls(**raw)


@dataclass
class PipelineArtifacts:
    out_dir: pathlib.Path
    model_path: pathlib.Path
    report_path: pathlib.Path
    manifest_path: pathlib.Path
    report: MetricsReport
    upper_bound: MetricsReport
    predictions: dict  # tile_id -> predicted face labels


def _atomic_write(path: pathlib.Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _stage(name):
    def deco(fn):
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineStageError:
                raise
            except Exception as exc:
                raise PipelineStageError(name, str(exc)) from exc
        return wrapped
    return deco


@_stage("load")
def _load_tiles(config: PipelineConfig) -> dict:
    tiles_dir = pathlib.Path(config.tiles_dir)
    meshes = {}
    for tile_id in [*config.train_tiles, *config.test_tiles]:
        path = tiles_dir / f"{tile_id}.ply"
        mesh = parse_ply(path.read_bytes())
        if not mesh.tile_id:
            mesh.tile_id = tile_id
        meshes[tile_id] = mesh
    return meshes


@_stage("oversegment")
def _segment_tiles(config, meshes, out_dir) -> dict:
    seg_dir = out_dir / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    segs = {}
    for tile_id in sorted(meshes):
        mesh = meshes[tile_id]
        segs[tile_id] = oversegment(mesh, config.segmentation)
        tagged = mesh.with_attributes(segments=segs[tile_id].assignment)
        tagged.tile_id = tile_id
        _atomic_write(seg_dir / f"{tile_id}.ply",
                      write_ply(tagged, mode=config.ply_mode))
    return segs


@_stage("featurize")
def _featurize_tiles(meshes, segs, out_dir) -> dict:
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    feats = {}
    for tile_id in sorted(meshes):
        mesh = meshes[tile_id]
        seg = segs[tile_id]
        x = featurize_segments(mesh, seg)
        ids, labels, areas = segment_majority_labels(mesh, seg)
        feats[tile_id] = (x, ids, labels, areas)
        buf = io.StringIO()
        write_feature_csv(buf, x, ids, tile_id, labels=labels)
        _atomic_write(feat_dir / f"{tile_id}.csv", buf.getvalue().encode())
    return feats


@_stage("train")
def _train_model(config, feats) -> ForestModel:
    xs, ys, ws = [], [], []
    for tile_id in config.train_tiles:
        x, ids, labels, areas = feats[tile_id]
        real = labels != 0  # majority-unclassified segments carry no signal
        xs.append(x[real])
        ys.append(labels[real])
        ws.append(areas[real])
    X = np.vstack(xs)
    y = np.concatenate(ys)
    w = np.concatenate(ws)
    if len(X) == 0:
        raise ValueError("no labeled training segments")
    return train(X, y, w, config.forest)


@_stage("predict")
def _predict_tiles(config, meshes, segs, feats, model, out_dir) -> dict:
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    predictions = {}
    for tile_id in sorted(config.test_tiles):
        mesh = meshes[tile_id]
        seg = segs[tile_id]
        x, ids, _, _ = feats[tile_id]
        seg_pred = model.predict_labels(x)
        lut = np.zeros(ids.max() + 2, dtype=np.int32)
        lut[ids] = seg_pred
        face_pred = lut[seg.assignment]
        predictions[tile_id] = face_pred
        tagged = mesh.with_attributes(labels=face_pred,
                                      segments=seg.assignment)
        tagged.tile_id = tile_id
        _atomic_write(pred_dir / f"{tile_id}.ply",
                      write_ply(tagged, mode=config.ply_mode))
    return predictions


@_stage("evaluate")
def _evaluate(config, meshes, segs, predictions, out_dir):
    cm = ConfusionMatrix()
    ub = ConfusionMatrix()
    for tile_id in sorted(config.test_tiles):
        mesh = meshes[tile_id]
        confusion_from_labels(mesh, mesh.face_labels,
                              predictions[tile_id], cm)
        confusion_from_labels(mesh, mesh.face_labels,
                              upper_bound_labels(mesh, segs[tile_id]), ub)
    rep = report(cm)
    ub_report = report(ub)
    payload = json.dumps({
        "test": json.loads(rep.to_json()),
        "upper_bound": json.loads(ub_report.to_json()),
    }, indent=2, sort_keys=True).encode()
    report_path = out_dir / "report.json"
    _atomic_write(report_path, payload)
    buf = io.StringIO()
    rep.write_csv(buf)
    _atomic_write(out_dir / "per_class.csv", buf.getvalue().encode())
    return rep, ub_report, report_path


def run_pipeline(config: PipelineConfig) -> PipelineArtifacts:
    out_dir = pathlib.Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshes = _load_tiles(config)
    segs = _segment_tiles(config, meshes, out_dir)
    feats = _featurize_tiles(meshes, segs, out_dir)
    model = _train_model(config, feats)
    model_path = out_dir / "model.rf"
    _atomic_write(model_path, model_to_bytes(model))
    predictions = _predict_tiles(config, meshes, segs, feats, model, out_dir)
    rep, ub_report, report_path = _evaluate(config, meshes, segs,
                                            predictions, out_dir)
    manifest = {
        "version": __version__,
        "config": json.loads(config.to_json()),
        "tiles": {
            tile_id: {
                "n_faces": meshes[tile_id].n_faces,
                "n_segments": len(segs[tile_id].segments),
                "role": "train" if tile_id in config.train_tiles else "test",
            } for tile_id in sorted(meshes)
        },
        "artifacts": sorted(
            str(p.relative_to(out_dir))
            for p in out_dir.rglob("*") if p.is_file()
            and p.name != "manifest.json"),
    }
    manifest_path = out_dir / "manifest.json"
    _atomic_write(manifest_path,
                  json.dumps(manifest, indent=2, sort_keys=True).encode())
    return PipelineArtifacts(
        out_dir=out_dir, model_path=model_path, report_path=report_path,
        manifest_path=manifest_path, report=rep, upper_bound=ub_report,
        predictions=predictions)


def run_from_manifest(manifest_path) -> PipelineArtifacts:
    """Re-execute a previous run from its manifest alone."""
    manifest = json.loads(pathlib.Path(manifest_path).read_text())
    config = PipelineConfig.from_json(json.dumps(manifest["config"]))
    return run_pipeline(config)


def area_prefix_subset(order, weights, fraction) -> np.ndarray:
    """Indices of the shortest prefix of `order` reaching the area fraction.

    Returned sorted, so a full-fraction subset is the identity selection and
    smaller fractions of the same order are subsets of larger ones.
    """
    order = np.asarray(order)
    cum = np.cumsum(np.asarray(weights, dtype=np.float64)[order])
    take = int(np.searchsorted(cum, fraction * cum[-1])) + 1
    return np.sort(order[:min(take, len(order))])


def training_amount_study(config: PipelineConfig, fractions,
                          n_seeds: int = 3) -> list:
    """Metrics at nested area-fractions of the training segments.

    For each seed a single permutation orders the training segments; the
    fraction-f subset is the shortest prefix reaching f of the total area,
    so smaller fractions are strict subsets of larger ones.
    """
    fractions = sorted(set(float(f) for f in fractions))
    if len(fractions) < 2:
        raise ValueError("need at least two fractions")
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError(f"fraction {f} outside (0, 1]")

    out_dir = pathlib.Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshes = _load_tiles(config)
    segs = _segment_tiles(config, meshes, out_dir)
    feats = _featurize_tiles(meshes, segs, out_dir)

    xs, ys, ws = [], [], []
    for tile_id in config.train_tiles:
        x, ids, labels, areas = feats[tile_id]
        real = labels != 0
        xs.append(x[real])
        ys.append(labels[real])
        ws.append(areas[real])
    X, y, w = np.vstack(xs), np.concatenate(ys), np.concatenate(ws)

    results = []
    for frac in fractions:
        runs = []
        for s in range(n_seeds):
            order = np.random.default_rng((config.seed, s)).permutation(len(X))
            pick = area_prefix_subset(order, w, frac)
            params = dataclasses.replace(config.forest,
                                         seed=config.forest.seed + s)
            model = train(X[pick], y[pick], w[pick], params)
            cm = ConfusionMatrix()
            for tile_id in sorted(config.test_tiles):
                x, ids, _, _ = feats[tile_id]
                lut = np.zeros(ids.max() + 2, dtype=np.int32)
                lut[ids] = model.predict_labels(x)
                confusion_from_labels(meshes[tile_id],
                                      meshes[tile_id].face_labels,
                                      lut[segs[tile_id].assignment], cm)
            runs.append(report(cm))
        oas = np.array([r.oa for r in runs])
        results.append({
            "fraction": frac,
            "runs": runs,
            "oa_mean": float(oas.mean()),
            "oa_std": float(oas.std()),
        })
    return results
