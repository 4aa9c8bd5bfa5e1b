"""Command-line entry points.

Every subcommand is a thin wrapper over the library API; run
``meshanno <command> --help`` for per-command options.
"""

import argparse
import json
import pathlib
import sys

import numpy as np

from .errors import PipelineStageError, PlyParseError
from .evaluate import ConfusionMatrix, accumulate, report
from .features import (FEATURE_NAMES, featurize_segments, read_feature_csv,
                       write_feature_csv)
from .forest import ForestParams, load_model, save_model, train
from .mesh import parse_ply, write_ply
from .sampler import sample_mesh, write_point_cloud
from .segmentation import SegmentationParams, SegmentSet, oversegment
from .synth import write_town
from .workflow import (PipelineConfig, compute_diversities, run_pipeline,
                       segment_majority_labels, split_dataset,
                       training_amount_study)

AREA_COLUMN = list(FEATURE_NAMES).index("segment_area")


def _load_mesh(path):
    path = pathlib.Path(path)
    mesh = parse_ply(path.read_bytes())
    if not mesh.tile_id:
        mesh.tile_id = path.stem
    return mesh


def _seg_params(args) -> SegmentationParams:
    return SegmentationParams(min_area=args.min_area,
                              max_distance=args.max_distance,
                              max_angle=args.max_angle)


def _ensure_segments(mesh, params) -> SegmentSet:
    """Reuse stored per-face segment ids; segment from scratch otherwise."""
    if mesh.face_segments.size and (mesh.face_segments >= 0).all():
        return SegmentSet.from_assignment(mesh, mesh.face_segments)
    segs = oversegment(mesh, params)
    mesh.face_segments = segs.assignment.copy()
    return segs


def _add_seg_args(p):
    p.add_argument("--min-area", type=float, default=0.0,
                   help="merge segments below this area (m^2)")
    p.add_argument("--max-distance", type=float, default=0.5,
                   help="vertex-to-plane distance threshold (m)")
    p.add_argument("--max-angle", type=float, default=90.0,
                   help="normal deviation threshold (degrees)")


def _add_mode_arg(p):
    p.add_argument("--mode", choices=("binary", "ascii"), default="binary",
                   help="PLY encoding for outputs")


def cmd_segment(args) -> int:
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = _seg_params(args)
    for path in args.inputs:
        mesh = _load_mesh(path)
        segs = oversegment(mesh, params)
        tagged = mesh.with_attributes(segments=segs.assignment)
        tagged.tile_id = mesh.tile_id
        out = out_dir / f"{mesh.tile_id}.ply"
        out.write_bytes(write_ply(tagged, mode=args.mode))
        print(f"{mesh.tile_id}: {mesh.n_faces} faces -> "
              f"{len(segs)} segments ({out})")
    return 0


def cmd_featurize(args) -> int:
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = _seg_params(args)
    for path in args.inputs:
        mesh = _load_mesh(path)
        segs = _ensure_segments(mesh, params)
        matrix = featurize_segments(mesh, segs)
        ids, labels, _ = segment_majority_labels(mesh, segs)
        # all-unclassified tiles get no label column at all
        labels = labels if (mesh.face_labels != 0).any() else None
        out = out_dir / f"{mesh.tile_id}.csv"
        with open(out, "w", newline="") as stream:
            write_feature_csv(stream, matrix, ids, mesh.tile_id,
                              labels=labels)
        print(f"{mesh.tile_id}: {matrix.shape[0]} segments x "
              f"{matrix.shape[1]} features ({out})")
    return 0


def cmd_train(args) -> int:
    mats, labels = [], []
    for path in args.inputs:
        with open(path, newline="") as stream:
            matrix, _, _, lab = read_feature_csv(stream)
        if lab is None:
            raise ValueError(f"{path} has no label column")
        mats.append(matrix)
        labels.append(lab)
    x = np.vstack(mats)
    y = np.concatenate(labels)
    keep = y != 0
    if not keep.any():
        raise ValueError("no labeled segments in the input tables")
    params = ForestParams(n_trees=args.trees, max_depth=args.depth,
                          min_samples_leaf=args.min_leaf, seed=args.seed)
    model = train(x[keep], y[keep], w=x[keep, AREA_COLUMN], params=params)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as stream:
        save_model(model, stream)
    print(f"trained {args.trees} trees on {int(keep.sum())} segments "
          f"({out})")
    return 0


def cmd_predict(args) -> int:
    with open(args.model, "rb") as stream:
        model = load_model(stream)
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = _seg_params(args)
    for path in args.inputs:
        mesh = _load_mesh(path)
        segs = _ensure_segments(mesh, params)
        matrix = featurize_segments(mesh, segs)
        seg_pred = model.predict_labels(matrix)
        lut = np.zeros(int(segs.assignment.max()) + 1, dtype=np.int64)
        for seg, cls in zip(segs, seg_pred):
            lut[seg.id] = cls
        tagged = mesh.with_attributes(labels=lut[segs.assignment],
                                      segments=segs.assignment)
        tagged.tile_id = mesh.tile_id
        out = out_dir / f"{mesh.tile_id}.ply"
        out.write_bytes(write_ply(tagged, mode=args.mode))
        print(f"{mesh.tile_id}: predicted {len(segs)} segments ({out})")
    return 0


def cmd_evaluate(args) -> int:
    if len(args.gt) != len(args.pred):
        raise ValueError("need one prediction per ground-truth tile")
    cm = ConfusionMatrix()
    for gt_path, pred_path in zip(sorted(args.gt), sorted(args.pred)):
        accumulate(cm, _load_mesh(gt_path), _load_mesh(pred_path))
    rep = report(cm)
    if args.csv:
        with open(args.csv, "w", newline="") as stream:
            rep.write_csv(stream)
    print(rep.to_json())
    return 0


def cmd_sample(args) -> int:
    mesh = _load_mesh(args.input)
    cloud = sample_mesh(mesh, target_density=args.density,
                        raw_density=args.raw_density, seed=args.seed)
    with open(args.output, "wb") as stream:
        write_point_cloud(cloud, stream, mode=args.mode)
    print(f"{len(cloud)} points at spacing >= "
          f"{float(cloud.min_spacing):.4f} m ({args.output})")
    return 0


def cmd_rank(args) -> int:
    params = _seg_params(args)
    tile_features = {}
    for path in args.inputs:
        mesh = _load_mesh(path)
        segs = _ensure_segments(mesh, params)
        matrix = featurize_segments(mesh, segs)
        areas = np.array([seg.area for seg in segs])
        tile_features[mesh.tile_id] = (matrix, areas)
    diversities = compute_diversities(tile_features)
    ranked = sorted(diversities, key=lambda t: (-diversities[t], t))
    for rank, tile_id in enumerate(ranked, start=1):
        print(f"{rank:4d}  {tile_id}  {diversities[tile_id]:.6f}")
    if args.json:
        payload = [{"tile_id": t, "diversity": diversities[t]}
                   for t in ranked]
        pathlib.Path(args.json).write_text(json.dumps(payload, indent=2))
    return 0


def cmd_split(args) -> int:
    tiles_dir = pathlib.Path(args.tiles_dir)
    tile_ids = sorted(p.stem for p in tiles_dir.glob("*.ply"))
    if not tile_ids:
        raise ValueError(f"no .ply tiles under {tiles_dir}")
    roles = split_dataset(tile_ids, (args.train, args.test, args.val),
                          seed=args.seed)
    text = json.dumps(roles, indent=2, sort_keys=True)
    if args.out:
        pathlib.Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_study(args) -> int:
    config = PipelineConfig.from_json(
        pathlib.Path(args.config).read_text())
    rows = training_amount_study(config, args.fractions, n_seeds=args.seeds)
    table = [{"fraction": r["fraction"],
              "oa_mean": r["oa_mean"], "oa_std": r["oa_std"],
              "oa": [run.oa for run in r["runs"]],
              "miou": [run.miou for run in r["runs"]]}
             for r in rows]
    text = json.dumps(table, indent=2)
    if args.out:
        pathlib.Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_run(args) -> int:
    config = PipelineConfig.from_json(
        pathlib.Path(args.config).read_text())
    arts = run_pipeline(config)
    print(f"manifest: {arts.manifest_path}")
    print(f"test OA {arts.report.oa:.4f}  mIoU {arts.report.miou:.4f}  "
          f"upper-bound mIoU {arts.upper_bound.miou:.4f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import SessionStore, create_app

    model = None
    if args.model:
        with open(args.model, "rb") as stream:
            model = load_model(stream)
    app = create_app(SessionStore(args.tiles_dir), model=model)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_synth(args) -> int:
    paths = write_town(args.out_dir, args.tiles, seed=args.seed,
                       mode=args.mode)
    print(f"wrote {len(paths)} tiles under {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshanno",
        description="Semi-automatic semantic annotation for urban meshes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="over-segment tiles into planar regions")
    p.add_argument("inputs", nargs="+", help="input .ply tiles")
    p.add_argument("--out-dir", required=True)
    _add_seg_args(p)
    _add_mode_arg(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("featurize", help="write per-segment feature tables")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-dir", required=True)
    _add_seg_args(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a random forest on feature tables")
    p.add_argument("inputs", nargs="+", help="feature .csv files with labels")
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=30)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label tiles with a trained model")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    _add_seg_args(p)
    _add_mode_arg(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="area-weighted metrics, GT vs predicted")
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--csv", help="optional per-class CSV output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sample", help="sample a colored point cloud from a tile")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--density", type=float, default=10.0,
                   help="target points per m^2")
    p.add_argument("--raw-density", type=float, default=None,
                   help="oversampling density before pruning")
    p.add_argument("--seed", type=int, default=0)
    _add_mode_arg(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("rank", help="order tiles by feature diversity")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--json", help="optional ranking output path")
    _add_seg_args(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("split", help="assign train/test/validate roles")
    p.add_argument("--tiles-dir", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional roles JSON path")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("study", help="accuracy vs training-area study")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--fractions", type=float, nargs="+", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("run", help="full segment/train/predict/evaluate run")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="HTTP annotation service")
    p.add_argument("--tiles-dir", required=True)
    p.add_argument("--model", help="optional forest for pre-labeling")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("synth", help="generate a synthetic labeled town")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tiles", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    _add_mode_arg(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineStageError as exc:
        print(f"error in stage '{exc.stage}': {exc}", file=sys.stderr)
    except (ValueError, OSError, KeyError, PlyParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
