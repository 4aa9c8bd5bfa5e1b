"""Random-forest classifier over 44-dim segment features.

Axis-aligned Gini trees with bootstrap bagging. Determinism is part of the
contract: every tree gets its own RNG stream seeded from (seed, tree index),
candidate dimensions are evaluated in ascending order, and split ties resolve
to the lower dimension and lower threshold, so identical inputs always yield
an identical forest. Sample weights act through the bootstrap draw
probabilities (area-weighted training by default upstream).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from io import BytesIO

import numpy as np

from .features import FEATURE_NAMES

N_FEATURES = 44
CLASSES = (1, 2, 3, 4, 5, 6)
_MAGIC = b"MESHANNO.RF\n"
_VERSION = 1


def _schema_hash() -> str:
    return hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 30
    min_samples_leaf: int = 1
    features_per_split: int = 7  # ceil(sqrt(44))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 1 <= self.features_per_split <= N_FEATURES:
            raise ValueError("features_per_split must be in 1..44")


class _Tree:
    """Flat-array binary tree: feature[i] == -1 marks a leaf."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []  # per-node class counts over the 6 classes

    def add_leaf(self, counts) -> int:
        idx = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(counts)
        return idx

    def add_split(self, dim, thr, counts) -> int:
        idx = len(self.feature)
        self.feature.append(dim)
        self.threshold.append(thr)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(counts)
        return idx

    def freeze(self):
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.value = np.asarray(self.value, dtype=np.float64)
        return self

    def leaf_distribution(self, x) -> np.ndarray:
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        counts = self.value[node]
        return counts / counts.sum()

    def depth(self) -> int:
        depths = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if len(depths) else 0


def _gini(counts, total):
    p = counts / total
    return 1.0 - float(p @ p)


def _build_tree(X, y_idx, params, rng, importance):
    """Grow one tree on a bootstrap sample; accumulates impurity decrease."""
    n = len(y_idx)
    tree = _Tree()
    n_total = float(n)

    def grow(indices, depth):
        counts = np.bincount(y_idx[indices], minlength=6).astype(float)
        total = len(indices)
        parent_gini = _gini(counts, total)
        if (depth >= params.max_depth or parent_gini == 0.0
                or total < 2 * params.min_samples_leaf):
            return tree.add_leaf(counts)

        # sample features_per_split dims; if none of them admits a useful
        # split, keep drawing further batches so constant or exhausted dims
        # cannot stunt an impure node (the split itself still competes only
        # within its batch)
        perm = rng.permutation(N_FEATURES)
        best = None  # (decrease, dim, threshold)
        for start in range(0, N_FEATURES, params.features_per_split):
            batch = np.sort(perm[start:start + params.features_per_split])
            for dim in batch:
                vals = X[indices, dim]
                order = np.argsort(vals, kind="stable")
                v = vals[order]
                c = y_idx[indices][order]
                onehot = np.zeros((total, 6))
                onehot[np.arange(total), c] = 1.0
                cum = np.cumsum(onehot, axis=0)
                # split between positions i and i+1 only where values differ
                cut = np.flatnonzero(v[:-1] < v[1:])
                if len(cut) == 0:
                    continue
                nl = (cut + 1).astype(float)
                nr = total - nl
                ok = (nl >= params.min_samples_leaf) \
                    & (nr >= params.min_samples_leaf)
                if not ok.any():
                    continue
                cut = cut[ok]
                nl, nr = nl[ok], nr[ok]
                lc = cum[cut]
                rc = counts - lc
                gl = 1.0 - (lc * lc).sum(axis=1) / (nl * nl)
                gr = 1.0 - (rc * rc).sum(axis=1) / (nr * nr)
                decrease = parent_gini - (nl * gl + nr * gr) / total
                j = int(np.argmax(decrease))  # first max: lowest threshold
                if decrease[j] > 1e-15 and (best is None
                                            or decrease[j] > best[0]):
                    # threshold sits on the left neighbor value (not the
                    # midpoint) so decisions commute with any monotone
                    # per-dimension rescaling
                    best = (float(decrease[j]), int(dim), float(v[cut[j]]))
            if best is not None:
                break
        if best is None:
            return tree.add_leaf(counts)

        decrease, dim, thr = best
        importance[dim] += decrease * total / n_total
        node = tree.add_split(dim, thr, counts)
        go_left = X[indices, dim] <= thr
        left = grow(indices[go_left], depth + 1)
        right = grow(indices[~go_left], depth + 1)
        tree.left[node] = left
        tree.right[node] = right
        return node

    grow(np.arange(n), 0)
    return tree.freeze()


@dataclass
class ForestModel:
    params: ForestParams
    trees: list
    importances: np.ndarray = field(repr=False)
    classes: tuple = CLASSES

    def predict_proba(self, X) -> np.ndarray:
        """(n, 6) class probabilities: mean of per-tree leaf distributions."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != N_FEATURES:
            raise ValueError(
                f"expected {N_FEATURES}-dim vectors, got {X.shape[1]}")
        if not self.trees:
            raise ValueError("forest has no trees")
        out = np.zeros((len(X), 6))
        for tree in self.trees:
            for i, x in enumerate(X):
                out[i] += tree.leaf_distribution(x)
        out /= len(self.trees)
        return out[0] if single else out

    def predict(self, x) -> tuple:
        """(class id, probabilities[6]); argmax ties go to the lower class."""
        probs = self.predict_proba(x)
        if probs.ndim != 1:
            raise ValueError("predict takes a single vector")
        return int(np.argmax(probs)) + 1, probs

    def predict_labels(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(np.atleast_2d(X)), axis=1) + 1


def train(X, y, w=None, params: ForestParams = None) -> ForestModel:
    """Fit a forest on feature rows X with class labels y in 1..6.

    w weights the bootstrap draw of each sample (None = uniform); segment
    areas are the intended weights so training matches the area-weighted
    evaluation.
    """
    if params is None:
        params = ForestParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training set is empty")
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES}-dim vectors, got {X.shape[1]}")
    if len(y) != len(X):
        raise ValueError("X and y lengths differ")
    if y.min() < 1 or y.max() > 6:
        raise ValueError("labels must be in 1..6 (filter unclassified first)")
    if w is None:
        w = np.ones(len(X))
    w = np.asarray(w, dtype=np.float64)
    if len(w) != len(X):
        raise ValueError("X and w lengths differ")
    if w.min() < 0 or w.sum() <= 0:
        raise ValueError("weights must be >= 0 with positive sum")
    p = w / w.sum()
    y_idx = y - 1

    trees = []
    importance = np.zeros(N_FEATURES)
    for t in range(params.n_trees):
        rng = np.random.default_rng((params.seed, t))
        boot = rng.choice(len(X), size=len(X), replace=True, p=p)
        trees.append(_build_tree(X[boot], y_idx[boot], params, rng,
                                 importance))
    total = importance.sum()
    if total > 0:
        importance = importance / total
    return ForestModel(params=params, trees=trees, importances=importance)


def predict(model: ForestModel, x) -> tuple:
    return model.predict(x)


def feature_importance(model: ForestModel) -> np.ndarray:
    """Normalized mean impurity decrease per dimension (sums to 1)."""
    return model.importances.copy()


def grouped_importance(model: ForestModel) -> dict:
    """Importance mass per named feature group."""
    from .features import FEATURE_GROUPS
    imp = model.importances
    return {name: float(imp[idx].sum())
            for name, idx in FEATURE_GROUPS.items()}


# ---------------------------------------------------------------------------
# serialization: magic + version + JSON header + np.save blocks per tree


def save_model(model: ForestModel, stream) -> None:
    own = isinstance(stream, (str, bytes))
    f = open(stream, "wb") if own else stream
    try:
        header = json.dumps({
            "params": {
                "n_trees": model.params.n_trees,
                "max_depth": model.params.max_depth,
                "min_samples_leaf": model.params.min_samples_leaf,
                "features_per_split": model.params.features_per_split,
                "seed": model.params.seed,
            },
            "classes": list(model.classes),
            "n_features": N_FEATURES,
            "schema": _schema_hash(),
            "trees": len(model.trees),
        }).encode()
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(header)))
        f.write(header)
        np.save(f, model.importances)
        for tree in model.trees:
            for arr in (tree.feature, tree.threshold, tree.left, tree.right,
                        tree.value):
                np.save(f, arr)
    finally:
        if own:
            f.close()


def load_model(stream) -> ForestModel:
    own = isinstance(stream, (str, bytes))
    f = open(stream, "rb") if own else stream
    try:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a forest model stream (bad magic)")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported model version {version}")
        header = json.loads(f.read(hlen).decode())
        if header.get("schema") != _schema_hash():
            raise ValueError("model was trained against a different "
                             "feature schema")
        params = ForestParams(**header["params"])
        importances = np.load(f)
        trees = []
        for _ in range(header["trees"]):
            tree = _Tree()
            tree.feature = np.load(f)
            tree.threshold = np.load(f)
            tree.left = np.load(f)
            tree.right = np.load(f)
            tree.value = np.load(f)
            trees.append(tree)
        return ForestModel(params=params, trees=trees,
                           importances=importances,
                           classes=tuple(header["classes"]))
    finally:
        if own:
            f.close()


def model_to_bytes(model: ForestModel) -> bytes:
    buf = BytesIO()
    save_model(model, buf)
    return buf.getvalue()


def model_from_bytes(blob: bytes) -> ForestModel:
    return load_model(BytesIO(blob))
