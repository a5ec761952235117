"""Gradient-boosted regression trees for binary classification, in numpy.

Trees split on ``x[feature] <= threshold`` where the threshold is a value
seen in training, so only the ordering of a feature matters.  The model
file is plain JSON with one flat array per node attribute.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from dial.config import Op
from dial.metrics import FEATURE_LENGTH, SCHEMA_VERSION

MODEL_FORMAT = "dial-gbdt"
MODEL_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    num_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    subsample_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must be in (0, 1]")


@dataclass
class TrainingSample:
    features: list[float]
    label: int
    op: Op
    weight: float = 1.0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        self.op = Op(self.op)
        if self.label not in (0, 1):
            raise ModelError(f"label must be 0 or 1, got {self.label!r}")
        if self.weight <= 0:
            raise ModelError("weight must be positive")
        if not all(math.isfinite(x) for x in self.features):
            raise ModelError("features must be finite numbers")

    def to_json(self) -> str:
        d = asdict(self)
        d["op"] = self.op.value
        d["features"] = [float(x) for x in self.features]
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "TrainingSample":
        d = json.loads(line)
        return cls(list(d["features"]), int(d["label"]), Op(d["op"]), float(d.get("weight", 1.0)),
                   int(d.get("schema_version", SCHEMA_VERSION)))


def write_samples(path: str | Path, samples: Iterable[TrainingSample]) -> int:
    n = 0
    with open(path, "w") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")
            n += 1
    return n


def read_samples(path: str | Path) -> Iterator[TrainingSample]:
    """Samples from a JSONL file; ``{"provenance": ...}`` header lines are skipped."""
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if "provenance" in d and "features" not in d:
                continue
            yield TrainingSample.from_json(line)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def logistic_loss(y: np.ndarray, z: np.ndarray, w: Optional[np.ndarray] = None) -> float:
    """Mean (weighted) negative log-likelihood for raw scores ``z``."""
    # log(1 + e^z) - y z, written stably
    per = np.logaddexp(0.0, z) - y * z
    if w is None:
        return float(per.mean())
    return float((w * per).sum() / w.sum())


def loss_gradient(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """d/dz of the per-sample logistic loss: p - y."""
    return sigmoid(z) - y


@dataclass
class Tree:
    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    value: list[float]

    def predict_one(self, x: Sequence[float]) -> float:
        n = 0
        while self.feature[n] >= 0:
            n = self.left[n] if x[self.feature[n]] <= self.threshold[n] else self.right[n]
        return self.value[n]

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))


@dataclass
class GbdtModel:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    op: Op
    n_features: int = FEATURE_LENGTH
    schema_version: int = SCHEMA_VERSION
    loss_history: list[float] = field(default_factory=list, repr=False, compare=False)
    _packed: Optional[tuple] = field(default=None, repr=False, compare=False)

    # -- prediction --------------------------------------------------------
    def _pack(self) -> tuple:
        """Pad every tree to a complete binary tree of equal depth."""
        depth = max((t.depth() for t in self.trees), default=0)
        n_int = (1 << depth) - 1
        T = len(self.trees)
        feat = np.zeros((T, max(n_int, 1)), dtype=np.intp)
        thr = np.full((T, max(n_int, 1)), np.inf)
        leaf = np.zeros((T, 1 << depth))
        for t, tree in enumerate(self.trees):
            stack = [(0, 0, 0)]  # (node in tree, slot in padded tree, level)
            while stack:
                node, slot, level = stack.pop()
                if level == depth:
                    leaf[t, slot - n_int] = tree.value[node]
                elif tree.feature[node] < 0:
                    # leaf above the bottom: route left until the bottom
                    stack.append((node, 2 * slot + 1, level + 1))
                else:
                    feat[t, slot] = tree.feature[node]
                    thr[t, slot] = tree.threshold[node]
                    stack.append((tree.left[node], 2 * slot + 1, level + 1))
                    stack.append((tree.right[node], 2 * slot + 2, level + 1))
        return depth, n_int, feat, thr, leaf

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ModelError(f"expected {self.n_features} features, got shape {X.shape}")
        if not np.isfinite(X).all():
            raise ModelError("features must be finite (missing values are not supported)")
        if not self.trees:
            return np.full(len(X), self.base_score)
        if self._packed is None:
            self._packed = self._pack()
        depth, n_int, feat, thr, leaf = self._packed
        T = len(self.trees)
        rows = np.arange(len(X))[:, None]
        tix = np.arange(T)[None, :]
        slot = np.zeros((len(X), T), dtype=np.intp)
        for _ in range(depth):
            f = feat[tix, slot]
            go_right = X[rows, f] > thr[tix, slot]
            slot = 2 * slot + 1 + go_right
        total = leaf[tix, slot - n_int].sum(axis=1)
        return self.base_score + self.learning_rate * total

    def predict_proba(self, X) -> np.ndarray:
        """Probabilities for a batch (2-D) or a single vector (1-D)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return float(sigmoid(self.raw_scores(X[None, :]))[0])
        return sigmoid(self.raw_scores(X))

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema_version": self.schema_version,
            "op": self.op.value,
            "n_features": self.n_features,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "trees": [asdict(t) for t in self.trees],
        }


def predict_proba(model: GbdtModel, features) -> float | np.ndarray:
    return model.predict_proba(features)


def serialize(model: GbdtModel) -> bytes:
    return json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def _check(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ModelError(f"{path}: {msg}")


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def deserialize(data: bytes | str) -> GbdtModel:
    try:
        d = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelError(f"$: not valid JSON ({exc})") from None
    _check(isinstance(d, dict), "$", "expected an object")
    _check(d.get("format") == MODEL_FORMAT, "$.format", f"expected {MODEL_FORMAT!r}")
    _check(d.get("version") == MODEL_VERSION, "$.version",
           f"unsupported version {d.get('version')!r}")
    _check(d.get("schema_version") == SCHEMA_VERSION, "$.schema_version",
           f"unsupported feature schema {d.get('schema_version')!r}")
    _check(d.get("op") in ("read", "write"), "$.op", "must be 'read' or 'write'")
    n_features = d.get("n_features")
    _check(isinstance(n_features, int) and n_features >= 1, "$.n_features", "must be a positive int")
    for key in ("learning_rate", "base_score"):
        _check(_finite(d.get(key)), f"$.{key}", "must be a finite number")
    _check(isinstance(d.get("trees"), list), "$.trees", "must be a list")
    trees = []
    for t, raw in enumerate(d["trees"]):
        path = f"$.trees[{t}]"
        _check(isinstance(raw, dict), path, "expected an object")
        arrays = {}
        for key in ("feature", "threshold", "left", "right", "value"):
            _check(isinstance(raw.get(key), list), f"{path}.{key}", "must be a list")
            arrays[key] = raw[key]
        n = len(arrays["feature"])
        _check(n >= 1, path, "tree has no nodes")
        for key, arr in arrays.items():
            _check(len(arr) == n, f"{path}.{key}", f"length {len(arr)} != {n}")
        for i in range(n):
            node = f"{path}.nodes[{i}]"
            f = arrays["feature"][i]
            _check(isinstance(f, int) and f < n_features, f"{node}.feature",
                   f"feature index {f!r} out of range")
            _check(_finite(arrays["value"][i]), f"{node}.value", "must be finite")
            if f >= 0:
                _check(_finite(arrays["threshold"][i]), f"{node}.threshold", "must be finite")
                for side in ("left", "right"):
                    c = arrays[side][i]
                    _check(isinstance(c, int) and i < c < n, f"{node}.{side}",
                           f"child index {c!r} invalid")
        trees.append(Tree(**arrays))
    return GbdtModel(trees, float(d["learning_rate"]), float(d["base_score"]), Op(d["op"]),
                     n_features, d["schema_version"])


def save_model(model: GbdtModel, path: str | Path) -> None:
    Path(path).write_bytes(serialize(model))


def load_model(path: str | Path) -> GbdtModel:
    return deserialize(Path(path).read_bytes())


# -- training ----------------------------------------------------------------

def _best_split(orders: np.ndarray, values: np.ndarray, g: np.ndarray,
                w: Optional[np.ndarray], min_leaf: int) -> Optional[tuple[float, int, float]]:
    """Exact greedy search over every feature for one node.

    Row ``f`` of ``orders`` holds the node's sample ids sorted by feature
    ``f``; ``values`` holds the matching feature values.  Returns (gain,
    feature, threshold); ties go to the lowest feature index and then the
    lowest threshold.
    """
    n = orders.shape[1]
    if n < 2 * min_leaf:
        return None
    if w is None:
        wg = np.cumsum(g[orders], axis=1)
        ww = np.arange(1, n + 1, dtype=np.float64)[None, :]
    else:
        wg = np.cumsum(w[orders] * g[orders], axis=1)
        ww = np.cumsum(w[orders], axis=1)
    G = wg[:, -1:]
    Wt = ww[:, -1:]
    # a cut after position k puts sorted positions 0..k on the left
    k = slice(min_leaf - 1, n - min_leaf)
    GL, WL = wg[:, k], ww[:, k]
    GR, WR = G - GL, Wt - WL
    gain = GL * GL / WL + GR * GR / WR - G * G / Wt
    valid = values[:, k] < values[:, min_leaf:n - min_leaf + 1]
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))  # row-major: lowest feature, then lowest threshold
    f, j = divmod(flat, gain.shape[1])
    if not gain[f, j] > 1e-12:
        return None
    return float(gain[f, j]), f, float(values[f, min_leaf - 1 + j])


def _fit_tree(X: np.ndarray, orders: np.ndarray, values: np.ndarray, grad: np.ndarray,
              hess: np.ndarray, w: Optional[np.ndarray], hp: Hyperparams) -> tuple[Tree, np.ndarray]:
    """Fit one regression tree to ``grad``; return it and every row's leaf value."""
    tree = Tree([], [], [], [], [])
    n_feat = orders.shape[0]

    def new_node() -> int:
        for arr, v in ((tree.feature, -1), (tree.threshold, 0.0), (tree.left, -1),
                       (tree.right, -1), (tree.value, 0.0)):
            arr.append(v)
        return len(tree.feature) - 1

    # breadth-first so node ids increase level by level
    queue = [(new_node(), orders, values, 0)]
    while queue:
        node, o, v, depth = queue.pop(0)
        split = None
        if depth < hp.max_depth:
            split = _best_split(o, v, grad, w, hp.min_samples_leaf)
        if split is None:
            rows = o[0]
            ww = 1.0 if w is None else w[rows]
            den = float((ww * hess[rows]).sum())
            num = float((ww * grad[rows]).sum())
            tree.value[node] = num / den if den > 1e-12 else 0.0
            continue
        _, f, thr = split
        tree.feature[node] = f
        tree.threshold[node] = thr
        m = (X[:, f] <= thr)[o]
        # each row of o holds the same sample ids, so the split keeps shapes rectangular
        l, r = new_node(), new_node()
        tree.left[node], tree.right[node] = l, r
        queue.append((l, o[m].reshape(n_feat, -1), v[m].reshape(n_feat, -1), depth + 1))
        m = ~m
        queue.append((r, o[m].reshape(n_feat, -1), v[m].reshape(n_feat, -1), depth + 1))
    # rows left out of the subsample still move by their leaf's value
    return tree, _tree_apply(tree, X)


def _tree_apply(tree: Tree, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(0, np.arange(len(X)))]
    while stack:
        node, ix = stack.pop()
        if tree.feature[node] < 0:
            out[ix] = tree.value[node]
            continue
        go_left = X[ix, tree.feature[node]] <= tree.threshold[node]
        stack.append((tree.left[node], ix[go_left]))
        stack.append((tree.right[node], ix[~go_left]))
    return out


def train(samples: Sequence[TrainingSample], hp: Hyperparams = Hyperparams()) -> GbdtModel:
    if len(samples) < 2:
        raise ModelError("need at least two samples")
    ops = {s.op for s in samples}
    if len(ops) != 1:
        raise ModelError(f"samples mix operation types: {sorted(o.value for o in ops)}")
    versions = {s.schema_version for s in samples}
    lengths = {len(s.features) for s in samples}
    if versions != {SCHEMA_VERSION} or len(lengths) != 1:
        raise ModelError(f"feature schema mismatch: versions {sorted(versions)}, "
                         f"lengths {sorted(lengths)}")
    X = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([s.label for s in samples], dtype=np.float64)
    w = np.array([s.weight for s in samples], dtype=np.float64)
    return fit_arrays(X, y, hp, op=ops.pop(), weights=w)


def fit_arrays(X: np.ndarray, y: np.ndarray, hp: Hyperparams = Hyperparams(), op: Op = Op.WRITE,
               weights: Optional[np.ndarray] = None) -> GbdtModel:
    """Train on arrays directly; ``train`` is the sample-list front end."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ModelError("X must be 2-D with one row per label")
    if not np.isfinite(X).all():
        raise ModelError("features must be finite")
    for cls in (0, 1):
        if not (y == cls).any():
            raise ModelError(f"training data has no samples of class {cls}")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    prior = float((w * y).sum() / w.sum())
    base = math.log(prior / (1 - prior))
    order = np.argsort(X, axis=0, kind="stable").T.copy()
    sorted_values = np.take_along_axis(X.T, order, axis=1)
    unit_w = None if (w == 1.0).all() else w
    rng = np.random.default_rng(hp.seed)
    z = np.full(len(y), base)
    model = GbdtModel([], hp.learning_rate, base, op, X.shape[1])
    model.loss_history.append(logistic_loss(y, z, w))
    n_sub = max(1, int(round(hp.subsample_fraction * len(y))))
    for _ in range(hp.num_trees):
        p = sigmoid(z)
        grad = y - p
        hess = p * (1 - p)
        if n_sub < len(y):
            keep = np.zeros(len(y), dtype=bool)
            keep[rng.choice(len(y), n_sub, replace=False)] = True
            m = keep[order]
            orders = order[m].reshape(len(order), -1)
            values = sorted_values[m].reshape(len(order), -1)
        else:
            orders, values = order, sorted_values
        tree, contrib = _fit_tree(X, orders, values, grad, hess, unit_w, hp)
        model.trees.append(tree)
        z = z + hp.learning_rate * contrib
        model.loss_history.append(logistic_loss(y, z, w))
    return model


def confusion(model: GbdtModel, X: np.ndarray, y: np.ndarray) -> dict:
    pred = (model.predict_proba(np.asarray(X)) > 0.5).astype(int)
    y = np.asarray(y).astype(int)
    tp = int(((pred == 1) & (y == 1)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    n = max(len(y), 1)
    return {"tp": tp, "tn": tn, "fp": fp, "fn": fn, "error": (fp + fn) / n}
