"""From-scratch multi-label learners (KNN, decision tree, random forest)
and the evaluation metrics used to compare dimensioning algorithms.

Models map mobility features to per-link strategy levels: one output slot
per (link, parameter), each a quantized level. Inputs are the mobility
columns only, since communication features depend on the strategy being
predicted and do not exist at inference time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cost import CostConfig, feasibility_slack, resource_savings, total_cost
from .dataset import Dataset, DatasetError
from .engine import ReplayConfig, Replayer, StrategyMatrix
from .grid import RoadGrid


class ModelError(ValueError):
    pass


# --- per-slot helpers --------------------------------------------------------

def _majority(values: np.ndarray, n_classes: int) -> int:
    return int(np.bincount(values, minlength=n_classes).argmax())


def _gini_best_split(x: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int):
    """Best (threshold, impurity) for one feature; None when no split is valid."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(ys)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)  # class counts left of each split point
    total = left[-1]
    nl = np.arange(1, n + 1, dtype=float)
    nr = n - nl
    with np.errstate(invalid="ignore", divide="ignore"):
        gl = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
        right = total[None, :] - left
        gr = 1.0 - ((right / np.maximum(nr, 1)[:, None]) ** 2).sum(axis=1)
    weighted = (nl * gl + nr * np.where(nr > 0, gr, 0.0)) / n
    valid = np.zeros(n, dtype=bool)
    valid[: n - 1] = xs[:-1] < xs[1:]  # only between distinct values
    valid &= (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    cut = int(np.flatnonzero(valid)[np.argmin(weighted[valid])])
    threshold = (xs[cut] + xs[cut + 1]) / 2.0
    return threshold, float(weighted[cut])


def _build_tree(X: np.ndarray, y: np.ndarray, n_classes: int, max_depth: int,
                min_leaf: int, depth: int = 0):
    counts = np.bincount(y, minlength=n_classes)
    if depth >= max_depth or len(y) < 2 * min_leaf or counts.max() == len(y):
        return {"leaf": int(counts.argmax())}
    best = None  # (impurity, feature, threshold)
    for j in range(X.shape[1]):
        found = _gini_best_split(X[:, j], y, n_classes, min_leaf)
        if found is None:
            continue
        threshold, impurity = found
        if best is None or impurity < best[0]:
            best = (impurity, j, threshold)
    if best is None:
        return {"leaf": int(counts.argmax())}
    _, j, threshold = best
    mask = X[:, j] <= threshold
    return {
        "feature": j,
        "threshold": float(threshold),
        "left": _build_tree(X[mask], y[mask], n_classes, max_depth, min_leaf, depth + 1),
        "right": _build_tree(X[~mask], y[~mask], n_classes, max_depth, min_leaf, depth + 1),
    }


def _tree_predict(tree: dict, x: np.ndarray) -> int:
    while "leaf" not in tree:
        tree = tree["left"] if x[tree["feature"]] <= tree["threshold"] else tree["right"]
    return tree["leaf"]


# --- models ------------------------------------------------------------------

class KNNModel:
    """k-nearest neighbours with per-column z-scoring and per-slot majority vote."""

    kind = "knn"

    def __init__(self, k: int = 5, n_classes: int = 11):
        if k < 1:
            raise ModelError("k must be >= 1")
        self.k = k
        self.n_classes = n_classes
        self.mean = self.std = self.Xz = self.Y = None

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "KNNModel":
        _check_training(X, Y)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        self.Xz = (X - self.mean) / self.std
        self.Y = Y.astype(int)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xz = (np.asarray(X, dtype=float) - self.mean) / self.std
        out = np.zeros((len(Xz), self.Y.shape[1]), dtype=int)
        k = min(self.k, len(self.Xz))
        for i, x in enumerate(Xz):
            d = ((self.Xz - x) ** 2).sum(axis=1)
            nearest = np.argsort(d, kind="stable")[:k]
            for s in range(self.Y.shape[1]):
                out[i, s] = _majority(self.Y[nearest, s], self.n_classes)
        return out

    def state_dict(self) -> dict:
        return {
            "k": self.k,
            "n_classes": self.n_classes,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "Xz": self.Xz.tolist(),
            "Y": self.Y.tolist(),
        }

    @staticmethod
    def from_state(state: dict) -> "KNNModel":
        m = KNNModel(k=state["k"], n_classes=state["n_classes"])
        m.mean = np.array(state["mean"])
        m.std = np.array(state["std"])
        m.Xz = np.array(state["Xz"])
        m.Y = np.array(state["Y"], dtype=int)
        return m


class DecisionTreeModel:
    """One Gini-split tree per output slot."""

    kind = "decision_tree"

    def __init__(self, max_depth: int = 8, min_leaf: int = 1, n_classes: int = 11):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.n_classes = n_classes
        self.trees: list[dict] = []

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "DecisionTreeModel":
        _check_training(X, Y)
        self.trees = [
            _build_tree(X, Y[:, s].astype(int), self.n_classes, self.max_depth, self.min_leaf)
            for s in range(Y.shape[1])
        ]
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros((len(X), len(self.trees)), dtype=int)
        for i, x in enumerate(X):
            for s, tree in enumerate(self.trees):
                out[i, s] = _tree_predict(tree, x)
        return out

    def state_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "n_classes": self.n_classes,
            "trees": self.trees,
        }

    @staticmethod
    def from_state(state: dict) -> "DecisionTreeModel":
        m = DecisionTreeModel(state["max_depth"], state["min_leaf"], state["n_classes"])
        m.trees = state["trees"]
        return m


class RandomForestModel:
    """Bagged multi-output trees; per-slot majority vote across trees."""

    kind = "random_forest"

    def __init__(self, n_trees: int = 15, max_depth: int = 8, min_leaf: int = 1,
                 feature_subsample: float = 1.0, bootstrap: bool = True,
                 rng_seed: int = 0, n_classes: int = 11):
        if n_trees < 1 or not 0 < feature_subsample <= 1:
            raise ModelError("n_trees must be >= 1 and feature_subsample in (0, 1]")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature_subsample = feature_subsample
        self.bootstrap = bootstrap
        self.rng_seed = rng_seed
        self.n_classes = n_classes
        self.members: list[dict] = []  # {"features": [...], "trees": [per-slot tree]}

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "RandomForestModel":
        _check_training(X, Y)
        n, d = X.shape
        n_feats = max(1, int(round(self.feature_subsample * d)))
        self.members = []
        for ti in range(self.n_trees):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([self.rng_seed, ti]))
            )
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            feats = (
                np.sort(rng.choice(d, size=n_feats, replace=False))
                if n_feats < d
                else np.arange(d)
            )
            Xs = X[rows][:, feats]
            trees = [
                _build_tree(Xs, Y[rows, s].astype(int), self.n_classes,
                            self.max_depth, self.min_leaf)
                for s in range(Y.shape[1])
            ]
            self.members.append({"features": feats.tolist(), "trees": trees})
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        n_slots = len(self.members[0]["trees"])
        votes = np.zeros((len(X), n_slots, self.n_classes), dtype=int)
        for member in self.members:
            feats = np.array(member["features"], dtype=int)
            for i, x in enumerate(X):
                xs = x[feats]
                for s, tree in enumerate(member["trees"]):
                    votes[i, s, _tree_predict(tree, xs)] += 1
        return votes.argmax(axis=2)

    def state_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "feature_subsample": self.feature_subsample,
            "bootstrap": self.bootstrap,
            "rng_seed": self.rng_seed,
            "n_classes": self.n_classes,
            "members": self.members,
        }

    @staticmethod
    def from_state(state: dict) -> "RandomForestModel":
        m = RandomForestModel(
            state["n_trees"], state["max_depth"], state["min_leaf"],
            state["feature_subsample"], state["bootstrap"], state["rng_seed"],
            state["n_classes"],
        )
        m.members = state["members"]
        return m


class ConstantModel:
    """Always predicts the same level for every a slot and every b slot."""

    kind = "constant"

    def __init__(self, a_level: int, b_level: int, num_links: int, n_classes: int = 11):
        self.a_level = a_level
        self.b_level = b_level
        self.num_links = num_links
        self.n_classes = n_classes

    def fit(self, X, Y) -> "ConstantModel":
        return self

    def predict(self, X) -> np.ndarray:
        n = len(X)
        row = [self.a_level] * self.num_links + [self.b_level] * self.num_links
        return np.tile(np.array(row, dtype=int), (n, 1))

    def state_dict(self) -> dict:
        return {
            "a_level": self.a_level,
            "b_level": self.b_level,
            "num_links": self.num_links,
            "n_classes": self.n_classes,
        }

    @staticmethod
    def from_state(state: dict) -> "ConstantModel":
        return ConstantModel(**state)


_MODEL_KINDS = {
    "knn": KNNModel,
    "decision_tree": DecisionTreeModel,
    "random_forest": RandomForestModel,
    "constant": ConstantModel,
}


def _check_training(X, Y):
    if len(X) == 0 or len(Y) == 0:
        raise ModelError("training set is empty")
    if len(X) != len(Y):
        raise ModelError("features and labels have different lengths")


def make_model(spec: dict, n_classes: int = 11, num_links: int | None = None):
    kind = spec.get("kind")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "knn":
        return KNNModel(n_classes=n_classes, **params)
    if kind == "decision_tree":
        return DecisionTreeModel(n_classes=n_classes, **params)
    if kind == "random_forest":
        return RandomForestModel(n_classes=n_classes, **params)
    if kind == "constant":
        if num_links is None:
            raise ModelError("constant model needs num_links")
        return ConstantModel(num_links=num_links, n_classes=n_classes, **params)
    raise ModelError(f"unknown model kind {kind!r}")


def train(model_spec: dict, dataset_train: Dataset):
    """Fit a baseline on a dataset's mobility features and strategy labels."""
    if not dataset_train.records:
        raise ModelError("training set is empty")
    model = make_model(
        model_spec,
        n_classes=dataset_train.header["quantization_levels"],
        num_links=dataset_train.num_links,
    )
    X = dataset_train.feature_matrix(mobility_only=True)
    Y = dataset_train.label_matrix()
    return model.fit(X, Y)


def save_model(model, path: str) -> None:
    doc = {"schema_version": 1, "kind": model.kind, "state": model.state_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_model(path: str):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != 1:
        raise ModelError(f"unsupported model schema {doc.get('schema_version')!r}")
    cls = _MODEL_KINDS.get(doc["kind"])
    if cls is None:
        raise ModelError(f"unknown model kind {doc['kind']!r}")
    return cls.from_state(doc["state"])


# --- metrics -----------------------------------------------------------------

def f_score(predictions: np.ndarray, truths: np.ndarray, average: str = "micro",
            n_classes: int = 11) -> float:
    """F1 over per-slot exact level matches.

    micro: pools every (record, slot) decision; for single-label slots this
    equals slot accuracy. macro: unweighted mean of per-class F1.
    """
    P = np.asarray(predictions, dtype=int)
    T = np.asarray(truths, dtype=int)
    if P.shape != T.shape:
        raise ModelError(f"shape mismatch: {P.shape} vs {T.shape}")
    if P.size == 0:
        raise ModelError("empty prediction set")
    if average == "micro":
        tp = float((P == T).sum())
        fp = fn = float((P != T).sum())
        return 2 * tp / (2 * tp + fp + fn) if (tp + fp + fn) else 0.0
    if average == "macro":
        scores = []
        for c in range(n_classes):
            tp = float(((P == c) & (T == c)).sum())
            fp = float(((P == c) & (T != c)).sum())
            fn = float(((P != c) & (T == c)).sum())
            if tp + fp + fn == 0:
                continue
            scores.append(2 * tp / (2 * tp + fp + fn))
        return float(np.mean(scores)) if scores else 0.0
    raise ModelError(f"unknown average {average!r}")


@dataclass
class EpisodePrediction:
    episode_id: str
    trace_ref: str
    strategy: StrategyMatrix
    feasible: bool | None = None
    cost: float | None = None


def predict_episode_strategies(model, dataset: Dataset) -> list[EpisodePrediction]:
    """Group records by episode and assemble full per-interval strategies."""
    q = dataset.header["quantization_levels"]
    T = dataset.header["num_intervals"]
    episodes: dict[str, list] = {}
    for i, r in enumerate(dataset.records):
        episodes.setdefault(r.episode_id, []).append(r)
    X = dataset.feature_matrix(mobility_only=True)
    row_of = {r.record_id: i for i, r in enumerate(dataset.records)}
    preds = model.predict(X)
    out = []
    L = dataset.num_links
    for ep_id in sorted(episodes):
        recs = sorted(episodes[ep_id], key=lambda r: r.interval)
        if len(recs) != T:
            raise DatasetError(f"episode {ep_id} has {len(recs)} of {T} intervals")
        a_lv = np.zeros((L, T), dtype=int)
        b_lv = np.zeros((L, T), dtype=int)
        for r in recs:
            row = preds[row_of[r.record_id]]
            a_lv[:, r.interval] = row[:L]
            b_lv[:, r.interval] = row[L:]
        out.append(
            EpisodePrediction(
                episode_id=ep_id,
                trace_ref=recs[0].trace_ref,
                strategy=StrategyMatrix.from_levels(a_lv, b_lv, q),
            )
        )
    return out


def rejection_probability(model, dataset_test: Dataset, runs: int | None = None,
                          rng_seed: int = 4242) -> tuple[float, list[EpisodePrediction]]:
    """Fraction of test episodes whose predicted strategy, replayed on the
    episode's own trace, misses the success-ratio target."""
    if not dataset_test.traces:
        raise DatasetError("rejection evaluation requires a dataset with traces")
    grid = RoadGrid.from_json_dict(dataset_test.header["grid"])
    replay_cfg = ReplayConfig.from_json_dict(dataset_test.header["replay_cfg"])
    cost_cfg = CostConfig.from_json_dict(dataset_test.header["cost_cfg"])
    episodes = predict_episode_strategies(model, dataset_test)
    replayers: dict[str, Replayer] = {}
    rejected = 0
    for ep in episodes:
        if ep.trace_ref not in replayers:
            replayers[ep.trace_ref] = Replayer(
                dataset_test.traces[ep.trace_ref], grid, replay_cfg
            )
        result = replayers[ep.trace_ref].run(ep.strategy, runs=runs, rng_seed=rng_seed)
        ep.cost = total_cost(result.features, replay_cfg.intervals, cost_cfg)
        ep.feasible = feasibility_slack(result, cost_cfg) >= 0
        if not ep.feasible:
            rejected += 1
    return rejected / len(episodes) if episodes else 0.0, episodes


def savings_summary(episodes: list[EpisodePrediction], all_on_costs: dict[str, float]) -> dict:
    """Mean resource savings of feasible predicted strategies vs the benchmark."""
    vals = [
        resource_savings(ep.cost, all_on_costs[ep.trace_ref])
        for ep in episodes
        if ep.feasible and all_on_costs.get(ep.trace_ref, 0) > 0
    ]
    return {
        "episodes": len(episodes),
        "feasible_episodes": sum(1 for ep in episodes if ep.feasible),
        "mean_savings_feasible": float(np.mean(vals)) if vals else None,
    }
