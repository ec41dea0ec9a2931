"""Shallow probes on frozen embeddings: k-fold KNN, linear SVC, PCA, linear regression.

Everything here operates on embedding matrices and label arrays only; no
function reads strip waveforms.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial.distance import cdist


class TooFewItems(ValueError):
    pass


class EmptyTrainSet(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class ConstantTarget(ValueError):
    pass


class SingleClass(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class DatasetOverlap(ValueError):
    pass


# -- folds ------------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray  # row -> fold id
    grouping: str  # "row" or "subject"

    def splits(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for f in range(self.k):
            test = np.flatnonzero(self.assignment == f)
            train = np.flatnonzero(self.assignment != f)
            yield train, test


def kfold_split(items, k: int, seed: int = 0, grouping: str = "row") -> FoldPlan:
    """Deterministic shuffled k-fold partition.

    ``items`` is a row count for ``grouping="row"`` or a per-row sequence of
    subject ids for ``grouping="subject"``. Row folds differ in size by at
    most one; subject folds are filled greedily (largest subjects first,
    each into the currently smallest fold) and never split a subject.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    if grouping == "row":
        n = int(items)
        if n < k:
            raise TooFewItems(f"{n} rows cannot fill {k} folds")
        assignment = np.empty(n, dtype=np.int64)
        assignment[rng.permutation(n)] = np.arange(n) % k
        return FoldPlan(k, assignment, "row")
    if grouping != "subject":
        raise ValueError(f"unknown grouping {grouping!r}")

    subjects = np.asarray(items)
    unique, inverse, counts = np.unique(subjects, return_inverse=True, return_counts=True)
    if unique.size < k:
        raise TooFewItems(f"{unique.size} subjects cannot fill {k} folds")
    order = rng.permutation(unique.size)
    order = order[np.argsort(-counts[order], kind="stable")]
    rows, members = np.zeros(k, dtype=np.int64), np.zeros(k, dtype=np.int64)
    subject_fold = np.empty(unique.size, dtype=np.int64)
    for u in order:
        f = int(np.lexsort((np.arange(k), members, rows))[0])
        subject_fold[u] = f
        rows[f] += counts[u]
        members[f] += 1
    return FoldPlan(k, subject_fold[inverse], "subject")


# -- KNN ----------------------------------------------------------------------------------


def knn_predict(train_x, train_y, test_x, k: int = 5, chunk: int = 2048) -> np.ndarray:
    """Euclidean k-nearest-neighbour majority vote.

    Neighbours with equal distance are ordered by training row. Vote ties go
    to the label with the smallest summed neighbour distance, then to the
    lexicographically smallest label.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    if train_x.shape[0] == 0:
        raise EmptyTrainSet("knn_predict needs at least one training row")
    k = min(k, train_x.shape[0])
    out = []
    for start in range(0, test_x.shape[0], chunk):
        d = cdist(test_x[start : start + chunk], train_x)
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        for row, idx in zip(d, nearest):
            votes: dict = {}
            for j in idx:
                count, dist = votes.get(train_y[j], (0, 0.0))
                votes[train_y[j]] = (count + 1, dist + row[j])
            out.append(min(votes, key=lambda lab: (-votes[lab][0], votes[lab][1], str(lab))))
    return np.asarray(out, dtype=train_y.dtype) if out else np.empty(0, dtype=train_y.dtype)


# -- PCA ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class PCAResult:
    components: np.ndarray  # (n_components, dim), orthonormal rows
    explained_variance: np.ndarray
    projections: np.ndarray  # centered X @ components.T
    mean: np.ndarray


def pca_fit(x, n_components: int) -> PCAResult:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise DegenerateInput("PCA needs at least two rows")
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(np.abs(xc) > 0):
        raise DegenerateInput("all rows are identical")
    n_components = min(n_components, x.shape[1])
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:n_components]
    # sign convention: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    var = np.zeros(n_components)
    var[: min(n_components, s.size)] = (s[:n_components] ** 2) / (x.shape[0] - 1)
    return PCAResult(comps, var, xc @ comps.T, mean)


# -- linear regression ----------------------------------------------------------------------------


def fit_linear_regression(x, y, ridge: float = 1e-6) -> tuple[np.ndarray, float]:
    """Least squares with a bias column; ``ridge`` penalizes weights, not the bias."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = np.hstack([x, np.ones((x.shape[0], 1))])
    reg = ridge * np.eye(a.shape[1])
    reg[-1, -1] = 0.0
    w = np.linalg.solve(a.T @ a + reg, a.T @ y)
    return w[:-1], float(w[-1])


def r2_score(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ConstantTarget("R^2 is undefined for a constant target")
    return 1.0 - float(((y_true - np.asarray(y_pred)) ** 2).sum()) / ss_tot


# -- reports ---------------------------------------------------------------------------------------


@dataclass
class EvalReport:
    experiment: str
    seed: int
    folds: list[dict[str, float | None]] = field(default_factory=list)
    aggregate: dict[str, float | None] = field(default_factory=dict)
    extra: dict[str, object] = field(default_factory=dict)

    def finalize(self) -> "EvalReport":
        keys = []
        for f in self.folds:
            keys += [k for k in f if k not in keys]
        for key in keys:
            vals = [f.get(key) for f in self.folds]
            vals = [v for v in vals if v is not None]
            self.aggregate[key] = float(np.mean(vals)) if vals else None
        return self

    def to_csv(self) -> str:
        metrics = list(self.aggregate) or sorted({k for f in self.folds for k in f})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "seed", "fold", *metrics])
        for i, f in enumerate(self.folds):
            w.writerow([self.experiment, self.seed, i, *[_fmt(f.get(m)) for m in metrics]])
        w.writerow([self.experiment, self.seed, "mean", *[_fmt(self.aggregate.get(m)) for m in metrics]])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{self.experiment} (seed {self.seed}, {len(self.folds)} fold(s))"]
        for k, v in self.aggregate.items():
            lines.append(f"  {k:<12} {'absent' if v is None else f'{v:.4f}'}")
        for k, v in self.extra.items():
            lines.append(f"  {k:<12} {v}")
        return "\n".join(lines)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# -- linear SVC ----------------------------------------------------------------------------------------


class LinearSVC:
    """Binary hinge-loss linear classifier trained by mini-batch Pegasos subgradient steps.

    Features are standardized internally. The returned weights are the
    average of the second half of the iterates.
    """

    def __init__(self, lam: float = 1e-3, epochs: int = 60, batch_size: int = 64, seed: int = 0):
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, x, y) -> "LinearSVC":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        classes = np.unique(y)
        if classes.size != 2:
            raise SingleClass(f"LinearSVC needs exactly two classes, got {classes.size}")
        self.classes_ = classes
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        z = (x - self.mean_) / self.scale_
        t = np.where(y == classes[1], 1.0, -1.0)

        n, d = z.shape
        rng = np.random.default_rng(self.seed)
        w, b = np.zeros(d), 0.0
        w_avg, b_avg, n_avg = np.zeros(d), 0.0, 0
        step = 0
        total = self.epochs * max(1, -(-n // self.batch_size))
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                step += 1
                eta = 1.0 / (self.lam * (step + 100))
                margin = t[idx] * (z[idx] @ w + b)
                active = margin < 1.0
                gw = self.lam * w - (t[idx, None] * z[idx])[active].sum(axis=0) / idx.size
                gb = -t[idx][active].sum() / idx.size
                w = w - eta * gw
                b = b - eta * gb
                if step > total // 2:
                    w_avg += w
                    b_avg += b
                    n_avg += 1
        self.coef_ = w_avg / n_avg
        self.intercept_ = b_avg / n_avg
        return self

    def decision_function(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean_) / self.scale_
        return z @ self.coef_ + self.intercept_

    def predict(self, x) -> np.ndarray:
        return np.where(self.decision_function(x) > 0, self.classes_[1], self.classes_[0])


class OneVsRestSVC:
    def __init__(self, **kwargs):
        self.kwargs = kwargs

    def fit(self, x, y) -> "OneVsRestSVC":
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise SingleClass("need at least two classes")
        self.models_ = [LinearSVC(**self.kwargs).fit(x, y == c) for c in self.classes_]
        return self

    def predict(self, x) -> np.ndarray:
        scores = np.stack([m.decision_function(x) for m in self.models_], axis=1)
        return self.classes_[np.argmax(scores, axis=1)]


# -- metrics --------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMetrics:
    accuracy: float
    sensitivity: float | None
    specificity: float | None
    tp: int
    fn: int
    tn: int
    fp: int

    def as_dict(self) -> dict[str, float | None]:
        return {"accuracy": self.accuracy, "sensitivity": self.sensitivity, "specificity": self.specificity}


def confusion_metrics(pred, truth, positive_class) -> ConfusionMetrics:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.shape} predictions vs {truth.shape} labels")
    if pred.size == 0:
        raise LengthMismatch("no predictions")
    pos_p, pos_t = pred == positive_class, truth == positive_class
    tp = int(np.sum(pos_p & pos_t))
    fn = int(np.sum(~pos_p & pos_t))
    tn = int(np.sum(~pos_p & ~pos_t))
    fp = int(np.sum(pos_p & ~pos_t))
    return ConfusionMetrics(
        accuracy=(tp + tn) / pred.size,
        sensitivity=tp / (tp + fn) if tp + fn else None,
        specificity=tn / (tn + fp) if tn + fp else None,
        tp=tp,
        fn=fn,
        tn=tn,
        fp=fp,
    )


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.shape} predictions vs {truth.shape} labels")
    return float(np.mean(pred == truth))


# -- experiment runners ------------------------------------------------------------------------------


def _subsample(n: int, max_rows: int, rng: np.random.Generator) -> np.ndarray:
    return np.arange(n) if n <= max_rows else np.sort(rng.choice(n, size=max_rows, replace=False))


def run_gender_probe(
    embeddings,
    genders,
    seed: int = 0,
    folds: int = 10,
    k: int = 5,
    subjects: Sequence[str] | None = None,
    max_rows: int = 15000,
) -> EvalReport:
    """k-fold cross-validated KNN accuracy; folds group by subject when ``subjects`` is given."""
    e = np.asarray(embeddings, dtype=np.float64)
    g = np.asarray(genders)
    if e.shape[0] != g.shape[0]:
        raise LengthMismatch("embeddings and labels differ in length")
    pick = _subsample(e.shape[0], max_rows, np.random.default_rng([seed, 0]))
    e, g = e[pick], g[pick]
    if subjects is not None:
        plan = kfold_split(np.asarray(subjects)[pick], folds, seed, grouping="subject")
    else:
        plan = kfold_split(e.shape[0], folds, seed, grouping="row")
    report = EvalReport("gender_knn", seed, extra={"rows": int(e.shape[0]), "grouping": plan.grouping})
    for train, test in plan.splits():
        pred = knn_predict(e[train], g[train], e[test], k=k)
        report.folds.append({"accuracy": accuracy(pred, g[test])})
    return report.finalize()


def balanced_subsample(labels, classes: Sequence, per_class: int, seed: int) -> np.ndarray:
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = sorted(classes, key=str)  # argument order must not change the draw
    counts = [int(np.sum(labels == c)) for c in classes]
    n = min(per_class, *counts)
    if n == 0:
        raise SingleClass(f"class counts {dict(zip(classes, counts))} leave nothing to balance")
    picks = [np.sort(rng.choice(np.flatnonzero(labels == c), size=n, replace=False)) for c in classes]
    return np.sort(np.concatenate(picks))


def run_afib_transfer(
    train_embeddings,
    train_rhythm,
    test_embeddings,
    test_rhythm,
    train_dataset: str,
    test_dataset: str,
    seed: int = 0,
    per_class: int = 768,
    positive: str = "AFib",
    negative: str = "Normal",
) -> EvalReport:
    """Fit a linear SVC on balanced AFib/Normal embeddings of one dataset, score it on another."""
    if train_dataset == test_dataset:
        raise DatasetOverlap(f"train and test dataset are both {train_dataset!r}")
    xtr, ytr = np.asarray(train_embeddings, dtype=np.float64), np.asarray(train_rhythm)
    xte, yte = np.asarray(test_embeddings, dtype=np.float64), np.asarray(test_rhythm)
    keep = np.isin(ytr, [positive, negative])
    xtr, ytr = xtr[keep], ytr[keep]
    pick = balanced_subsample(ytr, [positive, negative], per_class, seed)
    xtr, ytr = xtr[pick], ytr[pick]
    keep = np.isin(yte, [positive, negative])
    xte, yte = xte[keep], yte[keep]

    model = LinearSVC(seed=seed).fit(xtr, ytr)
    m = confusion_metrics(model.predict(xte), yte, positive)
    report = EvalReport(
        "afib_transfer",
        seed,
        folds=[m.as_dict()],
        extra={"train": f"{train_dataset} ({len(ytr)} rows)", "test": f"{test_dataset} ({len(yte)} rows)"},
    )
    return report.finalize()


def silhouette(x, labels) -> float | None:
    from sklearn.metrics import silhouette_score

    labels = np.asarray(labels)
    n_labels = np.unique(labels).size
    if n_labels < 2 or n_labels >= labels.size:
        return None
    return float(silhouette_score(np.asarray(x, dtype=np.float64), labels, metric="euclidean"))


def run_subject_pca(embeddings, subjects, n_components: int = 3, rhythm=None, seed: int = 0) -> tuple[PCAResult, EvalReport]:
    """PCA projections plus silhouette scores by subject (and by rhythm when given)."""
    e = np.asarray(embeddings, dtype=np.float64)
    res = pca_fit(e, n_components)
    fold: dict[str, float | None] = {
        "silhouette_subject": silhouette(e, subjects),
        "silhouette_subject_pca": silhouette(res.projections, subjects),
    }
    if rhythm is not None:
        fold["silhouette_rhythm"] = silhouette(e, rhythm)
    report = EvalReport("subject_pca", seed, folds=[fold], extra={"rows": int(e.shape[0])})
    report.extra["explained_variance"] = ", ".join(f"{v:.4g}" for v in res.explained_variance)
    return res, report.finalize()


def select_subject_strips(subjects, records, n_subjects: int = 11, per_subject: int = 16, seed: int = 0) -> np.ndarray:
    """Rows for a subject-PCA plot: up to ``per_subject`` strips each, split across records when possible."""
    subjects, records = np.asarray(subjects), np.asarray(records)
    rng = np.random.default_rng(seed)
    unique = np.unique(subjects)
    chosen = rng.choice(unique, size=min(n_subjects, unique.size), replace=False)
    rows = []
    for s in chosen:
        idx = np.flatnonzero(subjects == s)
        recs = np.unique(records[idx])
        share = [per_subject // len(recs)] * len(recs)
        for i in range(per_subject - sum(share)):
            share[i] += 1
        picked = []
        for r, n in zip(recs, share):
            pool = idx[records[idx] == r]
            picked += list(rng.choice(pool, size=min(n, pool.size), replace=False))
        short = per_subject - len(picked)
        if short > 0:
            rest = np.setdiff1d(idx, picked)
            picked += list(rng.choice(rest, size=min(short, rest.size), replace=False))
        rows += sorted(picked)
    return np.asarray(rows, dtype=np.int64)


def run_age_probe(embeddings, ages, seed: int = 0, folds: int = 10, ridge: float = 1e-6, max_rows: int = 15000) -> EvalReport:
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(ages, dtype=np.float64)
    pick = _subsample(e.shape[0], max_rows, np.random.default_rng([seed, 0]))
    return linear_regression_r2(e[pick], y[pick], kfold_split(pick.size, folds, seed), ridge=ridge, seed=seed)


def linear_regression_r2(x, y, folds: FoldPlan, ridge: float = 1e-6, seed: int = 0) -> EvalReport:
    """Out-of-fold R^2 for each fold and their mean."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    report = EvalReport("age_regression", seed)
    for train, test in folds.splits():
        w, b = fit_linear_regression(x[train], y[train], ridge)
        report.folds.append({"r2": r2_score(y[test], x[test] @ w + b)})
    return report.finalize()


def run_sleep_staging(embeddings, stages, subjects, seed: int = 0, folds: int = 3) -> EvalReport:
    """Subject-grouped k-fold one-vs-rest linear SVC accuracy over Awake/REM/NREM."""
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(stages)
    plan = kfold_split(np.asarray(subjects), folds, seed, grouping="subject")
    report = EvalReport("sleep_staging", seed, extra={"grouping": plan.grouping})
    for train, test in plan.splits():
        model = OneVsRestSVC(seed=seed).fit(e[train], y[train])
        report.folds.append({"accuracy": accuracy(model.predict(e[test]), y[test])})
    return report.finalize()


def embedding_spread(embeddings, subjects) -> tuple[float, float]:
    """(cross-subject spread, pooled spread): RMS over dims of the std of subject means / of all rows."""
    e = np.asarray(embeddings, dtype=np.float64)
    subjects = np.asarray(subjects)
    means = np.stack([e[subjects == s].mean(axis=0) for s in np.unique(subjects)])
    return float(np.sqrt(means.var(axis=0).mean())), float(np.sqrt(e.var(axis=0).mean()))


# -- embedding CSV --------------------------------------------------------------------------------------

LABEL_COLUMNS = ("subject_id", "record_id", "cycle", "start_index", "gender", "age", "rhythm", "sleep_stage")


@dataclass
class EmbeddingTable:
    values: np.ndarray  # (N, D)
    columns: dict[str, np.ndarray]  # label name -> length-N array; "" marks absent

    def __post_init__(self):
        for name, col in self.columns.items():
            if len(col) != self.values.shape[0]:
                raise LengthMismatch(f"column {name!r} has {len(col)} rows, embeddings have {self.values.shape[0]}")

    def __len__(self) -> int:
        return self.values.shape[0]

    def label(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"embedding table has no {name!r} column")
        return self.columns[name]

    def present(self, name: str) -> np.ndarray:
        """Boolean mask of rows where label ``name`` is recorded."""
        col = self.label(name)
        return np.array([v not in ("", "nan") for v in col.astype(str)])

    def subset(self, rows) -> "EmbeddingTable":
        return EmbeddingTable(self.values[rows], {k: v[rows] for k, v in self.columns.items()})

    @classmethod
    def from_strips(cls, values: np.ndarray, strips) -> "EmbeddingTable":
        def text(v):
            if v is None or (isinstance(v, float) and np.isnan(v)):
                return ""
            return str(v)

        cols = {
            "subject_id": [s.subject_id for s in strips],
            "record_id": [s.record_id for s in strips],
            "cycle": [text(s.cycle) for s in strips],
            "start_index": [str(s.start_index) for s in strips],
            "gender": [text(s.labels.gender) for s in strips],
            "age": [text(s.labels.age) for s in strips],
            "rhythm": [text(s.labels.rhythm) for s in strips],
            "sleep_stage": [text(s.labels.sleep_stage) for s in strips],
        }
        return cls(np.asarray(values, dtype=np.float64), {k: np.asarray(v, dtype=object) for k, v in cols.items()})


def write_embeddings(path: str | os.PathLike, table: EmbeddingTable) -> None:
    dim = table.values.shape[1]
    names = list(table.columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"e{i}" for i in range(dim)] + names)
        for i, row in enumerate(table.values):
            w.writerow([repr(float(v)) for v in row] + [table.columns[n][i] for n in names])


def read_embeddings(path: str | os.PathLike) -> EmbeddingTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty embedding file")
    header, body = rows[0], rows[1:]
    dims = [i for i, h in enumerate(header) if h.startswith("e") and h[1:].isdigit()]
    if not dims or dims != list(range(len(dims))):
        raise ValueError(f"{path}: header must start with e0..e(D-1) columns")
    d = len(dims)
    values = np.array([[float(x) for x in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    cols = {name: np.array([r[d + j] for r in body], dtype=object) for j, name in enumerate(header[d:])}
    return EmbeddingTable(values, cols)


def write_projections(path: str | os.PathLike, projections: np.ndarray, labels: dict[str, Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"pc{i + 1}" for i in range(projections.shape[1])] + list(labels))
        for i, row in enumerate(projections):
            w.writerow([repr(float(v)) for v in row] + [labels[k][i] for k in labels])
