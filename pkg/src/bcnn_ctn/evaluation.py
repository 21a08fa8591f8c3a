"""Classification metrics, ROC/AUC, pair verification and the k-fold
threshold protocol, plus the report writer.

Undefined rates (zero denominators) are ``None`` in Python and empty cells
in CSV; they never become NaN.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .backbone import Network
from .data import Dataset, to_signed
from .plots import heatmap_svg, line_plot_svg

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


# --------------------------------------------------------------------------
# confusion matrix and rates


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @classmethod
    def from_labels(cls, true, pred, k: int) -> "ConfusionMatrix":
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (np.asarray(true, dtype=np.intp), np.asarray(pred, dtype=np.intp)), 1)
        return cls(counts)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(TP, FP, TN, FN) treating class ``c`` as positive."""
        tp = int(self.counts[c, c])
        fn = int(self.counts[c].sum()) - tp
        fp = int(self.counts[:, c].sum()) - tp
        tn = self.total - tp - fn - fp
        return tp, fp, tn, fn

    def accuracy(self) -> float | None:
        return _ratio(int(np.trace(self.counts)), self.total)


class Rates(NamedTuple):
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def binary_rates(cm: ConfusionMatrix, c: int) -> Rates:
    tp, fp, tn, fn = cm.one_vs_rest(c)
    return Rates(_ratio(tp + tn, tp + fp + tn + fn), _ratio(tp, tp + fn), _ratio(tn, tn + fp))


# --------------------------------------------------------------------------
# ROC


def roc_auc(scores, labels) -> tuple[list[tuple[float, float]], float]:
    """ROC points (FPR, TPR) over all distinct thresholds and the trapezoidal AUC.

    Tied scores move TPR and FPR together, which gives ties half credit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("roc_auc needs at least one positive and one negative label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


# --------------------------------------------------------------------------
# pairs


def pair_distance(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise EvaluationError(f"pair_distance: shapes {x.shape} and {y.shape} differ")
    d = x - y
    return float(np.sqrt(np.dot(d.ravel(), d.ravel())))


@dataclass
class PairSet:
    x: np.ndarray  # [P, d]
    y: np.ndarray  # [P, d]
    same: np.ndarray  # [P] bool
    index_pairs: np.ndarray | None = None  # [P, 2] rows into the source embeddings

    def distances(self) -> np.ndarray:
        diff = self.x - self.y
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def __len__(self):
        return len(self.same)


def _draw(candidates: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if n <= len(candidates):
        return candidates[rng.choice(len(candidates), size=n, replace=False)]
    logger.warning("only %d distinct pairs available for %d requested; sampling with replacement",
                   len(candidates), n)
    return candidates[rng.choice(len(candidates), size=n, replace=True)]


def build_pair_set(embeddings, labels, rng: np.random.Generator, count: int = 600,
                   same_fraction: float = 0.6) -> PairSet:
    """``round(count * same_fraction)`` same-class pairs, the rest cross-class, shuffled."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if not 0.0 <= same_fraction <= 1.0:
        raise EvaluationError("same_fraction must be in [0, 1]")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise EvaluationError("pair building needs >= 2 classes with >= 2 samples each")
    i, j = np.triu_indices(len(labels), 1)
    same_mask = labels[i] == labels[j]
    all_pairs = np.stack([i, j], axis=1)
    n_same = int(round(count * same_fraction))
    chosen = np.concatenate([_draw(all_pairs[same_mask], n_same, rng),
                             _draw(all_pairs[~same_mask], count - n_same, rng)])
    chosen = chosen[rng.permutation(len(chosen))]
    same = labels[chosen[:, 0]] == labels[chosen[:, 1]]
    return PairSet(emb[chosen[:, 0]], emb[chosen[:, 1]], same, chosen)


def threshold_candidates(distances) -> np.ndarray:
    u = np.unique(np.asarray(distances, dtype=np.float64))
    return np.r_[-np.inf, (u[1:] + u[:-1]) / 2.0, np.inf]


def best_threshold(distances, same) -> tuple[float, float]:
    """Threshold maximising accuracy of "same iff distance < t"; returns (t, accuracy).

    Candidates are midpoints between consecutive distinct distances plus
    +-inf; the lowest best candidate wins ties.
    """
    d = np.asarray(distances, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    cands = threshold_candidates(d)
    ds, dd = np.sort(d[same]), np.sort(d[~same])
    same_below = np.searchsorted(ds, cands, side="left")
    diff_at_or_above = len(dd) - np.searchsorted(dd, cands, side="left")
    acc = (same_below + diff_at_or_above) / len(d)
    best = int(np.argmax(acc))
    return float(cands[best]), float(acc[best])


@dataclass
class PairEval:
    mean_accuracy: float
    thresholds: list[float]
    fold_accuracies: list[float]
    fold_of: np.ndarray  # fold index per pair
    correct: np.ndarray  # per pair, under its fold's threshold
    distances: np.ndarray = field(repr=False, default=None)
    same: np.ndarray = field(repr=False, default=None)


def kfold_pair_eval(pairs, folds: int = 10, same=None) -> PairEval:
    """Pick a threshold on k-1 folds, score it on the held-out fold, for each fold.

    ``pairs`` is a :class:`PairSet`, or an array of distances with ``same``
    labels given separately. Folds are contiguous and differ in size by at
    most one pair.
    """
    if isinstance(pairs, PairSet):
        d, s = pairs.distances(), pairs.same.astype(bool)
    else:
        d, s = np.asarray(pairs, dtype=np.float64), np.asarray(same, dtype=bool)
    if folds < 2:
        raise EvaluationError("folds must be >= 2")
    if len(d) < folds:
        raise EvaluationError(f"{len(d)} pairs cannot fill {folds} folds")
    fold_of = np.empty(len(d), dtype=np.intp)
    for f, rows in enumerate(np.array_split(np.arange(len(d)), folds)):
        fold_of[rows] = f
    thresholds, accs = [], []
    correct = np.zeros(len(d), dtype=bool)
    for f in range(folds):
        held = fold_of == f
        t, _ = best_threshold(d[~held], s[~held])
        hit = (d[held] < t) == s[held]
        correct[held] = hit
        thresholds.append(t)
        accs.append(float(hit.mean()))
    return PairEval(float(np.mean(accs)), thresholds, accs, fold_of, correct, d, s)


def embedding_distance_ratio(embeddings, labels) -> tuple[float, float, float]:
    """(mean intra-class distance, mean inter-class distance, inter / intra)."""
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    i, j = np.triu_indices(len(e), 1)
    diff = e[i] - e[j]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    same = labels[i] == labels[j]
    intra, inter = float(dist[same].mean()), float(dist[~same].mean())
    return intra, inter, inter / max(intra, 1e-12)


# --------------------------------------------------------------------------
# report


@dataclass
class ClassRow:
    name: str
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    auc: float | None
    samples: int


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    rows: list[ClassRow]  # per class, then the "Average" row
    roc: dict[str, list[tuple[float, float]]]
    pairs: PairEval | None

    @property
    def average(self) -> ClassRow:
        return self.rows[-1]

    @property
    def mean_accuracy(self) -> float | None:
        return self.average.accuracy


def _mean_defined(vals) -> float | None:
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def _parse_cell(v: str) -> float | None:
    return None if v == "" else float(v)


def build_report(labels, probs, class_names: list[str], pairs: PairEval | None = None) -> EvalReport:
    labels = np.asarray(labels)
    probs = np.asarray(probs)
    k = len(class_names)
    cm = ConfusionMatrix.from_labels(labels, probs.argmax(axis=1), k)
    rows, roc = [], {}
    for c, name in enumerate(class_names):
        r = binary_rates(cm, c)
        positives = labels == c
        auc = None
        if positives.any() and (~positives).any():
            roc[name], auc = roc_auc(probs[:, c], positives)
        rows.append(ClassRow(name, r.accuracy, r.sensitivity, r.specificity, auc, int(positives.sum())))
    rows.append(ClassRow("Average", cm.accuracy(), _mean_defined(r.sensitivity for r in rows),
                         _mean_defined(r.specificity for r in rows), _mean_defined(r.auc for r in rows),
                         int(round(np.mean([r.samples for r in rows])))))
    return EvalReport(cm, rows, roc, pairs)


REPORT_FIELDS = ("class", "accuracy", "sensitivity", "specificity", "auc", "samples")


def write_report_csv(path, rows: list[ClassRow]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([r.name, _cell(r.accuracy), _cell(r.sensitivity), _cell(r.specificity), _cell(r.auc),
                        r.samples])


def read_report_csv(path) -> list[ClassRow]:
    with open(path, newline="") as f:
        return [ClassRow(r["class"], _parse_cell(r["accuracy"]), _parse_cell(r["sensitivity"]),
                         _parse_cell(r["specificity"]), _parse_cell(r["auc"]), int(r["samples"]))
                for r in csv.DictReader(f)]


def write_confusion_csv(path, cm: ConfusionMatrix, class_names: list[str]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["true\\predicted"] + list(class_names))
        for name, row in zip(class_names, cm.counts):
            w.writerow([name] + [int(v) for v in row])


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    return ConfusionMatrix(np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64))


def write_roc_csv(path, points):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for x, y in points:
            w.writerow([repr(float(x)), repr(float(y))])


def read_roc_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="") as f:
        return [(float(r["fpr"]), float(r["tpr"])) for r in csv.DictReader(f)]


PAIR_FIELDS = ("distance", "same_class", "fold", "threshold", "correct")


def write_pairs_csv(path, result: PairEval):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PAIR_FIELDS)
        for d, s, fo, c in zip(result.distances, result.same, result.fold_of, result.correct):
            w.writerow([repr(float(d)), int(s), int(fo), repr(float(result.thresholds[fo])), int(c)])


def read_pairs_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"distance": float(r["distance"]), "same_class": bool(int(r["same_class"])),
                 "fold": int(r["fold"]), "threshold": float(r["threshold"]), "correct": bool(int(r["correct"]))}
                for r in csv.DictReader(f)]


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def write_report(report: EvalReport, class_names: list[str], out_dir, history: list[dict] | None = None) -> Path:
    """report.csv, confusion.csv, roc_<class>.csv, pairs.csv and SVG plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "report.csv", report.rows)
    write_confusion_csv(out / "confusion.csv", report.confusion, class_names)
    for name, pts in report.roc.items():
        write_roc_csv(out / f"roc_{_safe(name)}.csv", pts)
    (out / "roc.svg").write_text(line_plot_svg(report.roc, "false positive rate", "true positive rate",
                                               "One-vs-rest ROC", (0, 1), (0, 1), diagonal=True))
    (out / "confusion.svg").write_text(heatmap_svg(report.confusion.counts, class_names, "Confusion matrix"))
    if report.pairs is not None:
        write_pairs_csv(out / "pairs.csv", report.pairs)
    if history:
        ep = [h["epoch"] for h in history]
        losses = {"train": list(zip(ep, [h["train_loss"] for h in history])),
                  "validation": list(zip(ep, [h["val_loss"] for h in history]))}
        accs = {"train": list(zip(ep, [h["train_acc"] for h in history])),
                "validation": list(zip(ep, [h["val_acc"] for h in history]))}
        (out / "loss.svg").write_text(line_plot_svg(losses, "epoch", "loss", "Loss per epoch"))
        (out / "accuracy.svg").write_text(line_plot_svg(accs, "epoch", "accuracy", "Accuracy per epoch",
                                                        y_range=(0, 1)))
    return out


def full_report(net: Network, test: Dataset, out_dir=None, pair_count: int = 600, same_fraction: float = 0.6,
                folds: int = 10, seed: int = 0, history: list[dict] | None = None) -> EvalReport:
    probs, emb = net.predict(to_signed(test.images))
    pairs = None
    try:
        ps = build_pair_set(emb, test.labels, np.random.default_rng(seed), pair_count, same_fraction)
        pairs = kfold_pair_eval(ps, folds)
    except EvaluationError as e:
        logger.warning("skipping pair verification: %s", e)
    report = build_report(test.labels, probs, test.class_names, pairs)
    if out_dir is not None:
        write_report(report, test.class_names, out_dir, history)
    return report
