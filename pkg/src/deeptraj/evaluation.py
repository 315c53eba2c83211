"""Training on texture stacks, accuracy and confusion matrices, report files."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cnn
from .dataset import class_names
from .errors import DataError
from .pipeline import compute_stacks


@dataclass
class ConfusionMatrix:
    """Row-normalized rates: rows are true classes, columns predicted classes.

    Rows of classes with no test examples are all zero; see ``empty_rows``.
    """

    classes: list
    rows: np.ndarray
    support: np.ndarray

    @classmethod
    def from_predictions(cls, classes, truth, predicted):
        k = len(classes)
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (np.asarray(truth, dtype=np.intp), np.asarray(predicted, dtype=np.intp)), 1)
        support = counts.sum(axis=1)
        rows = np.zeros((k, k))
        seen = support > 0
        rows[seen] = counts[seen] / support[seen, None]
        return cls(list(classes), rows, support)

    @property
    def empty_rows(self):
        return [c for c, n in zip(self.classes, self.support) if n == 0]

    def recalls(self):
        return np.diag(self.rows).copy()

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["true\\predicted", *self.classes])
            for name, row in zip(self.classes, self.rows):
                out.writerow([name, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DataError(f"{path}: empty confusion file")
        classes = rows[0][1:]
        body = rows[1:]
        if [r[0] for r in body] != classes:
            raise DataError(f"{path}: row labels do not match header")
        mat = np.array([[float(v) for v in r[1:]] for r in body])
        support = (mat.sum(axis=1) > 0).astype(np.int64)
        return cls(classes, mat, support)


@dataclass
class EvalResult:
    accuracy: float
    confusion: ConfusionMatrix
    truth: np.ndarray
    predicted: np.ndarray
    names: list

    @property
    def error_rate(self):
        return 1.0 - self.accuracy


def label_indices(records, classes):
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[r.label] for r in records], dtype=np.intp)
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} is not among the model's classes") from None


def fit(records, cfg, stacks=None, classes=None, cache_dir=None, jobs=1, callback=None):
    """Train the network on ``records``; returns (model, losses, classes)."""
    if not records:
        raise DataError("no training records")
    classes = classes or class_names(records)
    if stacks is None:
        stacks = compute_stacks(records, cfg, cache_dir=cache_dir, jobs=jobs)
    y = label_indices(records, classes)
    netcfg = cfg.network_for(len(classes))
    model, losses = cnn.train(list(zip(stacks, y)), netcfg, callback=callback)
    return model, losses, classes


def evaluate(model, test_records, cfg, classes, stacks=None, cache_dir=None, jobs=1):
    if not test_records:
        raise DataError("empty test set")
    if stacks is None:
        stacks = compute_stacks(test_records, cfg, cache_dir=cache_dir, jobs=jobs)
    truth = label_indices(test_records, classes)
    predicted, _ = cnn.predict(model, np.stack(stacks))
    accuracy = float(np.mean(predicted == truth))
    cm = ConfusionMatrix.from_predictions(classes, truth, predicted)
    names = [str(r.frames_dir) for r in test_records]
    return EvalResult(accuracy, cm, truth, np.asarray(predicted), names)


def report(result, out_dir, figures=True):
    """Write confusion.csv, summary.txt, recall.tsv, predictions.tsv (+ confusion.png)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: cannot create output directory ({exc})") from None
    cm = result.confusion
    cm.to_csv(out / "confusion.csv")
    lines = [
        f"test_examples\t{len(result.truth)}",
        f"accuracy\t{result.accuracy:.6f}",
        f"error_rate\t{result.error_rate:.6f}",
        f"mean_class_recall\t{np.mean(cm.recalls()[cm.support > 0]):.6f}",
    ]
    if cm.empty_rows:
        lines.append("classes_without_test_examples\t" + ",".join(cm.empty_rows))
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(out / "recall.tsv", "w", encoding="utf-8") as fh:
        fh.write("class\tsupport\trecall\n")
        for name, n, r in zip(cm.classes, cm.support, cm.recalls()):
            fh.write(f"{name}\t{n}\t{r:.6f}\n")
    with open(out / "predictions.tsv", "w", encoding="utf-8") as fh:
        fh.write("video\ttrue\tpredicted\n")
        for name, t, p in zip(result.names, result.truth, result.predicted):
            fh.write(f"{name}\t{cm.classes[t]}\t{cm.classes[p]}\n")
    if figures:
        from .plotting import plot_confusion
        plot_confusion(cm, out / "confusion.png", title=f"accuracy {result.accuracy:.1%}")
    return out
