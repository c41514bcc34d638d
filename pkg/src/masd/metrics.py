"""Decoding metrics, repeat aggregation, and report emission.

Top-k accuracy breaks score ties deterministically toward the lowest class
index. Balanced accuracy (BCA) averages per-class recall over the classes
actually present in the labels. Aggregation mirrors the reporting layout of
per-subject means plus an overall average across subjects.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import TaskKind
from .dsp import EnvelopeTrial

RESULT_COLUMNS = ["approach", "subject", "fold", "seed", "task", "top1", "top5", "bca", "n_test"]


@dataclass
class RunResult:
    approach: str
    task: TaskKind
    mode: str
    subject: int
    fold: int
    seed: int
    top1: float
    top5: float
    bca: float
    n_test: int
    fingerprint: str = ""

    def validate(self) -> None:
        for name in ("top1", "top5", "bca"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.n_test <= 0:
            raise ValueError("n_test must be > 0")


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the k highest logits.

    Ties are broken toward the lowest class index (stable argsort of the
    negated scores), so results are deterministic.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if not 1 <= k <= n_classes:
        raise ValueError(f"k={k} outside [1, {n_classes}]")
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def predictions(logits: np.ndarray) -> np.ndarray:
    """Top-1 class per row with lowest-index tie-breaking."""
    logits = np.asarray(logits, dtype=np.float64)
    return np.argsort(-logits, axis=1, kind="stable")[:, 0]


def bca(preds: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Mean per-class recall over the classes present in ``labels``."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("bca needs at least one label")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    recalls = []
    for cls in np.unique(labels):
        mask = labels == cls
        recalls.append(float(np.mean(preds[mask] == cls)))
    return float(np.mean(recalls))


def _stats(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(results: list[RunResult]) -> dict:
    """Mean/SD per metric, grouped by (approach, subject) plus per-approach average.

    The per-approach average follows the reporting convention: mean over
    subject means, so subjects with different repeat counts weigh equally.
    """
    if not results:
        raise ValueError("no results to aggregate")
    tasks = {r.task for r in results}
    if len(tasks) > 1:
        raise ValueError(f"cannot aggregate mixed tasks: {sorted(t.value for t in tasks)}")
    # canonical row order makes the output independent of input permutation
    results = sorted(results, key=lambda r: (r.approach, r.subject, r.fold, r.seed))
    summary: dict = {"task": results[0].task.value, "approaches": {}}
    approaches = sorted({r.approach for r in results})
    for approach in approaches:
        rows = [r for r in results if r.approach == approach]
        subjects = sorted({r.subject for r in rows})
        per_subject = {}
        for subj in subjects:
            srows = [r for r in rows if r.subject == subj]
            entry = {"n_runs": len(srows)}
            for metric in ("top1", "top5", "bca"):
                mean, sd = _stats([getattr(r, metric) for r in srows])
                entry[f"{metric}_mean"] = mean
                entry[f"{metric}_sd"] = sd
            per_subject[str(subj)] = entry
        average = {"n_subjects": len(subjects)}
        for metric in ("top1", "top5", "bca"):
            subj_means = [per_subject[str(s)][f"{metric}_mean"] for s in subjects]
            mean, sd = _stats(subj_means)
            average[f"{metric}_mean"] = mean
            average[f"{metric}_sd"] = sd
        summary["approaches"][approach] = {"subjects": per_subject, "average": average}
    return summary


def energy_map(
    trials: list[EnvelopeTrial],
    group_by: str = "word",
    n_windows: int = 8,
) -> tuple[np.ndarray, list[str]]:
    """Mean squared envelope per channel, grouped by word or time window.

    Returns (matrix [channels x groups], group labels). The word grouping
    averages over trials of each word; the time grouping splits the trial
    into ``n_windows`` equal spans and averages over all trials.
    """
    if not trials:
        raise ValueError("energy_map needs at least one trial")
    shapes = {t.data.shape for t in trials}
    if len(shapes) > 1:
        raise ValueError(f"trials have mixed shapes: {sorted(shapes)}")
    c, t_len = trials[0].data.shape
    if group_by == "word":
        words = sorted({t.word_id for t in trials})
        out = np.zeros((c, len(words)))
        for j, w in enumerate(words):
            stack = np.stack([t.data for t in trials if t.word_id == w])
            out[:, j] = (stack**2).mean(axis=(0, 2))
        return out, [f"word_{w}" for w in words]
    if group_by == "time":
        if not 1 <= n_windows <= t_len:
            raise ValueError(f"n_windows={n_windows} outside [1, {t_len}]")
        edges = np.linspace(0, t_len, n_windows + 1).astype(int)
        stack = np.stack([t.data for t in trials])
        out = np.zeros((c, n_windows))
        labels = []
        for j in range(n_windows):
            out[:, j] = (stack[:, :, edges[j] : edges[j + 1]] ** 2).mean(axis=(0, 2))
            labels.append(f"t_{edges[j]}_{edges[j + 1]}")
        return out, labels
    raise ValueError(f"unknown group_by {group_by!r} (use 'word' or 'time')")


def write_energy_map_csv(matrix: np.ndarray, labels: list[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", *labels])
        for ch in range(matrix.shape[0]):
            writer.writerow([ch, *[repr(float(v)) for v in matrix[ch]]])


def write_results_csv(results: list[RunResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            writer.writerow(
                [r.approach, r.subject, r.fold, r.seed, r.task.value,
                 repr(r.top1), repr(r.top5), repr(r.bca), r.n_test]
            )


def read_results_csv(path) -> list[RunResult]:
    out: list[RunResult] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            out.append(
                RunResult(
                    approach=row["approach"],
                    task=TaskKind(row["task"]),
                    mode="",
                    subject=int(row["subject"]),
                    fold=int(row["fold"]),
                    seed=int(row["seed"]),
                    top1=float(row["top1"]),
                    top5=float(row["top5"]),
                    bca=float(row["bca"]),
                    n_test=int(row["n_test"]),
                )
            )
    return out


def write_summary_json(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
