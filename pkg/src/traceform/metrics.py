"""Evaluation metrics and report serialization."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

from sklearn.metrics import f1_score


def micro_accuracy(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    if len(y_true) != len(y_pred):
        raise ValueError("label/prediction length mismatch")
    if not y_true:
        raise ValueError("no examples")
    return sum(int(t == p) for t, p in zip(y_true, y_pred)) / len(y_true)


def macro_f1(
    y_true: Sequence[int], y_pred: Sequence[int], labels: Optional[Sequence[int]] = None
) -> float:
    """Unweighted mean of per-class F1 over the observed (or given) labels."""
    if labels is None:
        labels = sorted(set(y_true) | set(y_pred))
    return float(f1_score(y_true, y_pred, labels=list(labels), average="macro", zero_division=0))


def task_report(
    task: str,
    split: str,
    y_true: Sequence[int],
    y_pred: Sequence[int],
    chance_accuracy: float,
    init_mode: str,
    seed: int,
    with_macro_f1: bool,
) -> dict:
    return {
        "task": task,
        "split": split,
        "micro_accuracy": micro_accuracy(y_true, y_pred),
        "macro_f1": macro_f1(y_true, y_pred) if with_macro_f1 else None,
        "n_examples": len(y_true),
        "chance_accuracy": chance_accuracy,
        "init_mode": init_mode,
        "seed": seed,
    }


def write_report(report: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
