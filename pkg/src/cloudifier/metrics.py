"""Pixel-level evaluation: confusion matrix, accuracy and recall per dataset kind."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .training import infer_logits

KINDS = ("artificial", "natural")


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    preds = np.asarray(preds, dtype=np.int64).ravel()
    if labels.size and (labels.max() >= num_classes or preds.max() >= num_classes):
        raise ValueError(f"class index outside [0, {num_classes})")
    return np.bincount(labels * num_classes + preds, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def _summary(confusion: np.ndarray) -> dict:
    total = int(confusion.sum())
    rows = confusion.sum(axis=1)
    recall = [None if rows[k] == 0 else float(confusion[k, k] / rows[k]) for k in range(len(rows))]
    present = [r for r in recall if r is not None]
    return {
        "pixel_accuracy": None if total == 0 else float(np.trace(confusion) / total),
        "per_class_recall": recall,
        "macro_recall": float(np.mean(present)) if present else None,
        "pixels": total,
    }


@dataclass
class EvalReport:
    num_classes: int
    granularity: str
    confusion: np.ndarray
    pixel_accuracy: Optional[float]
    per_class_recall: list
    macro_recall: Optional[float]
    rows: dict = field(default_factory=dict)
    scene_top1: Optional[float] = None
    observations: int = 0

    @classmethod
    def from_confusions(cls, per_kind: dict, granularity: str, scene_hits=0, scene_total=0) -> "EvalReport":
        num_classes = next(iter(per_kind.values())).shape[0]
        overall = sum(per_kind.values())
        s = _summary(overall)
        rows = {}
        for kind in KINDS:
            conf = per_kind.get(kind, np.zeros_like(overall))
            k = _summary(conf)
            rows[kind] = {
                "accuracy": k["pixel_accuracy"],
                "recall": k["macro_recall"],
                "per_class_recall": k["per_class_recall"],
                "pixels": k["pixels"],
            }
        return cls(
            num_classes=num_classes,
            granularity=granularity,
            confusion=overall,
            pixel_accuracy=s["pixel_accuracy"],
            per_class_recall=s["per_class_recall"],
            macro_recall=s["macro_recall"],
            rows=rows,
            scene_top1=None if scene_total == 0 else scene_hits / scene_total,
            observations=scene_total,
        )

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "granularity": self.granularity,
            "observations": self.observations,
            "pixel_accuracy": self.pixel_accuracy,
            "macro_recall": self.macro_recall,
            "per_class_recall": self.per_class_recall,
            "scene_top1": self.scene_top1,
            "rows": self.rows,
            "confusion": self.confusion.astype(int).tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(
            num_classes=d["num_classes"],
            granularity=d["granularity"],
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            pixel_accuracy=d["pixel_accuracy"],
            per_class_recall=d["per_class_recall"],
            macro_recall=d["macro_recall"],
            rows=d["rows"],
            scene_top1=d["scene_top1"],
            observations=d["observations"],
        )

    def table(self) -> str:
        """Accuracy/recall per dataset kind, one row each, plus the total."""

        def fmt(v):
            return "   -  " if v is None else f"{v:6.4f}"

        lines = [f"{'kind':<12}{'acc':>8}{'recall':>8}{'pixels':>12}"]
        for kind in KINDS:
            r = self.rows[kind]
            lines.append(f"{kind:<12}{fmt(r['accuracy']):>8}{fmt(r['recall']):>8}{r['pixels']:>12}")
        lines.append(f"{'all':<12}{fmt(self.pixel_accuracy):>8}{fmt(self.macro_recall):>8}{int(self.confusion.sum()):>12}")
        lines.append(f"scene top-1: {fmt(self.scene_top1).strip()}")
        return "\n".join(lines)


def scene_prediction(pred_map: np.ndarray) -> int:
    """Non-background class covering the most predicted pixels; 0 if none."""
    counts = np.bincount(np.asarray(pred_map, dtype=np.int64).ravel())
    counts[0] = 0
    return int(np.argmax(counts)) if counts.any() else 0


def report_from_predictions(samples: Sequence, preds: Sequence[np.ndarray], num_classes: int, granularity: str) -> EvalReport:
    per_kind = {}
    hits = 0
    for s, pred in zip(samples, preds):
        kind = getattr(s, "kind", "artificial")
        conf = confusion_matrix(s.dense_labels, pred, num_classes)
        per_kind[kind] = per_kind.get(kind, 0) + conf
        hits += int(scene_prediction(pred) == int(getattr(s, "scene_label", 0)))
    if not per_kind:
        per_kind = {"artificial": np.zeros((num_classes, num_classes), dtype=np.int64)}
    return EvalReport.from_confusions(per_kind, granularity, hits, len(samples))


def evaluate(net, dataset: Sequence, granularity: str = "coarse", batch_size: int = 8) -> EvalReport:
    """Run inference over every observation and tally all pixels."""
    dataset = list(dataset)
    num_classes = net.num_classes
    for s in dataset:
        if int(np.asarray(s.dense_labels).max(initial=0)) >= num_classes:
            raise ValueError(f"dataset labels exceed the network's {num_classes} classes")
    preds = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        images = np.stack([np.asarray(s.image) for s in chunk])
        preds.extend(infer_logits(net, images, batch_size).argmax(axis=-1))
    return report_from_predictions(dataset, preds, num_classes, granularity)
