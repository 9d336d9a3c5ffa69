"""Scoring of predicted label maps against ground truth.

Free-form predicted words are first mapped onto the dataset's class list
by sentence-embedding similarity; IoU is then accumulated from an integer
confusion matrix over all images. Segments whose recorded similarity falls
below the threshold are excluded from evaluation as ignore pixels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError
from .word_pipeline import WordEmbeddingTable

logger = logging.getLogger(__name__)

SentenceEmbeddingTable = WordEmbeddingTable

IGNORE_ID = 255


@dataclass
class LabelMap:
    """H x W label ids plus an id-to-word legend.

    Reassigned maps additionally carry per-pixel similarity of the original
    segment's word to its assigned class.
    """

    grid: np.ndarray
    legend: dict[int, str]
    sims: dict[int, float] | None = None
    sim_grid: np.ndarray | None = None
    reassignments: list["Reassignment"] | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2:
            raise InputError("label map: grid must be H x W")
        present = np.unique(self.grid)
        missing = [int(i) for i in present if int(i) not in self.legend]
        if missing:
            raise InputError(f"label map: grid ids missing from legend: {missing}")


@dataclass
class GroundTruth:
    """H x W class ids over a fixed class list; ignore_id marks void pixels."""

    grid: np.ndarray
    class_names: list[str]
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2:
            raise InputError("ground truth: grid must be H x W")
        bad = np.unique(self.grid[(self.grid >= len(self.class_names))
                                  & (self.grid != self.ignore_id)])
        if bad.size:
            raise InputError(f"ground truth: ids outside class list: {bad.tolist()}")


@dataclass(frozen=True)
class Reassignment:
    label_id: int
    word: str
    class_id: int
    class_name: str
    similarity: float


def reassign(pred: LabelMap, gt_classes: list[str],
             table: WordEmbeddingTable) -> LabelMap:
    """Map each predicted word to its most-similar ground-truth class.

    Ties break toward the earlier class-list position. Raises if a word or
    class name has no embedding.
    """
    if not gt_classes:
        raise InputError("reassign: empty class list")
    class_vectors = []
    for name in gt_classes:
        vec = table.get(name)
        if vec is None:
            raise InputError(f"reassign: no sentence embedding for class {name!r}")
        class_vectors.append(vec.astype(np.float64))
    class_matrix = np.stack(class_vectors)

    max_id = max(pred.legend) if pred.legend else 0
    id_to_class = np.zeros(max_id + 1, dtype=np.int32)
    id_to_sim = np.zeros(max_id + 1, dtype=np.float32)
    entries = []
    for label_id, word in sorted(pred.legend.items()):
        vec = table.get(word)
        if vec is None:
            raise InputError(f"reassign: no sentence embedding for word {word!r}")
        sims = class_matrix @ vec.astype(np.float64)
        class_id = int(np.argmax(sims))
        similarity = float(np.clip(sims[class_id], -1.0, 1.0))
        id_to_class[label_id] = class_id
        id_to_sim[label_id] = similarity
        entries.append(Reassignment(label_id, word, class_id, gt_classes[class_id], similarity))

    grid = id_to_class[pred.grid]
    sim_grid = id_to_sim[pred.grid]
    legend = {i: name for i, name in enumerate(gt_classes)}
    return LabelMap(grid=grid, legend=legend,
                    sims={e.label_id: e.similarity for e in entries},
                    sim_grid=sim_grid, reassignments=entries)


@dataclass
class EvalReport:
    """Per-class IoU and the mean over defined classes."""

    class_names: list[str]
    per_class_iou: list[float | None]
    miou: float
    confusion: np.ndarray  # C x C int64, rows ground truth, columns prediction
    pixels_evaluated: int
    sim_threshold: float
    reassignments: list[Reassignment] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "sim_threshold": self.sim_threshold,
            "pixels_evaluated": self.pixels_evaluated,
            "per_class_iou": {
                name: iou for name, iou in zip(self.class_names, self.per_class_iou)
            },
            "confusion": self.confusion.tolist(),
            "reassignments": [
                {
                    "label_id": r.label_id,
                    "word": r.word,
                    "class": r.class_name,
                    "similarity": r.similarity,
                }
                for r in self.reassignments
            ],
        }

    def format_table(self) -> str:
        width = max([len(n) for n in self.class_names] + [5])
        lines = [f"{'class':<{width}}  IoU"]
        for name, iou in zip(self.class_names, self.per_class_iou):
            shown = "undefined" if iou is None else f"{iou:.4f}"
            lines.append(f"{name:<{width}}  {shown}")
        lines.append(f"{'mIoU':<{width}}  {self.miou:.4f}")
        lines.append(f"pixels evaluated: {self.pixels_evaluated}")
        return "\n".join(lines)


def _accumulate_confusion(pred: LabelMap, gt: GroundTruth, n_classes: int,
                          sim_threshold: float) -> np.ndarray:
    if pred.grid.shape != gt.grid.shape:
        raise InputError(
            f"evaluate: prediction {pred.grid.shape} does not match "
            f"ground truth {gt.grid.shape}"
        )
    mask = gt.grid != gt.ignore_id
    if pred.sim_grid is not None:
        mask &= pred.sim_grid >= sim_threshold
    p = pred.grid[mask].astype(np.int64)
    g = gt.grid[mask].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= n_classes):
        raise InputError("evaluate: prediction ids outside the class list")
    return np.bincount(g * n_classes + p, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


def evaluate(pairs, class_names: list[str], sim_threshold: float = -1.0,
             keep_undefined_as_zero: bool = False) -> EvalReport:
    """Accumulate a confusion matrix over (prediction, ground truth) pairs.

    Classes absent from both prediction and ground truth have undefined IoU
    and are excluded from the mean unless ``keep_undefined_as_zero``.
    """
    n_classes = len(class_names)
    if n_classes == 0:
        raise InputError("evaluate: empty class list")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    reassignments: list[Reassignment] = []
    for pred, gt in pairs:
        if gt.class_names != class_names:
            raise InputError("evaluate: ground truth uses a different class list")
        confusion += _accumulate_confusion(pred, gt, n_classes, sim_threshold)
        reassignments.extend(pred.reassignments or [])

    true_pos = np.diag(confusion).astype(np.float64)
    gt_total = confusion.sum(axis=1).astype(np.float64)
    pred_total = confusion.sum(axis=0).astype(np.float64)
    denom = gt_total + pred_total - true_pos

    per_class: list[float | None] = []
    defined = []
    for c in range(n_classes):
        if denom[c] == 0:
            per_class.append(0.0 if keep_undefined_as_zero else None)
            if keep_undefined_as_zero:
                defined.append(0.0)
        else:
            iou = float(true_pos[c] / denom[c])
            per_class.append(iou)
            defined.append(iou)
    mean_iou = float(np.mean(defined)) if defined else 0.0
    return EvalReport(
        class_names=list(class_names),
        per_class_iou=per_class,
        miou=mean_iou,
        confusion=confusion,
        pixels_evaluated=int(confusion.sum()),
        sim_threshold=sim_threshold,
        reassignments=reassignments,
    )


def miou(pred: LabelMap, gt: GroundTruth, sim_threshold: float = -1.0,
         keep_undefined_as_zero: bool = False) -> EvalReport:
    """Single-pair convenience wrapper around :func:`evaluate`."""
    return evaluate([(pred, gt)], gt.class_names, sim_threshold, keep_undefined_as_zero)


def load_class_list(path) -> list[str]:
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    if not names:
        raise InputError(f"class list: no classes in {path}")
    return names


def load_ground_truth(path, class_names: list[str], ignore_id: int = IGNORE_ID) -> GroundTruth:
    """Read a single-channel indexed PNG of class ids."""
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "I", "I;16"):
            raise InputError(
                f"ground truth: expected a single-channel image, got mode {img.mode}: {path}"
            )
        grid = np.asarray(img, dtype=np.int64)
    return GroundTruth(grid=grid, class_names=class_names, ignore_id=ignore_id)


def save_label_map(label_map: LabelMap, labels_path, legend_path) -> None:
    """Write the id grid as an indexed PNG and the legend as JSON."""
    grid = label_map.grid
    if grid.min() < 0:
        raise InputError("label map: negative ids cannot be saved")
    if grid.max() <= 255:
        img = Image.fromarray(grid.astype(np.uint8), mode="L")
    elif grid.max() <= 65535:
        img = Image.fromarray(grid.astype(np.uint16))
    else:
        raise InputError("label map: ids exceed 16-bit range")
    img.save(labels_path, format="PNG")
    payload = {
        "legend": {str(i): w for i, w in sorted(label_map.legend.items())},
        "scores": {str(i): s for i, s in sorted((label_map.sims or {}).items())},
    }
    Path(legend_path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_label_map(labels_path, legend_path) -> LabelMap:
    with Image.open(labels_path) as img:
        grid = np.asarray(img, dtype=np.int32)
    payload = json.loads(Path(legend_path).read_text(encoding="utf-8"))
    legend = {int(k): str(v) for k, v in payload["legend"].items()}
    sims = {int(k): float(v) for k, v in payload.get("scores", {}).items()} or None
    return LabelMap(grid=grid, legend=legend, sims=sims)
