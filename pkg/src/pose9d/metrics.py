"""Accuracy metrics over oriented-box IoU and rotation/translation error.

Reported numbers are per-instance accuracies at fixed thresholds,
averaged over categories — every instance is given, so there is no
detection ranking involved, and reports label the numbers "accuracy".
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingGroundTruthError
from .geom import Pose9D, iou3d, pose_errors, pose_to_box
from .shapes import SYMMETRIC

COLUMNS = ("iou50", "iou75", "deg10", "cm10", "deg10cm10")
_HEADERS = {"iou50": "IoU50", "iou75": "IoU75", "deg10": "10deg",
            "cm10": "10cm", "deg10cm10": "10deg10cm"}


@dataclass
class MetricsReport:
    """Per-category and mean accuracy (%) at the five thresholds."""

    per_category: dict
    mean: dict
    counts: dict
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return {"per_category": self.per_category, "mean": self.mean,
                "counts": self.counts,
                "config_fingerprint": self.config_fingerprint}

    @staticmethod
    def from_dict(d: dict) -> "MetricsReport":
        return MetricsReport(d["per_category"], d["mean"], d["counts"],
                             d.get("config_fingerprint", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @staticmethod
    def load(path) -> "MetricsReport":
        return MetricsReport.from_dict(json.loads(Path(path).read_text()))

    def table(self) -> str:
        """Aligned text table, categories then the category mean."""
        rows = [*sorted(self.per_category), "mean"]
        name_w = max(8, max(len(r) for r in rows) + 1)
        head = "category".ljust(name_w) + "  n" + "".join(
            _HEADERS[c].rjust(11) for c in COLUMNS)
        lines = [head, "-" * len(head)]
        for row in rows:
            acc = self.mean if row == "mean" else self.per_category[row]
            n = (sum(self.counts.values()) if row == "mean"
                 else self.counts[row])
            lines.append(row.ljust(name_w) + f"{n:3d}" + "".join(
                f"{acc[c]:11.1f}" for c in COLUMNS))
        return "\n".join(lines)


def _passes(pred: Pose9D, sample) -> dict:
    gt = sample.gt_pose
    iou = iou3d(pose_to_box(pred), pose_to_box(gt))
    rot, cm = pose_errors(pred, gt, symmetric=sample.category in SYMMETRIC)
    return {"iou50": iou >= 0.5, "iou75": iou >= 0.75,
            "deg10": rot < 10.0, "cm10": cm < 10.0,
            "deg10cm10": rot < 10.0 and cm < 10.0}


def evaluate(preds: dict, gts: dict, config_fingerprint: str = "") -> MetricsReport:
    """preds: id -> Pose9D; gts: id -> SceneSample (with ground truth).

    Pose-free samples cannot be scored; asking for them raises
    MissingGroundTruth. Iteration is in sorted-id order so the report is
    identical under any input ordering.
    """
    flags = {}
    for sid in sorted(preds):
        if sid not in gts:
            raise MissingGroundTruthError(f"no ground truth record for {sid!r}")
        sample = gts[sid]
        if sample.gt_pose is None:
            raise MissingGroundTruthError(
                f"sample {sid!r} carries no ground-truth pose")
        flags.setdefault(sample.category, []).append(
            _passes(preds[sid], sample))
    per_cat = {}
    counts = {}
    for cat in sorted(flags):
        rows = flags[cat]
        counts[cat] = len(rows)
        per_cat[cat] = {c: 100.0 * float(np.mean([r[c] for r in rows]))
                        for c in COLUMNS}
    mean = {c: float(np.mean([per_cat[cat][c] for cat in per_cat]))
            for c in COLUMNS}
    return MetricsReport(per_cat, mean, counts, config_fingerprint)


def save_predictions(path, preds: dict) -> None:
    """JSON-lines prediction file: one {id, t, R, s} record per sample."""
    with Path(path).open("w") as fh:
        for sid in sorted(preds):
            p = preds[sid]
            fh.write(json.dumps({"id": sid, "t": p.t.tolist(),
                                 "R": p.R.reshape(9).tolist(),
                                 "s": p.s.tolist()}) + "\n")


def load_predictions(path) -> dict:
    preds = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        preds[rec["id"]] = Pose9D(rec["t"], np.reshape(rec["R"], (3, 3)),
                                  rec["s"])
    return preds
