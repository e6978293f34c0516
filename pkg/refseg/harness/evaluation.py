# harness/evaluation.py
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, NonNegativeInt
from tabulate import tabulate

from refseg.errors import DatasetFormatError
from refseg.metrics import EvalReport, boundary_f, iou, oc_iou, summarize
from refseg.models import Dataset
from refseg.rle import RleRecord

logger = logging.getLogger(__name__)

# (scene_id, instance_index, expression_index); instance_index is None when
# expression_index counts every expression of the scene in instance order
PredKey = Tuple[str, Optional[int], int]


class PredictionRecord(BaseModel):
    scene_id: str
    expression_index: NonNegativeInt
    instance_index: Optional[NonNegativeInt] = None
    mask: RleRecord
    probability: float = float("nan")
    query_index: Optional[int] = None

    @property
    def key(self) -> PredKey:
        return self.scene_id, self.instance_index, self.expression_index


@dataclass
class Prediction:
    mask: np.ndarray
    probability: float


def read_predictions(path: Path) -> Dict[PredKey, Prediction]:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"{path} does not exist")
    predictions = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = PredictionRecord.model_validate_json(line)
                predictions[record.key] = Prediction(mask=record.mask.decode(), probability=record.probability)
            except ValueError as e:
                raise DatasetFormatError(f"{path}:{lineno}: bad prediction record ({type(e).__name__}: {e})") from e
    return predictions


def _scene_expression_indices(dataset: Dataset) -> Dict[Tuple[str, int, int], int]:
    """(scene_id, instance, expression) -> position among all expressions of the scene."""
    flat = {}
    for scene in dataset.scenes:
        position = 0
        for ii, inst in enumerate(scene.instances):
            for ei in range(len(inst.expressions)):
                flat[(scene.scene_id, ii, ei)] = position
                position += 1
    return flat


def evaluate_predictions(dataset: Dataset,
                         predictions: Dict[PredKey, Prediction]) -> Tuple[EvalReport, pd.DataFrame]:
    """Per-sample J and F, and Oc-IoU over every expression of each object."""
    records: List[dict] = []
    per_object = defaultdict(list)
    flat = _scene_expression_indices(dataset)
    missing = 0
    for sample in dataset.samples():
        key = (sample.scene.scene_id, sample.ref.instance_index, sample.ref.expression_index)
        pred = predictions.get(key)
        if pred is None:
            pred = predictions.get((key[0], None, flat[key]))
        if pred is None:
            missing += 1
            continue
        gt = sample.instance.mask
        mask = pred.mask
        records.append({
            "scene_id": key[0],
            "object_key": sample.object_key,
            "instance_index": key[1],
            "expression_index": key[2],
            "expression": sample.expression.text,
            "iou": iou(mask, gt),
            "f": boundary_f(mask, gt),
            "probability": pred.probability,
        })
        per_object[sample.object_key].append((gt, mask))
    if missing:
        logger.warning(f"{missing} dataset samples have no prediction and were skipped")

    object_rows = []
    for object_key, pairs in per_object.items():
        object_rows.append({"object_key": object_key, "expressions": len(pairs),
                            "oc_iou": oc_iou(pairs[0][0], [m for _, m in pairs])})
    objects = pd.DataFrame(object_rows)
    report = summarize(records, objects["oc_iou"].tolist() if len(objects) else [])
    return report, objects


def write_report(report: EvalReport, objects: pd.DataFrame, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    report.frame().to_csv(out_dir / "samples.csv", index=False)
    objects.to_csv(out_dir / "objects.csv", index=False)
    logger.info(f"Wrote evaluation report to {out_dir}")
    return out_dir / "report.json"


def format_report(report: EvalReport) -> str:
    rows = [["mIoU", report.miou]]
    rows += [[f"Pr@{t:g}", v] for t, v in report.precision_at.items()]
    rows += [["Oc-IoU", report.oc_iou], ["J", report.j_mean], ["F", report.f_mean], ["J&F", report.jf_mean]]
    return tabulate(rows, headers=["metric", "value"], tablefmt="psql", floatfmt=".4f")
