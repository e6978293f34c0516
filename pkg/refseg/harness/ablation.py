# harness/ablation.py
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import pandas as pd
from tabulate import tabulate
from tqdm import tqdm

from refseg.config import AblationFlags, RunConfig
from refseg.embedding.base import EmbeddingBackend
from refseg.harness.analysis import interim_mask_iou, level_similarity
from refseg.harness.plots import plot_level_similarity
from refseg.harness.trainer import Trainer, validate
from refseg.models import Dataset

logger = logging.getLogger(__name__)

DEFAULT_GRID: List[AblationFlags] = [
    AblationFlags(clip_prior=False, cmd=False, mcc=False),
    AblationFlags(clip_prior=True, cmd=False, mcc=False),
    AblationFlags(clip_prior=False, cmd=True, mcc=False),
    AblationFlags(clip_prior=False, cmd=True, mcc=True),
    AblationFlags(clip_prior=True, cmd=True, mcc=True),
]


@dataclass
class AblationReport:
    table: pd.DataFrame     # one row per configuration
    curves: pd.DataFrame    # per-level sentence similarity per configuration

    def format(self) -> str:
        return tabulate(self.table, headers="keys", tablefmt="psql", showindex=False, floatfmt=".4f")


def build_runs(config: RunConfig, grid: Optional[Sequence[AblationFlags]] = None,
               num_queries: Optional[Sequence[int]] = None) -> List[Tuple[str, RunConfig]]:
    """The flag grid, then one full-model run per query count in the sweep."""
    runs = []
    for flags in grid or DEFAULT_GRID:
        run = config.model_copy(deep=True)
        run.ablation = flags.model_copy()
        runs.append((flags.label(), run))
    for n in num_queries or []:
        run = config.model_copy(deep=True)
        run.ablation = AblationFlags()
        run.model.num_queries = int(n)
        runs.append((f"full N={n}", run))
    return runs


def run_ablation(config: RunConfig, train_set: Dataset, val_set: Dataset, backend: EmbeddingBackend,
                 out_dir: Path, grid: Optional[Sequence[AblationFlags]] = None,
                 num_queries: Optional[Sequence[int]] = None, progress: bool = True) -> AblationReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, curves = [], []
    runs = build_runs(config, grid, num_queries)
    for name, run in tqdm(runs, desc="Ablation", disable=not progress):
        logger.info(f"Ablation run '{name}'")
        slug = name.replace("+", "plus_").replace(" ", "_").replace("=", "")
        trainer = Trainer(run, train_set, backend, val=None, output_dir=out_dir / slug)
        trainer.train(progress=False)
        scores = validate(trainer.predictor(), val_set)
        flags = run.ablation
        rows.append({
            "configuration": name,
            "clip_prior": flags.clip_prior,
            "cmd": flags.cmd,
            "mcc": flags.mcc,
            "num_queries": run.model.num_queries,
            **scores,
            "layer0_iou": interim_mask_iou(trainer.model, trainer.vocab, val_set, trainer.provider),
        })
        similarity = level_similarity(trainer.model, trainer.vocab, val_set, trainer.provider)
        similarity.insert(0, "configuration", name)
        curves.append(similarity)

    report = AblationReport(table=pd.DataFrame(rows), curves=pd.concat(curves, ignore_index=True))
    report.table.to_csv(out_dir / "ablation.csv", index=False)
    report.curves.to_csv(out_dir / "similarity.csv", index=False)
    plot_level_similarity(report.curves, out_dir / "similarity.png")
    logger.info(f"Ablation results written to {out_dir}")
    return report
