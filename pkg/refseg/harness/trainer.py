# harness/trainer.py
"""Single-process training loop with deterministic batches, step LR decay and validation."""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from torch.nn.utils import clip_grad_norm_
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from tqdm import tqdm

from refseg.clip_prior import PriorProvider
from refseg.config import RunConfig
from refseg.embedding.base import EmbeddingBackend
from refseg.errors import NonFiniteLossError
from refseg.harness.batching import Batch, collate
from refseg.harness.checkpoint import save_checkpoint
from refseg.harness.inference import Predictor
from refseg.matching_loss import LossBreakdown, total_loss
from refseg.mcc import SamplingStats, mcc_loss, sample_triplets
from refseg.metrics import iou, precision_at
from refseg.models import Dataset, SampleRef
from refseg.network import RISModel
from refseg.tensor_io import write_tensor
from refseg.text_encoder import Vocabulary

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def lr_at(t: int, base: float, iterations: int, decay: float = 0.1) -> float:
    """base before ceil(2T/3), base·decay from then on."""
    return base if t < math.ceil(2 * iterations / 3) else base * decay


def seed_everything(seed: int, deterministic: bool = True) -> np.random.Generator:
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
    return np.random.default_rng(seed)


def validate(predictor: Predictor, dataset: Dataset, batch_size: int = 64) -> dict:
    """mIoU and Pr@X of the predictor on every sample of the dataset."""
    samples = list(dataset.samples())
    ious = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        for sample, result in zip(chunk, predictor.predict_samples(chunk)):
            ious.append(iou(result.mask, sample.instance.mask))
    pr = precision_at(ious)
    return {"val_miou": float(np.mean(ious)), **{f"val_pr@{t:g}": v for t, v in pr.items()}}


@dataclass
class TrainResult:
    model: RISModel
    vocab: Vocabulary
    log: List[dict]
    checkpoint: Optional[Path]
    final_validation: Optional[dict] = None
    skipped_scenes: int = 0
    batches_without_triplets: int = 0


@dataclass
class StepOutput:
    breakdown: LossBreakdown
    batch: Batch
    num_triplets: int
    extras: dict = field(default_factory=dict)


class Trainer:
    def __init__(self, config: RunConfig, train: Dataset, backend: EmbeddingBackend,
                 val: Optional[Dataset] = None, output_dir: Optional[Path] = None):
        self.config = config
        self.train_set = train
        self.val_set = val
        self.output_dir = Path(output_dir) if output_dir is not None else config.resolved_output_dir()
        self.dtype = DTYPES[config.dtype]

        self.rng = seed_everything(config.seed, config.deterministic)
        self.vocab = Vocabulary.build(s.expression for s in train.samples())
        self.model = RISModel(config.model, config.ablation, len(self.vocab), config.generation.image_size).to(self.dtype)

        flags = config.ablation
        self.provider = PriorProvider(backend, flags.main_object_extractor) if flags.clip_prior else None

        optim = config.optim
        self.optimizer = AdamW([
            {"params": list(self.model.backbone_parameters()), "lr": optim.backbone_lr},
            {"params": self.model.head_parameters(), "lr": optim.lr},
        ], weight_decay=optim.weight_decay)
        decay_step = optim.decay_step()
        self.scheduler = LambdaLR(self.optimizer, lambda t: 1.0 if t < decay_step else optim.lr_decay)

        self.sampling = SamplingStats()
        self.batches_without_triplets = 0
        self.log: List[dict] = []

    # --- Batches ---
    def next_refs(self):
        """B random scenes, one triplet each; scenes that cannot form one contribute a single sample."""
        n = len(self.train_set)
        scene_indices = self.rng.choice(n, size=min(self.config.optim.batch_size, n), replace=False)
        triplets = sample_triplets(self.train_set, [int(i) for i in scene_indices], self.rng, self.sampling)
        covered = {t.p1.scene_index for t in triplets}
        refs = [ref for t in triplets for ref in (t.p1, t.p2, t.n)]
        for si in scene_indices:
            si = int(si)
            if si in covered:
                continue
            scene = self.train_set.scenes[si]
            ii = int(self.rng.integers(len(scene.instances)))
            refs.append(SampleRef(si, ii, int(self.rng.integers(len(scene.instances[ii].expressions)))))
        return refs, len(triplets)

    def step(self) -> StepOutput:
        refs, num_triplets = self.next_refs()
        batch = collate([self.train_set.sample(r) for r in refs], self.vocab, self.provider, self.dtype)
        out = self.model(*batch.model_inputs())

        mcc = None
        if num_triplets == 0:
            self.batches_without_triplets += 1
        elif self.config.mcc_active:
            # the first 3·T rows of the batch are the triplets, in (p1, p2, n) order
            sentences = out.sentence_features()[:3 * num_triplets].view(num_triplets, 3, -1)
            mcc = mcc_loss(sentences[:, 0], sentences[:, 1], sentences[:, 2], self.config.loss.mcc_temperature)

        breakdown = total_loss(out.predictions, batch.gt_masks, self.config.loss, mcc,
                               self.config.effective_mcc_weight())
        return StepOutput(breakdown=breakdown, batch=batch, num_triplets=num_triplets)

    def _dump_nonfinite(self, iteration: int, result: StepOutput) -> Path:
        dump = self.output_dir / f"nonfinite-{iteration:06d}"
        dump.mkdir(parents=True, exist_ok=True)
        info = {
            "iteration": iteration,
            "loss": result.breakdown.as_dict(),
            "samples": [{"scene_id": s.scene.scene_id, "object_key": s.object_key, "expression": s.expression.text}
                        for s in result.batch.samples],
        }
        (dump / "batch.json").write_text(json.dumps(info, indent=2), encoding="utf-8")
        write_tensor(dump / "images.bin", result.batch.images.detach().cpu().numpy())
        write_tensor(dump / "similarity.bin", result.batch.similarity.detach().cpu().numpy())
        return dump

    def predictor(self) -> Predictor:
        return Predictor(self.model, self.vocab, self.provider, self.dtype)

    # --- Loop ---
    def train(self, progress: bool = True, save: bool = True) -> TrainResult:
        optim = self.config.optim
        self.output_dir.mkdir(parents=True, exist_ok=True)
        log_path = self.output_dir / "train_log.jsonl"
        logger.info(f"Training '{self.config.ablation.label()}' for {optim.iterations} iterations -> {self.output_dir}")

        validation = None
        with open(log_path, "w", encoding="utf-8") as log_file:
            iterations = tqdm(range(optim.iterations), desc="Training", disable=not progress)
            for t in iterations:
                self.model.train()
                lr = self.optimizer.param_groups[1]["lr"]
                result = self.step()
                total = result.breakdown.total
                if not torch.isfinite(total):
                    dump = self._dump_nonfinite(t, result)
                    logger.error(f"Non-finite loss at iteration {t}; batch dumped to {dump}")
                    raise NonFiniteLossError(f"loss became {float(total)} at iteration {t}", dump_path=dump)

                self.optimizer.zero_grad(set_to_none=True)
                total.backward()
                if optim.grad_clip > 0:
                    clip_grad_norm_(self.model.parameters(), optim.grad_clip)
                self.optimizer.step()
                self.scheduler.step()

                record = {"iteration": t, "lr": lr, **result.breakdown.as_dict(), "triplets": result.num_triplets}
                last = t == optim.iterations - 1
                if self.val_set is not None and optim.val_every > 0 and ((t + 1) % optim.val_every == 0 or last):
                    self.model.eval()
                    validation = validate(self.predictor(), self.val_set)
                    record.update(validation)
                    logger.info(f"Iteration {t + 1}: val mIoU {validation['val_miou']:.4f}")
                if t % optim.log_every == 0 or last or "val_miou" in record:
                    self.log.append(record)
                    log_file.write(json.dumps(record) + "\n")
                if progress:
                    iterations.set_postfix(loss=f"{record['total']:.3f}")

        if self.sampling.skipped_scenes:
            logger.warning(f"{self.sampling.skipped_scenes} scenes could not form an MCC triplet")
        checkpoint = None
        if save:
            checkpoint = save_checkpoint(self.output_dir / "checkpoint", self.model, self.config, self.vocab,
                                         optim.iterations, self.optimizer, self.rng)
        self.model.eval()
        return TrainResult(model=self.model, vocab=self.vocab, log=self.log, checkpoint=checkpoint,
                           final_validation=validation, skipped_scenes=self.sampling.skipped_scenes,
                           batches_without_triplets=self.batches_without_triplets)


def train(config: RunConfig, train_set: Dataset, backend: EmbeddingBackend, val_set: Optional[Dataset] = None,
          output_dir: Optional[Path] = None, progress: bool = True) -> TrainResult:
    return Trainer(config, train_set, backend, val_set, output_dir).train(progress=progress)
