# harness/inference.py
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from refseg.clip_prior import PriorProvider
from refseg.decoder_head import MASK_THRESHOLD, PredictionSet
from refseg.embedding.base import EmbeddingBackend
from refseg.errors import MissingParseError
from refseg.harness.batching import collate
from refseg.harness.checkpoint import load_checkpoint
from refseg.models import Dataset, Expression, InstanceAnnotation, ReferringSample, SampleRef, Scene
from refseg.network import RISModel
from refseg.rle import encode_mask
from refseg.text_encoder import Vocabulary

logger = logging.getLogger(__name__)

UPSAMPLE = 4


@dataclass
class InferenceResult:
    mask: np.ndarray        # H×W bool
    probability: float
    query_index: int


def select(pred: PredictionSet) -> InferenceResult:
    """Highest-probability query; its mask upsampled ×4 (nearest) and kept where sigmoid > 0.5."""
    probs = pred.probs
    index = int(torch.argmax(probs))
    logits = pred.mask_logits[index][None, None]
    full = F.interpolate(logits, scale_factor=UPSAMPLE, mode="nearest")[0, 0]
    mask = (full.sigmoid() > MASK_THRESHOLD).cpu().numpy()
    return InferenceResult(mask=mask, probability=float(probs[index]), query_index=index)


class Predictor:
    """Stateless per call; safe to share across threads once loaded."""

    def __init__(self, model: RISModel, vocab: Vocabulary, provider: Optional[PriorProvider],
                 dtype=torch.float32):
        self.model = model.eval()
        self.vocab = vocab
        self.provider = provider
        self.dtype = dtype

    @classmethod
    def from_checkpoint(cls, path: Path, backend: EmbeddingBackend, dtype=torch.float32) -> "Predictor":
        ckpt = load_checkpoint(path, dtype)
        flags = ckpt.config.ablation
        provider = PriorProvider(backend, flags.main_object_extractor) if flags.clip_prior else None
        return cls(ckpt.model, ckpt.vocab, provider, dtype)

    def _check(self, expression: Expression):
        if expression.parse is None:
            raise MissingParseError(
                f"Expression '{expression.text}' has no dependency parse; supply one as CoNLL-U "
                f"(see the extract-object command) or in the dataset's parse field")

    @torch.no_grad()
    def predict_samples(self, samples: List[ReferringSample]) -> List[InferenceResult]:
        for s in samples:
            self._check(s.expression)
        batch = collate(samples, self.vocab, self.provider, self.dtype)
        out = self.model(*batch.model_inputs())
        return [select(out.final[b]) for b in range(len(samples))]

    def infer(self, image: np.ndarray, expression: Expression, scene_id: Optional[str] = None) -> InferenceResult:
        """One image, one expression."""
        self._check(expression)
        h, w = image.shape[:2]
        placeholder = InstanceAnnotation(mask=np.zeros((h, w), dtype=bool), object_key="", expressions=[expression])
        scene = Scene(image=image, instances=[placeholder], scene_id=scene_id)
        sample = ReferringSample(scene, placeholder, expression, SampleRef(0, 0, 0))
        return self.predict_samples([sample])[0]


def _chunks(items: List, size: int) -> Iterable[List]:
    for start in range(0, len(items), size):
        yield items[start:start + size]


def predict_dataset(predictor: Predictor, dataset: Dataset, batch_size: int = 32,
                    progress: bool = False) -> List[dict]:
    """One prediction record per (scene, instance, expression)."""
    samples = list(dataset.samples())
    records = []
    chunks = _chunks(samples, batch_size)
    if progress:
        chunks = tqdm(chunks, total=(len(samples) + batch_size - 1) // batch_size, desc="Inference")
    for chunk in chunks:
        for sample, result in zip(chunk, predictor.predict_samples(chunk)):
            records.append({
                "scene_id": sample.scene.scene_id,
                "instance_index": sample.ref.instance_index,
                "expression_index": sample.ref.expression_index,
                "mask": encode_mask(result.mask),
                "probability": result.probability,
                "query_index": result.query_index,
            })
    return records


def write_predictions(records: List[dict], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    logger.info(f"Wrote {len(records)} predictions to {path}")
    return path
