# harness/analysis.py
"""Diagnostics over a trained model: per-level sentence similarity, interim-mask quality, prior localisation."""
import itertools
import logging
from collections import Counter
from typing import Optional

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from refseg.clip_prior import PriorProvider, compute_heatmap
from refseg.embedding.base import PATCH, EmbeddingBackend
from refseg.harness.batching import collate
from refseg.metrics import iou
from refseg.models import Dataset, SampleRef
from refseg.network import RISModel
from refseg.text_encoder import Vocabulary
from refseg.text_frontend import prompt_for_expression

logger = logging.getLogger(__name__)


@torch.no_grad()
def level_similarity(model: RISModel, vocab: Vocabulary, dataset: Dataset,
                     provider: Optional[PriorProvider] = None, dtype=torch.float32) -> pd.DataFrame:
    """
    Mean cosine similarity of sentence features at every CMD level (0 = text
    encoder output), for same-object pairs and for different-object pairs
    within a scene.
    """
    model.eval()
    sums = {}
    for si, scene in enumerate(dataset.scenes):
        samples = [dataset.sample(SampleRef(si, ii, ei)) for ii, inst in enumerate(scene.instances)
                   for ei in range(len(inst.expressions))]
        if len(samples) < 2:
            continue
        batch = collate(samples, vocab, provider, dtype)
        out = model(*batch.model_inputs())
        for level in range(len(out.words)):
            feats = F.normalize(out.sentence_features(level), dim=-1)
            cos = feats @ feats.T
            for a, b in itertools.combinations(range(len(samples)), 2):
                kind = "same_object" if samples[a].object_key == samples[b].object_key else "different_object"
                total, count = sums.get((level, kind), (0.0, 0))
                sums[(level, kind)] = (total + float(cos[a, b]), count + 1)
    rows = []
    for (level, kind), (total, count) in sorted(sums.items()):
        rows.append({"level": level, "pair": kind, "mean_cosine": total / count, "pairs": count})
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    return frame.pivot(index="level", columns="pair", values="mean_cosine").reset_index()


def unique_color_samples(dataset: Dataset, direct_only: bool = True):
    """Samples whose target colour appears once in its scene; by default the direct-template expression only."""
    for sample in dataset.samples():
        colors = Counter(inst.color for inst in sample.scene.instances)
        if colors[sample.instance.color] != 1:
            continue
        if direct_only and sample.ref.expression_index != 0:
            continue
        yield sample


@torch.no_grad()
def interim_mask_iou(model: RISModel, vocab: Vocabulary, dataset: Dataset, provider: Optional[PriorProvider],
                     layer: int = 0, dtype=torch.float32, batch_size: int = 64) -> float:
    """Mean IoU of the chosen query's mask at a decoder stage, against the stride-4 GT, on unique-colour targets."""
    model.eval()
    samples = list(unique_color_samples(dataset))
    ious = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = collate(chunk, vocab, provider, dtype)
        pred = model(*batch.model_inputs()).predictions[layer]
        for b in range(len(chunk)):
            index = int(torch.argmax(pred.prob_logits[b]))
            mask = (pred.mask_logits[b, index].sigmoid() > 0.5).numpy()
            ious.append(iou(mask, batch.gt_masks[b].numpy()))
    return float(np.mean(ious)) if ious else float("nan")


def heatmap_localization(backend: EmbeddingBackend, dataset: Dataset, use_extractor: bool = True) -> float:
    """
    Fraction of unique-colour samples whose heatmap argmax patch has its centre
    inside the target's bounding box.
    """
    hits, total = 0, 0
    for sample in unique_color_samples(dataset):
        prompt = prompt_for_expression(sample.expression, use_extractor)
        heatmap = compute_heatmap(backend.embed_image(sample.scene.image, sample.scene.scene_id),
                                  backend.embed_text(prompt))
        row, col = np.unravel_index(int(torch.argmax(heatmap.grid)), tuple(heatmap.grid.shape))
        cy, cx = row * PATCH + PATCH // 2, col * PATCH + PATCH // 2
        r0, c0, r1, c1 = sample.instance.bbox()
        hits += int(r0 <= cy <= r1 and c0 <= cx <= c1)
        total += 1
    if total == 0:
        logger.warning("No unique-colour samples to localise")
        return float("nan")
    return hits / total

