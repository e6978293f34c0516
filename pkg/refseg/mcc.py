# mcc.py
"""Meaning consistency constraint: sentence pooling, triplet loss and triplet sampling."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from refseg.errors import DegeneracyError
from refseg.models import Dataset, SampleRef

logger = logging.getLogger(__name__)


def sentence_feature(words: Tensor, padding: Optional[Tensor] = None) -> Tensor:
    """Mean over the word axis (L×C -> C, or B×L×C -> B×C), ignoring padded words."""
    if padding is None:
        return words.mean(dim=-2)
    keep = (~padding).to(words.dtype).unsqueeze(-1)
    return (words * keep).sum(dim=-2) / keep.sum(dim=-2).clamp_min(1.0)


def _cosine(a: Tensor, b: Tensor) -> Tensor:
    return (a * b).sum(dim=-1) / (a.norm(dim=-1) * b.norm(dim=-1))


def loss_from_cosines(c12: Tensor, c1n: Tensor, c2n: Tensor, temperature: float = 1.0) -> Tensor:
    """-c12/t + log(e^{c1n/t} + e^{c2n/t}), elementwise."""
    negatives = torch.stack([torch.as_tensor(c1n), torch.as_tensor(c2n)], dim=-1) / temperature
    return -torch.as_tensor(c12) / temperature + torch.logsumexp(negatives, dim=-1)


def mcc_loss(s_p1: Tensor, s_p2: Tensor, s_n: Tensor, temperature: float = 1.0) -> Tensor:
    """
    -log( e^{c(p1,p2)} / (e^{c(p1,n)} + e^{c(p2,n)}) ) with c the cosine similarity
    divided by the temperature. Batched inputs are averaged.
    """
    for name, s in (("p1", s_p1), ("p2", s_p2), ("n", s_n)):
        if (s.norm(dim=-1) == 0).any():
            raise DegeneracyError(f"sentence feature {name} has zero norm")
    loss = loss_from_cosines(_cosine(s_p1, s_p2), _cosine(s_p1, s_n), _cosine(s_p2, s_n), temperature)
    return loss.mean()


@dataclass(frozen=True)
class Triplet:
    p1: SampleRef
    p2: SampleRef
    n: SampleRef


@dataclass
class SamplingStats:
    skipped_scenes: int = 0


def sample_triplets(dataset: Dataset, scene_indices: Sequence[int], rng: np.random.Generator,
                    stats: Optional[SamplingStats] = None) -> List[Triplet]:
    """
    One triplet per scene of the batch: two different expressions of a random
    object plus one expression of another object, taken from the same scene
    when it has one and otherwise from the other scenes of the batch.
    """
    stats = stats if stats is not None else SamplingStats()
    triplets = []
    for si in scene_indices:
        scene = dataset.scenes[si]
        candidates = [ii for ii, inst in enumerate(scene.instances) if len(inst.expressions) >= 2]
        if not candidates:
            stats.skipped_scenes += 1
            logger.warning(f"Scene {scene.scene_id} has no object with two expressions; skipped")
            continue
        ii = candidates[int(rng.integers(len(candidates)))]
        inst = scene.instances[ii]
        e1, e2 = rng.choice(len(inst.expressions), size=2, replace=False)

        pool = [(si, jj) for jj, other in enumerate(scene.instances)
                if jj != ii and other.expressions and other.object_key != inst.object_key]
        if not pool:
            pool = [(sj, jj) for sj in dict.fromkeys(scene_indices) if sj != si
                    for jj, other in enumerate(dataset.scenes[sj].instances)
                    if other.expressions and other.object_key != inst.object_key]
        if not pool:
            stats.skipped_scenes += 1
            logger.warning(f"No negative available for scene {scene.scene_id} (skipped {stats.skipped_scenes} so far)")
            continue
        sn, jn = pool[int(rng.integers(len(pool)))]
        en = int(rng.integers(len(dataset.scenes[sn].instances[jn].expressions)))
        triplets.append(Triplet(p1=SampleRef(si, ii, int(e1)), p2=SampleRef(si, ii, int(e2)), n=SampleRef(sn, jn, en)))
    return triplets


def triplet_expressions(dataset: Dataset, triplet: Triplet) -> tuple:
    return tuple(dataset.sample(ref).expression for ref in (triplet.p1, triplet.p2, triplet.n))
