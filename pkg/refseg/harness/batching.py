# harness/batching.py
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
from torch import Tensor

from refseg.clip_prior import PriorProvider
from refseg.matching_loss import downsample_mask
from refseg.models import ReferringSample
from refseg.network import num_prior_tokens
from refseg.text_encoder import Vocabulary, encode_batch


@dataclass
class Batch:
    images: Tensor          # B×3×H×W
    token_ids: Tensor       # B×L
    padding: Tensor         # B×L
    similarity: Tensor      # B×(M+1)
    gt_masks: Tensor        # B×(H/4)×(W/4), bool
    samples: List[ReferringSample]

    def __len__(self) -> int:
        return len(self.samples)

    def model_inputs(self):
        return self.images, self.token_ids, self.padding, self.similarity


def images_to_tensor(images: List[np.ndarray], dtype=torch.float32) -> Tensor:
    """H×W×3 float images in [0, 1] -> B×3×H×W."""
    stacked = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(stacked).permute(0, 3, 1, 2).contiguous().to(dtype)


def collate(samples: List[ReferringSample], vocab: Vocabulary, provider: Optional[PriorProvider],
            dtype=torch.float32) -> Batch:
    """Stacks samples into model-ready tensors; without a provider the prior input is zeros."""
    images = images_to_tensor([s.scene.image for s in samples], dtype)
    token_ids, padding = encode_batch(vocab, [s.expression for s in samples])
    if provider is None:
        similarity = torch.zeros(len(samples), num_prior_tokens(images.shape[-1]), dtype=dtype)
    else:
        similarity = torch.as_tensor(np.stack([
            provider.similarity(s.scene.image, s.scene.scene_id, s.expression) for s in samples
        ])).to(dtype)
    gt_masks = torch.stack([downsample_mask(s.instance.mask) for s in samples])
    return Batch(images=images, token_ids=token_ids, padding=padding, similarity=similarity,
                 gt_masks=gt_masks, samples=list(samples))
