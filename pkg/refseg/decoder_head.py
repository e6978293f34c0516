# decoder_head.py
"""Masked-attention transformer decoder over the text-guided pyramid, plus the prediction heads."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from refseg.cmd import MultiHeadAttention
from refseg.errors import ArgumentError

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 0.5


@dataclass
class PredictionSet:
    prob_logits: Tensor   # B×N (or N)
    mask_logits: Tensor   # B×N×h×w (or N×h×w), h×w = H/4×W/4

    @property
    def probs(self) -> Tensor:
        return torch.sigmoid(self.prob_logits)

    def __getitem__(self, index: int) -> "PredictionSet":
        """Single batch item."""
        return PredictionSet(self.prob_logits[index], self.mask_logits[index])


def predict(queries: Tensor, fine_visual: Tensor, class_head: nn.Linear) -> PredictionSet:
    """
    mask_logits[n] = <F_v_4(pixel), F_o[n]> at every stride-4 location; p = sigmoid(linear(F_o)).

    queries is N×C or B×N×C, fine_visual C×h×w or B×C×h×w.
    """
    squeeze = queries.dim() == 2
    if squeeze:
        queries, fine_visual = queries.unsqueeze(0), fine_visual.unsqueeze(0)
    if queries.shape[-1] != fine_visual.shape[1]:
        raise ArgumentError(f"query width {queries.shape[-1]} does not match feature width {fine_visual.shape[1]}")
    mask_logits = torch.einsum("bnc,bchw->bnhw", queries, fine_visual)
    prob_logits = class_head(queries).squeeze(-1)
    if squeeze:
        return PredictionSet(prob_logits[0], mask_logits[0])
    return PredictionSet(prob_logits, mask_logits)


def attention_mask_from(mask_logits: Tensor, size) -> Tensor:
    """
    B×N×(h·w) boolean mask, True where attention is blocked: the interim mask
    resized to the target scale has probability below 0.5. Queries whose mask
    is empty are left fully open.
    """
    resized = F.interpolate(mask_logits.detach(), size=size, mode="bilinear", align_corners=False)
    blocked = (resized.sigmoid() < MASK_THRESHOLD).flatten(2)
    empty = blocked.all(dim=-1, keepdim=True)
    return blocked & ~empty


class DecoderLayer(nn.Module):
    """Masked cross-attention, self-attention, then a feed-forward block; post-norm residuals."""

    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm_self = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))
        self.norm_ffn = nn.LayerNorm(dim)

    def forward(self, queries: Tensor, memory: Tensor, attn_mask: Optional[Tensor] = None,
                return_weights: bool = False):
        attended, weights = self.cross_attn(queries, memory, memory, attn_mask=attn_mask, return_weights=True)
        queries = self.norm_cross(queries + attended)
        queries = self.norm_self(queries + self.self_attn(queries, queries, queries))
        queries = self.norm_ffn(queries + self.ffn(queries))
        return (queries, weights) if return_weights else queries


@dataclass
class DecoderOutput:
    queries: Tensor                                   # F_o, B×N×C
    predictions: List[PredictionSet]                  # initial, then one per layer
    attention_masks: List[Tensor] = field(default_factory=list)
    attention_weights: List[Tensor] = field(default_factory=list)

    @property
    def final(self) -> PredictionSet:
        return self.predictions[-1]

    @property
    def auxiliary(self) -> List[PredictionSet]:
        return self.predictions[:-1]


class MaskedAttentionDecoder(nn.Module):
    """
    Refines the N object queries layer by layer. Layer l attends to scale
    l mod 3 of (F_v_1, F_v_2, F_v_3), restricted to where the previous
    prediction's mask is on. Every layer emits an interim prediction against F_v_4.
    """

    def __init__(self, dim: int, heads: int, num_layers: int = 9, ffn_dim: int = 128, num_scales: int = 3):
        super().__init__()
        self.layers = nn.ModuleList([DecoderLayer(dim, heads, ffn_dim) for _ in range(num_layers)])
        self.class_head = nn.Linear(dim, 1)
        self.num_scales = num_scales

    def forward(self, queries: Tensor, visual: List[Tensor], return_weights: bool = False) -> DecoderOutput:
        if len(visual) != self.num_scales + 1:
            raise ArgumentError(f"expected {self.num_scales + 1} feature maps, got {len(visual)}")
        fine = visual[-1]
        prediction = predict(queries, fine, self.class_head)
        output = DecoderOutput(queries=queries, predictions=[prediction])
        for index, layer in enumerate(self.layers):
            scale = visual[index % self.num_scales]
            memory = scale.flatten(2).transpose(1, 2)
            attn_mask = attention_mask_from(prediction.mask_logits, scale.shape[-2:])
            queries, weights = layer(queries, memory, attn_mask, return_weights=True)
            prediction = predict(queries, fine, self.class_head)
            output.predictions.append(prediction)
            if return_weights:
                output.attention_masks.append(attn_mask)
                output.attention_weights.append(weights)
        output.queries = queries
        return output


def decode_queries(decoder: MaskedAttentionDecoder, queries: Tensor, visual: List[Tensor]) -> DecoderOutput:
    """Single-sample convenience: N×C queries and C×h×w maps."""
    out = decoder(queries.unsqueeze(0), [v.unsqueeze(0) for v in visual])
    return DecoderOutput(queries=out.queries[0], predictions=[p[0] for p in out.predictions])
