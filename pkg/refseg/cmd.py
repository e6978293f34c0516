# cmd.py
"""Contextual Multimodal Decoder: four levels of bidirectional attention transfer."""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from refseg.errors import ArgumentError

logger = logging.getLogger(__name__)


class MultiHeadAttention(nn.Module):
    """
    Multi-head scaled dot-product cross-attention with its own q/k/v/out projections.

    Masks use True for positions that must NOT be attended. A query row whose
    keys are all blocked falls back to attending everywhere.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if heads < 1 or dim % heads != 0:
            raise ArgumentError(f"heads ({heads}) must divide dim ({dim})")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        for proj in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            nn.init.xavier_uniform_(proj.weight)
            nn.init.zeros_(proj.bias)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, q: Tensor, k: Tensor, v: Tensor,
                key_padding_mask: Optional[Tensor] = None,
                attn_mask: Optional[Tensor] = None,
                return_weights: bool = False):
        squeeze = q.dim() == 2
        if squeeze:
            q, k, v = q.unsqueeze(0), k.unsqueeze(0), v.unsqueeze(0)
        if q.shape[-1] != self.dim or k.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise ArgumentError(f"attention width mismatch: q {tuple(q.shape)}, k {tuple(k.shape)}, "
                                f"v {tuple(v.shape)}, expected last dim {self.dim}")
        if k.shape[:2] != v.shape[:2]:
            raise ArgumentError(f"keys {tuple(k.shape)} and values {tuple(v.shape)} do not line up")
        if q.shape[0] != k.shape[0]:
            raise ArgumentError(f"queries have batch {q.shape[0]}, keys have batch {k.shape[0]}")

        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(k))
        vh = self._split(self.v_proj(v))
        scores = qh @ kh.transpose(-2, -1) / math.sqrt(self.head_dim)

        blocked = None
        if key_padding_mask is not None:
            blocked = key_padding_mask[:, None, None, :].expand_as(scores)
        if attn_mask is not None:
            extra = attn_mask if attn_mask.dim() == 4 else attn_mask[:, None]
            extra = extra.expand_as(scores)
            blocked = extra if blocked is None else blocked | extra
        if blocked is not None:
            # rows with nothing left to look at attend everywhere
            blocked = blocked & ~blocked.all(dim=-1, keepdim=True)
            scores = scores.masked_fill(blocked, float("-inf"))

        weights = torch.softmax(scores, dim=-1)
        out = (weights @ vh).transpose(1, 2).reshape(q.shape[0], q.shape[1], self.dim)
        out = self.out_proj(out)
        if squeeze:
            out, weights = out.squeeze(0), weights.squeeze(0)
        return (out, weights) if return_weights else out


def upsample2x(x: Tensor) -> Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


@dataclass
class BATLevelState:
    words: Tensor    # B×L×C
    visual: Tensor   # B×C×h×w


class BATLevel(nn.Module):
    """One level of bidirectional attention transfer."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.text_attn = MultiHeadAttention(dim, heads)
        self.vision_attn = MultiHeadAttention(dim, heads)
        self.conv = nn.Conv2d(dim, dim, kernel_size=3, padding=1)

    def forward(self, visual: Tensor, words: Tensor, prev_visual: Optional[Tensor] = None,
                word_padding: Optional[Tensor] = None) -> BATLevelState:
        b, c, h, w = visual.shape
        flat = visual.flatten(2).transpose(1, 2)
        # text queries the image, gated by the incoming word features
        words = self.text_attn(words, flat, flat) * words
        # image queries the updated words
        fused = self.vision_attn(flat, words, words, key_padding_mask=word_padding) * flat
        fused = fused.transpose(1, 2).reshape(b, c, h, w)
        if prev_visual is not None:
            up = upsample2x(prev_visual)
            if up.shape != fused.shape:
                raise RuntimeError(f"upsampled {tuple(up.shape)} does not match level {tuple(fused.shape)}")
            fused = fused + up
        return BATLevelState(words=words, visual=self.conv(fused))


@dataclass
class CMDOutput:
    visual: List[Tensor]   # F^v_1..F^v_4, coarse to fine
    words: List[Tensor]    # F^w_0..F^w_4

    @property
    def final_words(self) -> Tensor:
        return self.words[-1]


class ContextualMultimodalDecoder(nn.Module):
    def __init__(self, dim: int, heads: int, levels: int = 4, enabled: bool = True):
        super().__init__()
        self.enabled = enabled
        self.levels = nn.ModuleList([BATLevel(dim, heads) for _ in range(levels)]) if enabled else nn.ModuleList()
        self.num_levels = levels

    def forward(self, visual: List[Tensor], words: Tensor, word_padding: Optional[Tensor] = None) -> CMDOutput:
        if len(visual) != self.num_levels:
            raise ArgumentError(f"expected {self.num_levels} visual levels, got {len(visual)}")
        if any(v.shape[0] != words.shape[0] for v in visual):
            raise ArgumentError(f"visual batch {[v.shape[0] for v in visual]} does not match "
                                f"word batch {words.shape[0]}")
        if not self.enabled:
            # identity decoder: projected visual maps, untouched word features
            return CMDOutput(visual=list(visual), words=[words] * (self.num_levels + 1))
        word_levels = [words]
        visual_levels = []
        prev = None
        for level, v in zip(self.levels, visual):
            state = level(v, word_levels[-1], prev, word_padding)
            word_levels.append(state.words)
            visual_levels.append(state.visual)
            prev = state.visual
        return CMDOutput(visual=visual_levels, words=word_levels)
