# network.py
"""The full referring segmentation model: encoders, CMD, CLIP prior and masked-attention decoder."""
from dataclasses import dataclass
from typing import List

from torch import Tensor, nn

from refseg.clip_prior import ClipPrior
from refseg.cmd import ContextualMultimodalDecoder
from refseg.config import AblationFlags, ModelConfig
from refseg.decoder_head import MaskedAttentionDecoder, PredictionSet
from refseg.embedding.base import PATCH
from refseg.mcc import sentence_feature
from refseg.text_encoder import TextEncoder
from refseg.visual_encoder import VisualEncoder


def num_prior_tokens(image_size: int) -> int:
    return (image_size // PATCH) ** 2 + 1


@dataclass
class RISOutput:
    predictions: List[PredictionSet]   # initial + one per decoder layer, final last
    words: List[Tensor]                # F_w_0..F_w_4, each B×L×C
    padding: Tensor                    # B×L
    queries: Tensor                    # refined F_o, B×N×C

    @property
    def final(self) -> PredictionSet:
        return self.predictions[-1]

    def sentence_features(self, level: int = -1) -> Tensor:
        return sentence_feature(self.words[level], self.padding)


class RISModel(nn.Module):
    def __init__(self, config: ModelConfig, flags: AblationFlags, vocab_size: int, image_size: int):
        super().__init__()
        self.config = config
        self.flags = flags
        self.visual_encoder = VisualEncoder(config.dim, config.backbone_widths)
        self.text_encoder = TextEncoder(vocab_size, config.dim, config.heads, positional=config.text_positional)
        self.cmd = ContextualMultimodalDecoder(config.dim, config.heads, config.cmd_levels, enabled=flags.cmd)
        self.prior = ClipPrior(num_prior_tokens(image_size), config.dim, enabled=flags.clip_prior)
        self.decoder = MaskedAttentionDecoder(config.dim, config.heads, config.decoder_layers, config.ffn_dim)

    def backbone_parameters(self):
        return self.visual_encoder.parameters()

    def head_parameters(self):
        backbone = {id(p) for p in self.visual_encoder.parameters()}
        return [p for p in self.parameters() if id(p) not in backbone]

    def forward(self, images: Tensor, token_ids: Tensor, padding: Tensor, similarity: Tensor) -> RISOutput:
        """
        images B×3×H×W, token_ids/padding B×L, similarity B×(M+1) from the frozen
        embedding backend (ignored when the prior is disabled).
        """
        visual = self.visual_encoder(images)
        words = self.text_encoder(token_ids, padding)
        fused = self.cmd(visual.maps, words.features, padding)
        pooled = sentence_feature(words.features, padding)
        queries = self.prior(similarity.to(pooled.dtype), pooled, self.config.num_queries)
        decoded = self.decoder(queries, fused.visual)
        return RISOutput(predictions=decoded.predictions, words=fused.words,
                         padding=padding, queries=decoded.queries)
