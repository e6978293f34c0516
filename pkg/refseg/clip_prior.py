# clip_prior.py
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
from torch import Tensor, nn

from refseg.embedding.base import EmbeddingBackend, ImageTokenFeatures, TextEmbedding
from refseg.errors import ArgumentError, DegeneracyError
from refseg.models import Expression
from refseg.text_frontend import prompt_for_expression

logger = logging.getLogger(__name__)

# float32 embeddings leave cosines of about 1e-8 where the exact value is 0
NEAR_ZERO = 1e-6


@dataclass
class Heatmap:
    similarity: Tensor   # M+1, class slot first, unit L2 norm
    grid: Tensor         # (H/16)×(W/16), class slot dropped


def _as_tensor(x: Union[np.ndarray, Tensor], dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x.detach().to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def compute_heatmap(img_tokens: ImageTokenFeatures, txt: Union[TextEmbedding, Tensor, np.ndarray],
                    dtype=torch.float64) -> Heatmap:
    """Cosine similarity of every image token with the prompt, L2-normalised over tokens."""
    tokens = _as_tensor(img_tokens.tokens, dtype)
    vector = _as_tensor(txt.vector if isinstance(txt, TextEmbedding) else txt, dtype)
    if tokens.shape[-1] != vector.shape[-1]:
        raise ArgumentError(f"image tokens have width {tokens.shape[-1]}, text has {vector.shape[-1]}")
    token_norms = tokens.norm(dim=-1)
    text_norm = vector.norm()
    if (token_norms <= NEAR_ZERO).any() or text_norm <= NEAR_ZERO:
        raise DegeneracyError("zero-norm image token or text embedding")
    scores = (tokens / token_norms[:, None]) @ (vector / text_norm)
    if scores.abs().max() <= NEAR_ZERO:
        raise DegeneracyError("prompt is orthogonal to every image token; heatmap undefined")
    similarity = scores / scores.norm()
    rows, cols = img_tokens.grid
    return Heatmap(similarity=similarity, grid=similarity[1:].reshape(rows, cols))


class ClipPrior(nn.Module):
    """
    Turns a heatmap into N identical initial object queries.

    The M+1 similarity vector is projected to C, tiled N times and added to the
    tiled pooled text vector. Disabled, the queries are the tiled text alone.
    """

    def __init__(self, num_tokens: int, dim: int, enabled: bool = True):
        super().__init__()
        self.enabled = enabled
        self.num_tokens = num_tokens
        self.proj = nn.Linear(num_tokens, dim)

    def forward(self, similarity: Tensor, text: Tensor, num_queries: int) -> Tensor:
        if num_queries < 1:
            raise ArgumentError(f"num_queries must be >= 1, got {num_queries}")
        squeeze = text.dim() == 1
        if squeeze:
            similarity, text = similarity.unsqueeze(0), text.unsqueeze(0)
        queries = text.unsqueeze(1).expand(-1, num_queries, -1)
        if self.enabled:
            if similarity.shape[-1] != self.num_tokens:
                raise ArgumentError(f"heatmap has {similarity.shape[-1]} entries, expected {self.num_tokens}")
            prior = self.proj(similarity.to(text.dtype))
            queries = queries + prior.unsqueeze(1).expand(-1, num_queries, -1)
        return queries.squeeze(0) if squeeze else queries


def init_queries(heatmap: Heatmap, text: Tensor, num_queries: int, prior: ClipPrior) -> Tensor:
    """N×C queries for a single sample."""
    return prior(heatmap.similarity, text, num_queries)


class PriorProvider:
    """Computes and caches heatmap similarity vectors per (scene, prompt) from a frozen backend."""

    def __init__(self, backend: EmbeddingBackend, use_extractor: bool = True):
        self.backend = backend
        self.use_extractor = use_extractor
        self._image_cache: Dict[str, ImageTokenFeatures] = {}
        self._cache: Dict[Tuple[str, str], np.ndarray] = {}
        self.degenerate = 0

    def image_tokens(self, image: np.ndarray, scene_id: Optional[str]) -> ImageTokenFeatures:
        if scene_id is None:
            return self.backend.embed_image(image)
        if scene_id not in self._image_cache:
            self._image_cache[scene_id] = self.backend.embed_image(image, scene_id)
        return self._image_cache[scene_id]

    def heatmap(self, image: np.ndarray, scene_id: Optional[str], expression: Expression) -> Heatmap:
        prompt = prompt_for_expression(expression, self.use_extractor)
        return compute_heatmap(self.image_tokens(image, scene_id), self.backend.embed_text(prompt))

    def similarity(self, image: np.ndarray, scene_id: Optional[str], expression: Expression) -> np.ndarray:
        prompt = prompt_for_expression(expression, self.use_extractor)
        key = (scene_id, prompt)
        if scene_id is not None and key in self._cache:
            return self._cache[key]
        tokens = self.image_tokens(image, scene_id)
        try:
            value = compute_heatmap(tokens, self.backend.embed_text(prompt)).similarity.numpy()
        except DegeneracyError:
            self.degenerate += 1
            logger.warning(f"Degenerate heatmap for '{prompt}' ({self.degenerate} so far); using a zero prior")
            value = np.zeros(tokens.tokens.shape[0])
        if scene_id is not None:
            self._cache[key] = value
        return value
