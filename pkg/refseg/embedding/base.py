# embedding/base.py
"""The contract every joint image/text embedding provider follows."""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from refseg.errors import ArgumentError

PATCH = 16


@dataclass
class ImageTokenFeatures:
    """(M+1)×D tokens; row 0 is the class token, rows 1.. are patches in row-major order."""
    tokens: np.ndarray
    grid: tuple

    @property
    def num_patches(self) -> int:
        return self.tokens.shape[0] - 1


@dataclass
class TextEmbedding:
    vector: np.ndarray


def patch_grid(image: np.ndarray) -> tuple:
    height, width = image.shape[:2]
    if height % PATCH or width % PATCH:
        raise ArgumentError(f"image size {height}x{width} is not divisible by {PATCH}")
    return height // PATCH, width // PATCH


class EmbeddingBackend(ABC):
    """Frozen provider of image-token and prompt embeddings."""

    dim: int

    @abstractmethod
    def embed_image(self, image: np.ndarray, scene_id: Optional[str] = None) -> ImageTokenFeatures:
        """H×W×3 image in [0, 1] -> (M+1)×D token features."""

    @abstractmethod
    def embed_text(self, prompt: str) -> TextEmbedding:
        """Prompt string -> D-dimensional embedding."""
