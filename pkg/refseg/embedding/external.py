# embedding/external.py
import hashlib
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from refseg.embedding.base import EmbeddingBackend, ImageTokenFeatures, TextEmbedding, patch_grid
from refseg.errors import ArgumentError, DatasetFormatError
from refseg.models import Dataset
from refseg.tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)


def prompt_key(prompt: str) -> str:
    return hashlib.sha1(prompt.encode("utf-8")).hexdigest()


class ExternalBackend(EmbeddingBackend):
    """
    Reads embeddings precomputed by another provider.

    Layout under the dataset directory:
        embeddings/<scene_id>.bin          (M+1)×D image tokens
        embeddings/prompts/<sha1>.bin      D prompt vector
    """

    def __init__(self, data_dir: Path):
        self.root = Path(data_dir) / "embeddings"
        if not self.root.is_dir():
            raise DatasetFormatError(f"{self.root} does not exist")
        self.dim = None

    def _check_dim(self, dim: int, path: Path):
        if self.dim is None:
            self.dim = dim
        elif dim != self.dim:
            raise DatasetFormatError(f"{path}: embedding width {dim}, expected {self.dim}")

    def embed_image(self, image: np.ndarray, scene_id: Optional[str] = None) -> ImageTokenFeatures:
        if scene_id is None:
            raise ArgumentError("the external backend looks embeddings up by scene_id")
        grid = patch_grid(image)
        path = self.root / f"{scene_id}.bin"
        tokens = read_tensor(path)
        if tokens.ndim != 2 or tokens.shape[0] != grid[0] * grid[1] + 1:
            raise DatasetFormatError(f"{path}: shape {tokens.shape} does not fit a {grid} patch grid")
        self._check_dim(tokens.shape[1], path)
        return ImageTokenFeatures(tokens=tokens, grid=grid)

    def embed_text(self, prompt: str) -> TextEmbedding:
        path = self.root / "prompts" / f"{prompt_key(prompt)}.bin"
        if not path.exists():
            raise DatasetFormatError(f"no precomputed embedding for prompt '{prompt}' ({path.name})")
        vector = read_tensor(path)
        if vector.ndim != 1:
            raise DatasetFormatError(f"{path}: expected a vector, got shape {vector.shape}")
        self._check_dim(vector.shape[0], path)
        return TextEmbedding(vector=vector)


def export_embeddings(backend: EmbeddingBackend, dataset: Dataset, data_dir: Path, prompts: Iterable[str]):
    """Writes every scene and prompt embedding of `backend` in the external layout."""
    root = Path(data_dir) / "embeddings"
    for scene in dataset.scenes:
        write_tensor(root / f"{scene.scene_id}.bin", backend.embed_image(scene.image, scene.scene_id).tokens)
    count = 0
    for prompt in set(prompts):
        write_tensor(root / "prompts" / f"{prompt_key(prompt)}.bin", backend.embed_text(prompt).vector)
        count += 1
    logger.info(f"Exported {len(dataset)} image and {count} prompt embeddings to {root}")
