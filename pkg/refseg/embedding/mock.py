# embedding/mock.py
import logging
import re
from typing import Optional

import numpy as np
from scipy import ndimage

from refseg.embedding.base import PATCH, EmbeddingBackend, ImageTokenFeatures, TextEmbedding, patch_grid
from refseg.palette import PALETTE, SHAPES, concept_words
from refseg.synthetic_data import image_to_uint8

logger = logging.getLogger(__name__)

# a pixel farther than this (RGB euclidean) from every palette colour is background
COLOR_TOLERANCE = 80.0
SHAPE_WEIGHT = 0.5
# bounding-box fill ratio thresholds separating square / circle / triangle blobs
SQUARE_FILL = 0.9
CIRCLE_FILL = 0.62


class MockBackend(EmbeddingBackend):
    """
    Deterministic stand-in for frozen CLIP towers.

    Image patches and prompts are both described over the same concept axes
    (palette colours, shapes, background) and mapped to D dimensions through
    one seeded matrix with orthonormal columns, so cosine similarity in the
    embedding space equals cosine similarity of the concept descriptors.
    """

    def __init__(self, dim: int = 32, seed: int = 0):
        self.colors = list(PALETTE)
        self.shapes = list(SHAPES)
        self.axes = self.colors + self.shapes + ["background"]
        if dim < len(self.axes):
            raise ValueError(f"dim must be >= {len(self.axes)} for an injective concept map, got {dim}")
        self.dim = dim
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((dim, len(self.axes))))
        self.projection = q
        self.words = concept_words()
        self._palette = np.array([PALETTE[c] for c in self.colors], dtype=np.float64)

    # --- Image side ---
    def _color_map(self, pixels: np.ndarray) -> np.ndarray:
        """Per-pixel palette index, -1 for background."""
        dist = np.linalg.norm(pixels[:, :, None, :].astype(np.float64) - self._palette[None, None], axis=-1)
        nearest = dist.argmin(axis=-1)
        return np.where(dist.min(axis=-1) <= COLOR_TOLERANCE, nearest, -1)

    def _shape_map(self, color_map: np.ndarray) -> np.ndarray:
        """Per-pixel shape index inferred from the fill ratio of each same-colour blob."""
        shape_map = np.full(color_map.shape, -1, dtype=np.int64)
        for color_index in np.unique(color_map[color_map >= 0]):
            labels, count = ndimage.label(color_map == color_index)
            for label, box in enumerate(ndimage.find_objects(labels), start=1):
                blob = labels[box] == label
                fill = blob.sum() / blob.size
                if fill >= SQUARE_FILL:
                    shape = "square"
                elif fill >= CIRCLE_FILL:
                    shape = "circle"
                else:
                    shape = "triangle"
                shape_map[box][blob] = self.shapes.index(shape)
        return shape_map

    def patch_descriptors(self, image: np.ndarray) -> np.ndarray:
        rows, cols = patch_grid(image)
        color_map = self._color_map(image_to_uint8(image))
        shape_map = self._shape_map(color_map)
        n_colors, n_shapes = len(self.colors), len(self.shapes)
        descriptors = np.zeros((rows * cols, len(self.axes)))
        for r in range(rows):
            for c in range(cols):
                window = (slice(r * PATCH, (r + 1) * PATCH), slice(c * PATCH, (c + 1) * PATCH))
                colors, shapes = color_map[window].ravel(), shape_map[window].ravel()
                row = descriptors[r * cols + c]
                row[:n_colors] = np.bincount(colors[colors >= 0], minlength=n_colors)
                row[n_colors:n_colors + n_shapes] = SHAPE_WEIGHT * np.bincount(shapes[shapes >= 0], minlength=n_shapes)
                row[-1] = np.count_nonzero(colors < 0)
        return descriptors / (PATCH * PATCH)

    def embed_image(self, image: np.ndarray, scene_id: Optional[str] = None) -> ImageTokenFeatures:
        grid = patch_grid(image)
        patches = self.patch_descriptors(image) @ self.projection.T
        tokens = np.vstack([patches.mean(axis=0, keepdims=True), patches])
        return ImageTokenFeatures(tokens=tokens.astype(np.float32), grid=grid)

    # --- Text side ---
    def text_descriptor(self, prompt: str) -> np.ndarray:
        descriptor = np.zeros(len(self.axes))
        for word in re.findall(r"[a-z]+", prompt.lower()):
            concept = self.words.get(word)
            if concept is None:
                continue
            if concept in self.colors:
                descriptor[self.colors.index(concept)] += 1.0
            else:
                descriptor[len(self.colors) + self.shapes.index(concept)] += SHAPE_WEIGHT
        return descriptor

    def embed_text(self, prompt: str) -> TextEmbedding:
        return TextEmbedding(vector=(self.projection @ self.text_descriptor(prompt)).astype(np.float32))
