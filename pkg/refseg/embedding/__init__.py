from refseg.embedding.base import EmbeddingBackend, ImageTokenFeatures, TextEmbedding
from refseg.embedding.factory import get_backend

__all__ = ["EmbeddingBackend", "ImageTokenFeatures", "TextEmbedding", "get_backend"]
