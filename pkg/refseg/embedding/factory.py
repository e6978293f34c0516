# embedding/factory.py
from pathlib import Path
from typing import Optional

from refseg.embedding.base import EmbeddingBackend
from refseg.embedding.external import ExternalBackend
from refseg.embedding.mock import MockBackend


def get_backend(name: str, data_dir: Optional[Path] = None, dim: int = 32, seed: int = 0) -> EmbeddingBackend:
    """Factory function to get the requested embedding backend."""
    name = name.lower()
    if name == "mock":
        return MockBackend(dim=dim, seed=seed)
    elif name == "external":
        if data_dir is None:
            raise ValueError("The external backend needs the dataset directory holding embeddings/")
        return ExternalBackend(Path(data_dir))
    else:
        raise ValueError(f"Unknown embedding backend: {name}. Choose 'mock' or 'external'.")
