# rle.py
"""COCO run-length encoding for binary masks (column-major, zeros first)."""
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from pycocotools import mask as mask_utils
from pydantic import BaseModel, NonNegativeInt

from refseg.errors import DatasetFormatError


class RleRecord(BaseModel):
    """Schema of an RLE mask as stored in JSON records."""
    size: Tuple[NonNegativeInt, NonNegativeInt]
    counts: Union[str, List[NonNegativeInt]]

    def decode(self) -> np.ndarray:
        return decode_mask(self.model_dump())


def encode_mask(mask: np.ndarray) -> Dict[str, Any]:
    """Binary H×W mask -> {"size": [H, W], "counts": <compressed COCO string>}."""
    rle = mask_utils.encode(np.asfortranarray(mask.astype(np.uint8)))
    return {"size": [int(rle["size"][0]), int(rle["size"][1])], "counts": rle["counts"].decode("ascii")}


def decode_mask(rle: Dict[str, Any]) -> np.ndarray:
    try:
        height, width = (int(v) for v in rle["size"])
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"malformed RLE record: {e}") from e
    if isinstance(counts, list):
        # uncompressed counts-of-runs form
        if sum(counts) != height * width:
            raise DatasetFormatError(f"RLE counts sum to {sum(counts)}, expected {height * width}")
        encoded = mask_utils.frPyObjects({"size": [height, width], "counts": counts}, height, width)
    else:
        encoded = {"size": [height, width], "counts": counts.encode("ascii")}
    try:
        return mask_utils.decode(encoded).astype(bool)
    except Exception as e:
        raise DatasetFormatError(f"could not decode RLE of size {height}x{width}: {e}") from e
