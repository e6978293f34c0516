# dataset_io.py
"""
On-disk dataset layout (one directory per split):

    <split>/scenes.jsonl   one JSON object per scene
    <split>/images/<scene_id>.png   lossless 8-bit RGB
    <split>/meta.json      {"num_scenes": int, "format": 1}

Masks are COCO RLE (see refseg.rle); parses are lists of
[form, upos, head, deprel] with a 0-based head and null for ROOT.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, NonNegativeInt, ValidationError

from refseg.errors import DatasetFormatError
from refseg.models import Dataset, DependencyParse, Expression, InstanceAnnotation, Scene, Token
from refseg.rle import RleRecord, encode_mask
from refseg.synthetic_data import image_to_float, image_to_uint8

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


# --- Record Schemas ---
ParseRow = Tuple[str, str, Optional[NonNegativeInt], str]


class ExpressionRecord(BaseModel):
    text: str
    parse: Optional[List[ParseRow]] = None


class InstanceRecord(BaseModel):
    object_key: str
    color: str = ""
    shape: str = ""
    mask: RleRecord
    expressions: List[ExpressionRecord] = Field(min_length=1)


class SceneRecord(BaseModel):
    id: str
    height: int = Field(gt=0)
    width: int = Field(gt=0)
    instances: List[InstanceRecord]


class DatasetManifest(BaseModel):
    format: int
    num_scenes: NonNegativeInt


# --- Records ---
def _parse_to_record(parse: DependencyParse):
    if parse is None:
        return None
    return [[t.form, t.upos, t.head, t.deprel] for t in parse.tokens]


def _parse_from_record(rows) -> DependencyParse:
    if rows is None:
        return None
    return DependencyParse(tuple(Token(*row) for row in rows)).validate()


def scene_to_record(scene: Scene) -> Dict[str, Any]:
    return {
        "id": scene.scene_id,
        "height": scene.height,
        "width": scene.width,
        "instances": [
            {
                "object_key": inst.object_key,
                "color": inst.color,
                "shape": inst.shape,
                "mask": encode_mask(inst.mask),
                "expressions": [{"text": e.text, "parse": _parse_to_record(e.parse)} for e in inst.expressions],
            }
            for inst in scene.instances
        ],
    }


def scene_from_record(record: Union[SceneRecord, Dict[str, Any]], image: np.ndarray) -> Scene:
    record = SceneRecord.model_validate(record)
    instances = []
    for inst in record.instances:
        expressions = [Expression(text=e.text, parse=_parse_from_record(e.parse)) for e in inst.expressions]
        instances.append(InstanceAnnotation(mask=inst.mask.decode(), object_key=inst.object_key,
                                            expressions=expressions, color=inst.color, shape=inst.shape))
    return Scene(image=image, instances=instances, scene_id=record.id)


# --- Save / Load ---
def save_dataset(ds: Dataset, path: Path):
    path = Path(path)
    image_dir = path / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    with open(path / "scenes.jsonl", "w", encoding="utf-8") as f:
        for scene in ds.scenes:
            f.write(json.dumps(scene_to_record(scene), sort_keys=True) + "\n")
            Image.fromarray(image_to_uint8(scene.image)).save(image_dir / f"{scene.scene_id}.png")
    manifest = DatasetManifest(format=FORMAT_VERSION, num_scenes=len(ds))
    (path / "meta.json").write_text(manifest.model_dump_json(indent=2))
    logger.info(f"Saved {len(ds)} scenes to {path}")


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return image_to_float(np.asarray(img.convert("RGB")))


def load_dataset(path: Path) -> Dataset:
    """Loads a split directory; any malformed record aborts the whole load."""
    path = Path(path)
    scenes_file = path / "scenes.jsonl"
    if not scenes_file.exists():
        raise DatasetFormatError(f"{scenes_file} does not exist")
    try:
        meta = DatasetManifest.model_validate_json((path / "meta.json").read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise DatasetFormatError(f"{path / 'meta.json'}: unreadable manifest ({e})") from e

    scenes = []
    with open(scenes_file, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = SceneRecord.model_validate_json(line)
                image = load_image(path / "images" / f"{record.id}.png")
                scene = scene_from_record(record, image)
            except (ValueError, OSError) as e:
                # ValidationError, bad RLE and bad parses are all ValueErrors
                raise DatasetFormatError(
                    f"{scenes_file}:{lineno}: bad scene record ({type(e).__name__}: {e})") from e
            if scene.image.shape[:2] != (record.height, record.width):
                raise DatasetFormatError(f"{scenes_file}:{lineno}: image size does not match record")
            scenes.append(scene)

    if len(scenes) != meta.num_scenes:
        raise DatasetFormatError(
            f"{scenes_file}: found {len(scenes)} scenes, manifest declares {meta.num_scenes} (truncated?)")
    logger.info(f"Loaded {len(scenes)} scenes from {path}")
    return Dataset(scenes=scenes)
