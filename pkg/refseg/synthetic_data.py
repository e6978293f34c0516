# synthetic_data.py
import itertools
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from tqdm import tqdm

from refseg.config import GenerationConfig
from refseg.errors import ConfigurationError
from refseg.models import Dataset, DependencyParse, Expression, InstanceAnnotation, Scene, Token
from refseg.palette import COLOR_SYNONYMS, PALETTE, SHAPE_SYNONYMS

logger = logging.getLogger(__name__)

MAX_PLACEMENT_TRIES = 500
PLACEMENT_GAP = 2


# --- Shape Rasterisation ---
def rasterize(shape: str, cy: int, cx: int, radius: int, size: Tuple[int, int]) -> np.ndarray:
    rows, cols = np.mgrid[0:size[0], 0:size[1]]
    dy, dx = rows - cy, cols - cx
    if shape == "circle":
        return dy * dy + dx * dx <= radius * radius
    if shape == "square":
        return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    if shape == "triangle":
        # apex up, base of width 2r on the bottom row
        return (dy >= -radius) & (dy <= radius) & (2 * np.abs(dx) <= dy + radius)
    raise ConfigurationError(f"Unknown shape: {shape}")


# --- Expression Templates ---
def _expr(rows: Sequence[Tuple[str, str, Optional[int], str]]) -> Expression:
    parse = DependencyParse(tuple(Token(*row) for row in rows)).validate()
    return Expression(text=parse.text, parse=parse)


def direct_expression(color: str, shape: str) -> Expression:
    """'the red circle': root is the shape noun."""
    return _expr([("the", "DET", 2, "det"), (color, "ADJ", 2, "amod"), (shape, "NOUN", None, "root")])


def paraphrase_expression(color: str, shape: str, variant: int, rng: np.random.Generator) -> Expression:
    synonym = COLOR_SYNONYMS[color][int(rng.integers(len(COLOR_SYNONYMS[color])))]
    adjective, noun = SHAPE_SYNONYMS[shape][variant % len(SHAPE_SYNONYMS[shape])]
    kind = variant % 3
    if kind == 0:
        # "the crimson round shape" / "the crimson disc"
        words = [("the", "DET"), (synonym, "ADJ")] + ([(adjective, "ADJ")] if adjective else [])
        head = len(words)
        rows = [(w, pos, head, "det" if pos == "DET" else "amod") for w, pos in words]
        return _expr(rows + [(noun, "NOUN", None, "root")])
    if kind == 1:
        # "find the crimson disc": verb root with the object noun as its child
        words = [("the", "DET"), (synonym, "ADJ")] + ([(adjective, "ADJ")] if adjective else [])
        head = len(words) + 1
        rows = [("find", "VERB", None, "root")]
        rows += [(w, pos, head, "det" if pos == "DET" else "amod") for w, pos in words]
        return _expr(rows + [(noun, "NOUN", 0, "obj")])
    # "a circle that is crimson"
    return _expr([("a", "DET", 1, "det"), (shape, "NOUN", None, "root"), ("that", "PRON", 4, "nsubj"),
                  ("is", "AUX", 4, "cop"), (synonym, "ADJ", 1, "acl:relcl")])


def relation_between(target: np.ndarray, anchor: np.ndarray) -> str:
    """Spatial word describing where target sits relative to anchor (dominant axis)."""
    ty, tx = ndimage.center_of_mass(target)
    ay, ax = ndimage.center_of_mass(anchor)
    dy, dx = ty - ay, tx - ax
    if abs(dx) >= abs(dy):
        return "left of" if dx < 0 else "right of"
    return "above" if dy < 0 else "below"


def relational_expression(shape: str, relation: str, anchor_shape: str) -> Expression:
    """'the circle left of the square': anchor noun hangs off the root under an nmod arc."""
    rows = [("the", "DET", 1, "det"), (shape, "NOUN", None, "root")]
    if relation in ("left of", "right of"):
        word = relation.split()[0]
        rows += [(word, "ADV", 1, "advmod"), ("of", "ADP", 5, "case"),
                 ("the", "DET", 5, "det"), (anchor_shape, "NOUN", 1, "nmod")]
    else:
        rows += [(relation, "ADP", 4, "case"), ("the", "DET", 4, "det"), (anchor_shape, "NOUN", 1, "nmod")]
    return _expr(rows)


# --- Scene Generation ---
def _place_instances(config: GenerationConfig, rng: np.random.Generator,
                     combos: List[Tuple[str, str]]) -> List[Tuple[str, str, np.ndarray]]:
    size = (config.image_size, config.image_size)
    occupied = np.zeros(size, dtype=bool)
    placed = []
    for color, shape in combos:
        for _ in range(MAX_PLACEMENT_TRIES):
            radius = int(rng.integers(config.min_radius, config.max_radius + 1))
            cy = int(rng.integers(radius, config.image_size - radius))
            cx = int(rng.integers(radius, config.image_size - radius))
            mask = rasterize(shape, cy, cx, radius, size)
            if not (mask & occupied).any():
                placed.append((color, shape, mask))
                occupied |= ndimage.binary_dilation(mask, iterations=PLACEMENT_GAP)
                break
        else:
            logger.warning(f"Could not place a {color} {shape}; scene keeps {len(placed)} instances")
    return placed


def generate_scene(config: GenerationConfig, rng: np.random.Generator, scene_id: str) -> Scene:
    count = int(rng.integers(config.min_instances, config.max_instances + 1))
    all_combos = list(itertools.product(config.colors, config.shapes))
    picks = rng.choice(len(all_combos), size=min(count, len(all_combos)), replace=False)
    placed = _place_instances(config, rng, [all_combos[int(i)] for i in picks])

    image = np.zeros((config.image_size, config.image_size, 3), dtype=np.uint8)
    for color, _, mask in placed:
        image[mask] = PALETTE[color]

    shape_counts = {}
    for _, shape, _ in placed:
        shape_counts[shape] = shape_counts.get(shape, 0) + 1

    instances = []
    for index, (color, shape, mask) in enumerate(placed):
        expressions = [direct_expression(color, shape)]
        for variant in range(config.paraphrases - 1):
            expressions.append(paraphrase_expression(color, shape, variant, rng))
        if config.relational and shape_counts[shape] == 1:
            anchors = [j for j, (_, s, _) in enumerate(placed) if j != index and shape_counts[s] == 1]
            if anchors:
                anchor = anchors[int(rng.integers(len(anchors)))]
                relation = relation_between(mask, placed[anchor][2])
                expressions.append(relational_expression(shape, relation, placed[anchor][1]))
        instances.append(InstanceAnnotation(mask=mask, object_key=f"{scene_id}/obj{index}",
                                            expressions=expressions, color=color, shape=shape))
    return Scene(image=image_to_float(image), instances=instances, scene_id=scene_id)


def image_to_float(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float32) / np.float32(255.0)


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def generate_dataset(config: GenerationConfig, seed: int, num_scenes: Optional[int] = None,
                     prefix: str = "scene", progress: bool = False) -> Dataset:
    """Deterministic for a fixed (config, seed); each scene draws from its own seeded stream."""
    num_scenes = config.num_scenes if num_scenes is None else num_scenes
    if unknown := [c for c in config.colors if c not in PALETTE]:
        raise ConfigurationError(f"Colors not in the palette: {unknown}")
    if unknown := [s for s in config.shapes if s not in SHAPE_SYNONYMS]:
        raise ConfigurationError(f"Unknown shapes: {unknown}")
    scenes = []
    for index in tqdm(range(num_scenes), desc=f"Generating {prefix}", disable=not progress):
        rng = np.random.default_rng([seed, index])
        scenes.append(generate_scene(config, rng, f"{prefix}-{seed}-{index:05d}"))
    logger.info(f"Generated {len(scenes)} scenes (seed {seed})")
    return Dataset(scenes=scenes)


def generate_splits(config: GenerationConfig, seed: int, progress: bool = False) -> dict:
    return {
        "train": generate_dataset(config, seed, config.num_scenes, prefix="train", progress=progress),
        "val": generate_dataset(config, seed + 1, config.num_val_scenes, prefix="val", progress=progress),
    }
