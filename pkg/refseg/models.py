# models.py
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from refseg.errors import InvalidParseError

NOUN_TAGS = ("NOUN", "PROPN")


@dataclass(frozen=True, slots=True)
class Token:
    """One row of a dependency parse. head is a 0-based index, None for ROOT."""
    form: str
    upos: str
    head: Optional[int]
    deprel: str


@dataclass(frozen=True)
class DependencyParse:
    tokens: Tuple[Token, ...]

    @property
    def text(self) -> str:
        return " ".join(t.form for t in self.tokens)

    @property
    def forms(self) -> List[str]:
        return [t.form for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)

    def root_index(self) -> int:
        roots = [i for i, t in enumerate(self.tokens) if t.head is None]
        if len(roots) != 1:
            raise InvalidParseError(f"expected exactly one ROOT, found {len(roots)} in '{self.text}'")
        return roots[0]

    def children(self, index: int) -> List[int]:
        """Dependents of `index` in surface order."""
        return [i for i, t in enumerate(self.tokens) if t.head == index]

    def validate(self) -> "DependencyParse":
        if not self.tokens:
            raise InvalidParseError("empty parse")
        self.root_index()
        n = len(self.tokens)
        for i, t in enumerate(self.tokens):
            if t.head is not None and not 0 <= t.head < n:
                raise InvalidParseError(f"token {i} ('{t.form}') has head {t.head} out of range")
            if t.head == i:
                raise InvalidParseError(f"token {i} ('{t.form}') heads itself")
        # every token must reach ROOT within n steps
        for i in range(n):
            cursor, steps = i, 0
            while self.tokens[cursor].head is not None:
                cursor = self.tokens[cursor].head
                steps += 1
                if steps > n:
                    raise InvalidParseError(f"cycle through token {i} in '{self.text}'")
        return self


@dataclass(frozen=True)
class Expression:
    text: str
    parse: Optional[DependencyParse]


@dataclass(eq=False)
class InstanceAnnotation:
    mask: np.ndarray
    object_key: str
    expressions: List[Expression]
    color: str = ""
    shape: str = ""

    def bbox(self) -> Tuple[int, int, int, int]:
        """(row0, col0, row1, col1), inclusive."""
        rows, cols = np.nonzero(self.mask)
        return int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstanceAnnotation):
            return NotImplemented
        return (self.object_key == other.object_key
                and self.expressions == other.expressions
                and self.color == other.color
                and self.shape == other.shape
                and self.mask.shape == other.mask.shape
                and bool(np.array_equal(self.mask, other.mask)))


@dataclass(eq=False)
class Scene:
    image: np.ndarray
    instances: List[InstanceAnnotation]
    scene_id: str

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.scene_id == other.scene_id
                and self.instances == other.instances
                and self.image.shape == other.image.shape
                and bool(np.array_equal(self.image, other.image)))


@dataclass(frozen=True)
class SampleRef:
    """Addresses one expression inside a dataset."""
    scene_index: int
    instance_index: int
    expression_index: int


@dataclass
class ReferringSample:
    scene: Scene
    instance: InstanceAnnotation
    expression: Expression
    ref: SampleRef

    @property
    def object_key(self) -> str:
        return self.instance.object_key


@dataclass(eq=True)
class Dataset:
    scenes: List[Scene] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.scenes)

    def refs(self) -> Iterator[SampleRef]:
        for si, scene in enumerate(self.scenes):
            for ii, inst in enumerate(scene.instances):
                for ei in range(len(inst.expressions)):
                    yield SampleRef(si, ii, ei)

    def sample(self, ref: SampleRef) -> ReferringSample:
        scene = self.scenes[ref.scene_index]
        instance = scene.instances[ref.instance_index]
        return ReferringSample(scene, instance, instance.expressions[ref.expression_index], ref)

    def samples(self) -> Iterator[ReferringSample]:
        for ref in self.refs():
            yield self.sample(ref)

    def object_index(self) -> Dict[str, List[SampleRef]]:
        """object_key -> every expression referring to that object."""
        index: Dict[str, List[SampleRef]] = {}
        for ref in self.refs():
            key = self.scenes[ref.scene_index].instances[ref.instance_index].object_key
            index.setdefault(key, []).append(ref)
        return index

    def scene_by_id(self, scene_id: str) -> Scene:
        for scene in self.scenes:
            if scene.scene_id == scene_id:
                return scene
        raise KeyError(f"no scene '{scene_id}'")


@dataclass(frozen=True)
class MainObjectResult:
    phrase: str
    rolled_back: bool
