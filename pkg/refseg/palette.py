# palette.py
"""Named colours and shape words shared by the scene generator and the mock backend."""
from typing import Dict, List, Tuple

PALETTE: Dict[str, Tuple[int, int, int]] = {
    "red": (220, 30, 30),
    "green": (30, 200, 40),
    "blue": (30, 60, 220),
    "yellow": (230, 220, 40),
    "magenta": (210, 40, 210),
    "cyan": (40, 210, 210),
    "orange": (240, 140, 20),
    "white": (240, 240, 240),
}

COLOR_SYNONYMS: Dict[str, List[str]] = {
    "red": ["crimson", "scarlet"],
    "green": ["emerald", "grassy"],
    "blue": ["azure", "navy"],
    "yellow": ["golden", "lemon"],
    "magenta": ["violet", "fuchsia"],
    "cyan": ["turquoise", "teal"],
    "orange": ["amber", "tangerine"],
    "white": ["ivory", "snowy"],
}

# each paraphrase is (optional adjective, head noun)
SHAPE_SYNONYMS: Dict[str, List[Tuple[str, str]]] = {
    "circle": [("round", "shape"), ("", "disc")],
    "square": [("boxy", "shape"), ("", "block")],
    "triangle": [("pointy", "shape"), ("", "wedge")],
}

SHAPES: Tuple[str, ...] = tuple(SHAPE_SYNONYMS)


def concept_words() -> Dict[str, str]:
    """word -> colour or shape concept it names."""
    words: Dict[str, str] = {}
    for color, synonyms in COLOR_SYNONYMS.items():
        words[color] = color
        for word in synonyms:
            words[word] = color
    for shape, variants in SHAPE_SYNONYMS.items():
        words[shape] = shape
        for adjective, noun in variants:
            if adjective:
                words[adjective] = shape
            if noun != "shape":
                words[noun] = shape
    return words
