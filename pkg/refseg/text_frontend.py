# text_frontend.py
import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

from refseg.errors import ArgumentError, MissingParseError
from refseg.models import NOUN_TAGS, DependencyParse, Expression, MainObjectResult

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = "A Photo of "
# left dependents that stay inside a noun phrase
PHRASE_DEPRELS = ("det", "amod", "compound", "nummod")


def _noun_phrase(parse: DependencyParse, head: int) -> str:
    start = head
    while start > 0:
        left = parse.tokens[start - 1]
        if left.head != head or left.deprel not in PHRASE_DEPRELS:
            break
        start -= 1
    return " ".join(parse.forms[start:head + 1])


def _find_head_noun(parse: DependencyParse) -> Optional[int]:
    root = parse.root_index()
    if parse.tokens[root].upos in NOUN_TAGS:
        return root
    # breadth-first below the root, surface order inside each level
    frontier = deque(parse.children(root))
    while frontier:
        level = sorted(frontier)
        frontier.clear()
        for index in level:
            if parse.tokens[index].upos in NOUN_TAGS:
                return index
        for index in level:
            frontier.extend(parse.children(index))
    return None


def extract_main_object(parse: DependencyParse) -> MainObjectResult:
    """
    Returns the main noun phrase of an expression.

    The ROOT noun wins; otherwise the first noun among the root's children in
    surface order (then their children). When the parse holds no reachable
    noun the whole sentence comes back with rolled_back=True.
    """
    parse.validate()
    head = _find_head_noun(parse)
    if head is None:
        logger.debug(f"No noun in '{parse.text}', rolling back to the full sentence")
        return MainObjectResult(phrase=parse.text, rolled_back=True)
    return MainObjectResult(phrase=_noun_phrase(parse, head), rolled_back=False)


def build_prompt(object_phrase: str) -> str:
    if not object_phrase or not object_phrase.strip():
        raise ArgumentError("cannot build a prompt from an empty phrase")
    return PROMPT_TEMPLATE + object_phrase


def prompt_for_expression(expression: Expression, use_extractor: bool = True) -> str:
    """CLIP-Prior prompt for an expression; without the extractor the whole sentence is used."""
    if not use_extractor:
        return build_prompt(expression.text)
    if expression.parse is None:
        raise MissingParseError(
            f"expression '{expression.text}' has no dependency parse; "
            "ingest one as CoNLL-U TSV (see `refseg extract-object`)")
    return build_prompt(extract_main_object(expression.parse).phrase)


@dataclass
class RollbackStats:
    count: int = 0
    rolled_back: int = 0

    @property
    def rate(self) -> float:
        return self.rolled_back / self.count if self.count else 0.0

    def as_dict(self) -> dict:
        return {"count": self.count, "rolled_back": self.rolled_back, "rate": self.rate}


def rollback_stats(parses: Iterable[DependencyParse]) -> RollbackStats:
    stats = RollbackStats()
    for parse in parses:
        stats.count += 1
        if extract_main_object(parse).rolled_back:
            stats.rolled_back += 1
    if stats.rolled_back:
        logger.warning(f"Rolled back {stats.rolled_back}/{stats.count} expressions to the full sentence")
    return stats
