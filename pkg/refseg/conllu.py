# conllu.py
"""Reader/writer for the CoNLL-U-like TSV used to ingest external parses.

Each sentence is a block of lines `index<TAB>form<TAB>UPOS<TAB>head<TAB>deprel`
with 1-based indices and head 0 for the root. Blocks are separated by blank
lines; lines starting with '#' are comments.
"""
import logging
from typing import Iterable, List

from refseg.errors import DatasetFormatError, InvalidParseError
from refseg.models import DependencyParse, Token

logger = logging.getLogger(__name__)


def _parse_block(rows: List[tuple]) -> DependencyParse:
    tokens = []
    for expected, (lineno, fields) in enumerate(rows, start=1):
        if len(fields) < 5:
            raise DatasetFormatError(f"line {lineno}: expected 5 tab-separated columns, got {len(fields)}")
        index, form, upos, head, deprel = fields[:5]
        try:
            index_value, head_value = int(index), int(head)
        except ValueError as e:
            raise DatasetFormatError(f"line {lineno}: index and head must be integers") from e
        if index_value != expected:
            raise DatasetFormatError(f"line {lineno}: token index {index_value}, expected {expected}")
        tokens.append(Token(form=form, upos=upos.upper(),
                            head=None if head_value == 0 else head_value - 1,
                            deprel=deprel))
    parse = DependencyParse(tuple(tokens))
    try:
        return parse.validate()
    except InvalidParseError as e:
        raise InvalidParseError(f"sentence ending at line {rows[-1][0]}: {e}") from e


def read_conllu(lines: Iterable[str]) -> List[DependencyParse]:
    parses: List[DependencyParse] = []
    block: List[tuple] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if line.startswith("#"):
            continue
        if not line.strip():
            if block:
                parses.append(_parse_block(block))
                block = []
            continue
        block.append((lineno, line.split("\t")))
    if block:
        parses.append(_parse_block(block))
    logger.debug(f"Read {len(parses)} parses")
    return parses


def write_conllu(parses: Iterable[DependencyParse]) -> str:
    blocks = []
    for parse in parses:
        rows = []
        for i, t in enumerate(parse.tokens, start=1):
            head = 0 if t.head is None else t.head + 1
            rows.append(f"{i}\t{t.form}\t{t.upos}\t{head}\t{t.deprel}")
        blocks.append("\n".join(rows))
    return "\n\n".join(blocks) + ("\n" if blocks else "")
