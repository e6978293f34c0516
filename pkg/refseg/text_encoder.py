# text_encoder.py
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import torch
from torch import Tensor, nn

from refseg.cmd import MultiHeadAttention
from refseg.models import Expression

PAD, UNK = "<pad>", "<unk>"


def tokenize(expression: Expression) -> List[str]:
    forms = expression.parse.forms if expression.parse is not None else expression.text.split()
    return [f.lower() for f in forms]


class Vocabulary:
    """Word -> id table; id 0 is padding, id 1 the unknown-word fallback."""

    def __init__(self, words: Sequence[str]):
        self.itos = [PAD, UNK] + [w for w in words if w not in (PAD, UNK)]
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, expressions: Iterable[Expression]) -> "Vocabulary":
        words = sorted({w for e in expressions for w in tokenize(e)})
        return cls(words)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]


@dataclass
class WordFeatures:
    features: Tensor      # B×L×C
    padding: Tensor       # B×L, True on padded positions


def sinusoidal_encoding(length: int, dim: int, dtype=torch.float32) -> Tensor:
    position = torch.arange(length, dtype=dtype)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table


class TextEncoder(nn.Module):
    """Embedding lookup followed by one residual self-attention block."""

    def __init__(self, vocab_size: int, dim: int, heads: int, positional: bool = False):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=0)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.positional = positional

    def forward(self, token_ids: Tensor, padding: Tensor) -> WordFeatures:
        x = self.embedding(token_ids)
        if self.positional:
            x = x + sinusoidal_encoding(x.shape[1], x.shape[2], x.dtype).to(x.device)
        x = x + self.self_attn(x, x, x, key_padding_mask=padding)
        return WordFeatures(features=x, padding=padding)


def encode_batch(vocab: Vocabulary, expressions: Sequence[Expression]):
    """Pads token ids of several expressions to one B×L tensor plus its padding mask."""
    ids = [vocab.encode(tokenize(e)) or [vocab.stoi[UNK]] for e in expressions]
    length = max(len(row) for row in ids)
    token_ids = torch.zeros(len(ids), length, dtype=torch.long)
    padding = torch.ones(len(ids), length, dtype=torch.bool)
    for i, row in enumerate(ids):
        token_ids[i, :len(row)] = torch.tensor(row, dtype=torch.long)
        padding[i, :len(row)] = False
    return token_ids, padding


def encode_text(expression: Expression, vocab: Vocabulary, encoder: TextEncoder) -> Tensor:
    """L×C word features for a single expression."""
    token_ids, padding = encode_batch(vocab, [expression])
    return encoder(token_ids, padding).features[0]
