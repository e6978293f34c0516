# visual_encoder.py
from dataclasses import dataclass
from typing import List, Sequence

from torch import Tensor, nn

from refseg.errors import ArgumentError

STRIDES = (32, 16, 8, 4)


@dataclass
class MultiScaleVisualFeatures:
    """V_1..V_4 as B×C×h×w maps, V_1 coarsest (stride 32), V_4 finest (stride 4)."""
    maps: List[Tensor]


def _conv(in_ch: int, out_ch: int, stride: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1), nn.GELU())


class VisualEncoder(nn.Module):
    """Plain convolutional pyramid: a stride-4 stem followed by three stride-2 stages."""

    def __init__(self, dim: int, widths: Sequence[int] = (16, 32, 48, 64)):
        super().__init__()
        w4, w8, w16, w32 = widths
        self.stem = nn.Sequential(_conv(3, w4, 2), _conv(w4, w4, 2))
        self.stage8 = _conv(w4, w8, 2)
        self.stage16 = _conv(w8, w16, 2)
        self.stage32 = _conv(w16, w32, 2)
        # 1x1 projections to the shared width, ordered coarse -> fine
        self.proj = nn.ModuleList([nn.Conv2d(w, dim, kernel_size=1) for w in (w32, w16, w8, w4)])

    def forward(self, images: Tensor) -> MultiScaleVisualFeatures:
        h, w = images.shape[-2:]
        if h % 32 or w % 32:
            raise ArgumentError(f"image size {h}x{w} is not divisible by 32")
        c4 = self.stem(images)
        c8 = self.stage8(c4)
        c16 = self.stage16(c8)
        c32 = self.stage32(c16)
        maps = [proj(x) for proj, x in zip(self.proj, (c32, c16, c8, c4))]
        return MultiScaleVisualFeatures(maps=maps)
