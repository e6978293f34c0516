# harness/plots.py
"""Static PNG output: training curves, per-level similarity curves and heatmap overlays."""
import logging
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from PIL import Image  # noqa: E402

from refseg.synthetic_data import image_to_uint8  # noqa: E402

logger = logging.getLogger(__name__)


def plot_training_curves(log: List[dict], path: Path) -> Path:
    df = pd.DataFrame(log)
    fig, ax = plt.subplots(figsize=(7, 4))
    for column in ("total", "cls", "mask_bce", "mask_dice", "mcc"):
        if column in df:
            ax.plot(df["iteration"], df[column], label=column, linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if "val_miou" in df:
        val = df.dropna(subset=["val_miou"])
        twin = ax.twinx()
        twin.plot(val["iteration"], val["val_miou"], "k--o", label="val mIoU")
        twin.set_ylabel("val mIoU")
        twin.set_ylim(0, 1)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_level_similarity(curves: pd.DataFrame, path: Path) -> Path:
    """curves: rows (configuration, level, same_object, different_object)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, group in curves.groupby("configuration", sort=False):
        line, = ax.plot(group["level"], group["same_object"], "-o", label=f"{name} same")
        if "different_object" in group:
            ax.plot(group["level"], group["different_object"], "--x", color=line.get_color(), label=f"{name} different")
    ax.set_xlabel("CMD level")
    ax.set_ylabel("mean sentence cosine")
    ax.set_xticks(sorted(curves["level"].unique()))
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def minmax(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    span = grid.max() - grid.min()
    if span == 0:
        return np.zeros_like(grid)
    return (grid - grid.min()) / span


def save_heatmap_overlay(image: np.ndarray, grid: np.ndarray, path: Path, alpha: float = 0.5) -> Path:
    """Min-max scaled heatmap, nearest-upsampled to the image and blended in red."""
    base = Image.fromarray(image_to_uint8(image))
    heat = Image.fromarray((minmax(grid) * 255).astype(np.uint8)).resize(base.size, Image.NEAREST)
    red = np.zeros((base.size[1], base.size[0], 3), dtype=np.uint8)
    red[..., 0] = np.asarray(heat)
    overlay = Image.blend(base, Image.fromarray(red), alpha)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    overlay.save(path)
    logger.info(f"Saved heatmap overlay to {path}")
    return path
