# harness/checkpoint.py
"""
Checkpoint layout:

    <dir>/manifest.json            iteration, config, config hash, vocabulary, RNG state
    <dir>/params/<name>.bin        one tensor file per parameter (see refseg.tensor_io)
    <dir>/optimizer/<i>.<key>.bin  AdamW moments per parameter index
"""
import base64
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch

from refseg.config import RunConfig
from refseg.errors import DatasetFormatError
from refseg.network import RISModel
from refseg.tensor_io import read_tensor, write_tensor
from refseg.text_encoder import Vocabulary

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass
class Checkpoint:
    model: RISModel
    config: RunConfig
    vocab: Vocabulary
    iteration: int
    manifest: Dict[str, Any]
    path: Path

    def restore_optimizer(self, optimizer: torch.optim.Optimizer):
        load_optimizer_state(self.path, optimizer, self.manifest)

    def restore_rng(self) -> Optional[np.random.Generator]:
        state = self.manifest.get("rng")
        if not state:
            return None
        rng = np.random.default_rng()
        rng.bit_generator.state = state["numpy"]
        torch.set_rng_state(torch.frombuffer(bytearray(base64.b64decode(state["torch"])), dtype=torch.uint8))
        return rng


def save_checkpoint(path: Path, model: RISModel, config: RunConfig, vocab: Vocabulary, iteration: int,
                    optimizer: Optional[torch.optim.Optimizer] = None,
                    rng: Optional[np.random.Generator] = None) -> Path:
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    for name, tensor in model.state_dict().items():
        write_tensor(path / "params" / f"{name}.bin", tensor.detach().cpu().numpy())

    manifest: Dict[str, Any] = {
        "iteration": int(iteration),
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "vocabulary": vocab.itos,
        "parameters": list(model.state_dict().keys()),
    }
    if rng is not None:
        manifest["rng"] = {
            "numpy": rng.bit_generator.state,
            "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
        }
    if optimizer is not None:
        manifest["optimizer"] = save_optimizer_state(path, optimizer)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, default=list), encoding="utf-8")
    logger.info(f"Saved checkpoint at iteration {iteration} to {path}")
    return path


def save_optimizer_state(path: Path, optimizer: torch.optim.Optimizer) -> Dict[str, Any]:
    state = optimizer.state_dict()
    steps = {}
    for index, entry in state["state"].items():
        for key, value in entry.items():
            if key == "step":
                steps[str(index)] = float(value)
            elif isinstance(value, torch.Tensor):
                write_tensor(path / "optimizer" / f"{index}.{key}.bin", value.detach().cpu().numpy())
    return {"param_groups": state["param_groups"], "steps": steps}


def load_optimizer_state(path: Path, optimizer: torch.optim.Optimizer, manifest: Dict[str, Any]):
    saved = manifest.get("optimizer")
    if saved is None:
        logger.warning(f"Checkpoint {path} carries no optimizer state")
        return
    state = {}
    for index, step in saved["steps"].items():
        entry = {"step": torch.tensor(step)}
        for file in sorted((Path(path) / "optimizer").glob(f"{index}.*.bin")):
            key = file.name[len(index) + 1:-len(".bin")]
            entry[key] = torch.from_numpy(read_tensor(file))
        state[int(index)] = entry
    optimizer.load_state_dict({"state": state, "param_groups": saved["param_groups"]})


def load_checkpoint(path: Path, dtype=torch.float32) -> Checkpoint:
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.exists():
        raise DatasetFormatError(f"{path} is not a checkpoint directory (no {MANIFEST})")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{manifest_path}: {e}") from e

    config = RunConfig.from_dict(manifest["config"])
    if config.config_hash() != manifest.get("config_hash"):
        logger.warning(f"Config hash mismatch in {manifest_path}; the file may have been edited")
    vocab = Vocabulary(manifest["vocabulary"][2:])
    model = RISModel(config.model, config.ablation, len(vocab), config.generation.image_size)

    state = {}
    for name in manifest["parameters"]:
        state[name] = torch.from_numpy(read_tensor(path / "params" / f"{name}.bin"))
    model.load_state_dict(state)
    model.to(dtype)
    model.eval()
    return Checkpoint(model=model, config=config, vocab=vocab, iteration=int(manifest["iteration"]),
                      manifest=manifest, path=path)
