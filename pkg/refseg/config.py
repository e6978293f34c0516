# config.py
import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from refseg.errors import ConfigurationError


# --- Global Settings ---
@dataclass
class Settings:
    output_root: Path = Path(os.getenv("REFSEG_OUTPUT_ROOT", "runs"))
    log_level: str = os.getenv("REFSEG_LOG_LEVEL", "INFO")


settings = Settings()


# --- Run Configuration ---
class ConfigSection(BaseModel):
    # unknown keys are errors; assignments are validated like loaded values
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GenerationConfig(ConfigSection):
    """Controls the synthetic scene generator."""
    num_scenes: int = Field(default=500, ge=0)
    num_val_scenes: int = Field(default=100, ge=0)
    image_size: int = Field(default=64, gt=0, multiple_of=32)
    shapes: Tuple[str, ...] = Field(default=("circle", "square", "triangle"), min_length=1)
    colors: Tuple[str, ...] = Field(default=("red", "green", "blue", "yellow", "magenta", "cyan"), min_length=6)
    min_instances: int = Field(default=2, ge=2, le=4)
    max_instances: int = Field(default=4, ge=2, le=4)
    paraphrases: int = Field(default=3, ge=2)
    relational: bool = True
    min_radius: int = Field(default=8, ge=2)
    max_radius: int = 11

    @model_validator(mode="after")
    def check_ranges(self):
        if self.max_instances < self.min_instances:
            raise ValueError(f"min_instances ({self.min_instances}) exceeds max_instances ({self.max_instances})")
        if self.max_radius < self.min_radius or 2 * self.max_radius + 3 > self.image_size:
            raise ValueError(f"radii {self.min_radius}..{self.max_radius} do not fit a {self.image_size}px image")
        return self


class ModelConfig(ConfigSection):
    dim: int = Field(default=64, gt=0)
    num_queries: int = Field(default=5, ge=1)
    heads: int = Field(default=4, ge=1)
    decoder_layers: int = Field(default=9, ge=1)
    ffn_dim: int = Field(default=128, gt=0)
    cmd_levels: Literal[4] = 4
    backbone_widths: Tuple[int, ...] = Field(default=(16, 32, 48, 64), min_length=4, max_length=4)
    text_positional: bool = False
    embedding_dim: int = Field(default=32, gt=0)

    @model_validator(mode="after")
    def check_heads(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide dim ({self.dim})")
        return self


class LossConfig(ConfigSection):
    cls_weight: float = Field(default=2.0, ge=0)
    mask_weight: float = Field(default=5.0, ge=0)
    mcc_weight: float = Field(default=2.0, ge=0)
    deep_supervision: bool = True
    mcc_temperature: float = Field(default=1.0, gt=0)
    dice_eps: float = Field(default=1.0, gt=0)


class OptimConfig(ConfigSection):
    lr: float = Field(default=1e-4, gt=0)
    backbone_lr: float = Field(default=1e-5, gt=0)
    weight_decay: float = Field(default=0.05, ge=0)
    iterations: int = Field(default=5000, ge=1)
    batch_size: int = Field(default=8, ge=1)
    lr_decay: float = Field(default=0.1, gt=0)
    grad_clip: float = Field(default=1.0, ge=0)
    val_every: int = Field(default=500, ge=0)
    log_every: int = Field(default=1, ge=1)

    def decay_step(self) -> int:
        """First iteration that runs at the decayed rate."""
        return math.ceil(2 * self.iterations / 3)


class AblationFlags(ConfigSection):
    clip_prior: bool = True
    cmd: bool = True
    mcc: bool = True
    main_object_extractor: bool = True

    def label(self) -> str:
        parts = [name for name in ("clip_prior", "cmd", "mcc") if getattr(self, name)]
        if not parts:
            return "baseline"
        if len(parts) == 3:
            return "full"
        return "+" + "+".join(parts)


class RunConfig(ConfigSection):
    generation: GenerationConfig = Field(default_factory=GenerationConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    ablation: AblationFlags = Field(default_factory=AblationFlags)
    seed: int = 0
    data_dir: str = "data"
    output_dir: str = ""
    backend: Literal["mock", "external"] = "mock"
    dtype: Literal["float32", "float64"] = "float32"
    deterministic: bool = True

    @property
    def mcc_active(self) -> bool:
        return self.ablation.mcc and self.loss.mcc_weight > 0

    def effective_mcc_weight(self) -> float:
        return self.loss.mcc_weight if self.ablation.mcc else 0.0

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return settings.output_root / f"{self.ablation.label()}-seed{self.seed}"

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "RunConfig":
        try:
            return cls.model_validate(data or {})
        except ValidationError as e:
            raise ConfigurationError(describe_errors(e)) from e


# --- Loading ---
def describe_errors(error: ValidationError) -> str:
    """One line per failed field, keyed by its dotted path."""
    lines = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"]) or "<root>"
        if item["type"] == "extra_forbidden":
            lines.append(f"Unknown config key '{where}'")
        else:
            lines.append(f"{where}: {item['msg']}")
    return "Invalid config: " + "; ".join(lines)


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """Applies `key.sub=value` strings; values are parsed as YAML scalars."""
    data = copy.deepcopy(data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"Override '{item}' is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"Override '{dotted}' descends into a scalar")
        node[keys[-1]] = yaml.safe_load(raw)
    return data


def load_config(path: Optional[Path] = None, overrides: Optional[List[str]] = None,
                seed: Optional[int] = None) -> RunConfig:
    """Reads a YAML (or JSON) config file, applies overrides and validates."""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Could not parse config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config {path} must be a mapping at the top level")
    data = apply_overrides(data, overrides or [])
    if seed is not None:
        data["seed"] = seed
    return RunConfig.from_dict(data)
