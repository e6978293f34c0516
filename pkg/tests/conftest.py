import numpy as np
import pytest
import torch
from torch.func import functional_call

from refseg.config import RunConfig
from refseg.embedding.mock import MockBackend
from refseg.models import Dataset, InstanceAnnotation, Scene
from refseg.palette import PALETTE
from refseg.synthetic_data import direct_expression, generate_splits, paraphrase_expression, rasterize

GRAD_TOL = dict(eps=1e-6, atol=1e-6, rtol=1e-4)


def tiny_config(**overrides) -> RunConfig:
    """Small enough to train a few iterations inside a unit test."""
    config = RunConfig.from_dict({
        "generation": {"num_scenes": 12, "num_val_scenes": 4, "image_size": 64},
        "model": {"dim": 16, "heads": 2, "ffn_dim": 32, "decoder_layers": 3, "backbone_widths": [8, 8, 8, 8]},
        "optim": {"iterations": 3, "batch_size": 2, "val_every": 0, "lr": 1e-3, "backbone_lr": 1e-3},
    })
    for dotted, value in overrides.items():
        section, key = dotted.split("__")
        setattr(getattr(config, section), key, value)
    return config


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture(scope="session")
def splits():
    return generate_splits(tiny_config().generation, seed=0)


@pytest.fixture(scope="session")
def backend():
    return MockBackend(dim=32, seed=0)


def make_scene(scene_id: str, objects, size: int = 64, expressions_per_object: int = 2) -> Scene:
    """objects: list of (color, shape, cy, cx, radius)."""
    image = np.zeros((size, size, 3), dtype=np.float32)
    instances = []
    rng = np.random.default_rng(0)
    for i, (color, shape, cy, cx, r) in enumerate(objects):
        mask = rasterize(shape, cy, cx, r, (size, size))
        image[mask] = np.array(PALETTE[color], dtype=np.float32) / 255.0
        expressions = [direct_expression(color, shape)]
        expressions += [paraphrase_expression(color, shape, v, rng) for v in range(expressions_per_object - 1)]
        instances.append(InstanceAnnotation(mask=mask, object_key=f"{scene_id}/obj{i}", expressions=expressions,
                                            color=color, shape=shape))
    return Scene(image=image, instances=instances, scene_id=scene_id)


@pytest.fixture
def two_object_dataset():
    scene = make_scene("s0", [("red", "circle", 20, 20, 9), ("blue", "square", 44, 44, 9)])
    return Dataset(scenes=[scene])


@pytest.fixture
def param_gradcheck():
    """Finite-difference check of a module's output w.r.t. all its parameters, at float64."""

    def check(module, *args, readout=lambda out: out, **kwargs):
        module = module.double()
        names = [n for n, _ in module.named_parameters()]
        params = tuple(p.detach().clone().requires_grad_(True) for _, p in module.named_parameters())

        def fn(*tensors):
            return readout(functional_call(module, dict(zip(names, tensors)), args, kwargs))

        return torch.autograd.gradcheck(fn, params, **GRAD_TOL)

    return check
