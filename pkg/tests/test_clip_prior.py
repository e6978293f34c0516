import math

import numpy as np
import pytest
import torch

from refseg.clip_prior import ClipPrior, PriorProvider, compute_heatmap, init_queries
from refseg.config import GenerationConfig
from refseg.embedding.base import ImageTokenFeatures
from refseg.errors import ArgumentError, DegeneracyError
from refseg.harness.analysis import heatmap_localization
from refseg.palette import PALETTE
from refseg.synthetic_data import direct_expression, generate_dataset, rasterize


def tokens_of(rows, grid):
    return ImageTokenFeatures(tokens=np.asarray(rows, dtype=np.float32), grid=grid)


class TestHeatmap:
    def test_identical_tokens_spread_evenly(self):
        feats = tokens_of([[1.0, 2.0, 0.5]] * 5, (2, 2))
        heatmap = compute_heatmap(feats, np.array([0.3, 1.0, -0.2]))
        assert torch.allclose(heatmap.similarity, torch.full((5,), 1 / math.sqrt(5), dtype=torch.float64))
        assert heatmap.grid.shape == (2, 2)

    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        heatmap = compute_heatmap(tokens_of(rng.standard_normal((17, 8)), (4, 4)), rng.standard_normal(8))
        assert float(heatmap.similarity.norm()) == pytest.approx(1.0)

    def test_scale_invariant(self):
        rng = np.random.default_rng(1)
        rows, text = rng.standard_normal((5, 4)), rng.standard_normal(4)
        a = compute_heatmap(tokens_of(rows, (2, 2)), text)
        b = compute_heatmap(tokens_of(rows * 7.0, (2, 2)), text * 0.25)
        assert torch.allclose(a.similarity, b.similarity, atol=1e-6)

    def test_orthogonal_prompt_is_degenerate(self):
        with pytest.raises(DegeneracyError):
            compute_heatmap(tokens_of([[1.0, 0.0]] * 5, (2, 2)), np.array([0.0, 1.0]))

    def test_zero_text_is_degenerate(self):
        with pytest.raises(DegeneracyError):
            compute_heatmap(tokens_of([[1.0, 0.0]] * 5, (2, 2)), np.zeros(2))

    def test_rounding_noise_is_degenerate(self):
        rows = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]] * 3)[:5] + np.float32(1e-9)
        with pytest.raises(DegeneracyError):
            compute_heatmap(tokens_of(rows, (2, 2)), np.array([0.0, 1.0, 1e-9]))

    def test_near_zero_text_is_degenerate(self):
        with pytest.raises(DegeneracyError):
            compute_heatmap(tokens_of([[1.0, 0.5]] * 5, (2, 2)), np.full(2, 1e-9))

    def test_small_real_alignment_is_kept(self):
        heatmap = compute_heatmap(tokens_of([[1.0, 0.0]] * 5, (2, 2)), np.array([1e-3, 1.0]))
        assert float(heatmap.similarity.norm()) == pytest.approx(1.0)

    def test_black_image_against_colour_prompt_is_degenerate(self, backend):
        black = np.zeros((64, 64, 3), dtype=np.float32)
        with pytest.raises(DegeneracyError):
            compute_heatmap(backend.embed_image(black), backend.embed_text("A Photo of the red circle"))

    def test_width_mismatch(self):
        with pytest.raises(ArgumentError):
            compute_heatmap(tokens_of([[1.0, 0.0]] * 5, (2, 2)), np.ones(3))

    def test_red_circle_peaks_inside_its_box(self, backend):
        image = np.zeros((64, 64, 3), dtype=np.float32)
        mask = rasterize("circle", 24, 24, 10, (64, 64))
        image[mask] = np.array(PALETTE["red"]) / 255.0
        heatmap = compute_heatmap(backend.embed_image(image), backend.embed_text("A Photo of the red circle"))
        row, col = np.unravel_index(int(torch.argmax(heatmap.grid)), (4, 4))
        rows, cols = np.nonzero(mask)
        assert rows.min() <= 16 * row + 8 <= rows.max()
        assert cols.min() <= 16 * col + 8 <= cols.max()


class TestClipPrior:
    def test_shape_and_identical_queries(self):
        torch.manual_seed(0)
        prior = ClipPrior(num_tokens=17, dim=256)
        queries = prior(torch.rand(17), torch.randn(256), num_queries=5)
        assert queries.shape == (5, 256)
        assert torch.equal(queries, queries[0].expand(5, -1))

    def test_batched(self):
        prior = ClipPrior(num_tokens=17, dim=16)
        assert prior(torch.rand(3, 17), torch.randn(3, 16), num_queries=4).shape == (3, 4, 16)

    def test_zero_projection_gives_tiled_text(self):
        prior = ClipPrior(num_tokens=17, dim=8)
        torch.nn.init.zeros_(prior.proj.weight)
        torch.nn.init.zeros_(prior.proj.bias)
        text = torch.randn(8)
        assert torch.equal(prior(torch.rand(17), text, 3), text.expand(3, -1))

    def test_disabled_ignores_heatmap(self):
        prior = ClipPrior(num_tokens=17, dim=8, enabled=False)
        text = torch.randn(8)
        assert torch.equal(prior(torch.rand(17), text, 2), prior(torch.zeros(17), text, 2))
        assert torch.equal(prior(torch.rand(17), text, 2), text.expand(2, -1))

    def test_init_queries_from_heatmap(self):
        rng = np.random.default_rng(2)
        heatmap = compute_heatmap(tokens_of(rng.standard_normal((5, 4)), (2, 2)), rng.standard_normal(4))
        prior = ClipPrior(num_tokens=5, dim=6).double()
        assert init_queries(heatmap, torch.zeros(6, dtype=torch.float64), 3, prior).shape == (3, 6)

    def test_bad_arguments(self):
        prior = ClipPrior(num_tokens=17, dim=8)
        with pytest.raises(ArgumentError):
            prior(torch.rand(17), torch.randn(8), num_queries=0)
        with pytest.raises(ArgumentError):
            prior(torch.rand(5), torch.randn(8), num_queries=2)


class TestPriorProvider:
    def test_degenerate_heatmap_falls_back_to_zeros(self, backend):
        provider = PriorProvider(backend)
        black = np.zeros((64, 64, 3), dtype=np.float32)
        value = provider.similarity(black, "s-black", direct_expression("red", "circle"))
        assert value.shape == (17,)
        assert not value.any()
        assert provider.degenerate == 1

    def test_cached_per_scene_and_prompt(self, backend, two_object_dataset):
        provider = PriorProvider(backend)
        scene = two_object_dataset.scenes[0]
        expr = scene.instances[0].expressions[0]
        first = provider.similarity(scene.image, scene.scene_id, expr)
        assert provider.similarity(scene.image, scene.scene_id, expr) is first
        assert float(np.linalg.norm(first)) == pytest.approx(1.0)


def test_heatmap_localises_unique_colour_targets(backend):
    dataset = generate_dataset(GenerationConfig(), seed=3, num_scenes=100)
    assert heatmap_localization(backend, dataset) >= 0.9
