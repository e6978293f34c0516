import pytest
import torch
from torch import nn

from refseg.decoder_head import (
    DecoderLayer,
    MaskedAttentionDecoder,
    attention_mask_from,
    decode_queries,
    predict,
)
from refseg.errors import ArgumentError


def pyramid(dim, size=64, batch=1, dtype=torch.float32):
    return [torch.randn(batch, dim, size // s, size // s, dtype=dtype) for s in (32, 16, 8, 4)]


class TestPredict:
    def test_zero_queries_give_zero_mask_logits(self):
        head = nn.Linear(8, 1)
        pred = predict(torch.zeros(3, 8), torch.randn(8, 16, 16), head)
        assert pred.mask_logits.shape == (3, 16, 16)
        assert not pred.mask_logits.any()
        assert torch.allclose(pred.probs, torch.sigmoid(head.bias).expand(3))

    def test_mask_logits_are_linear_in_queries(self):
        torch.manual_seed(0)
        head = nn.Linear(8, 1)
        queries, fine = torch.randn(2, 3, 8), torch.randn(2, 8, 4, 4)
        assert torch.allclose(predict(2 * queries, fine, head).mask_logits,
                              2 * predict(queries, fine, head).mask_logits, atol=1e-5)

    def test_dot_product_per_pixel(self):
        queries = torch.tensor([[1.0, 0.0], [0.0, 2.0]])
        fine = torch.arange(8.0).reshape(2, 2, 2)
        pred = predict(queries, fine, nn.Linear(2, 1))
        assert torch.equal(pred.mask_logits[0], fine[0])
        assert torch.equal(pred.mask_logits[1], 2 * fine[1])

    def test_width_mismatch(self):
        with pytest.raises(ArgumentError):
            predict(torch.zeros(3, 8), torch.zeros(4, 2, 2), nn.Linear(8, 1))


class TestAttentionMask:
    def test_blocks_where_probability_is_low(self):
        logits = torch.tensor([[[[5.0, -5.0], [-5.0, 5.0]]]])
        mask = attention_mask_from(logits, (2, 2))
        assert mask.tolist() == [[[False, True, True, False]]]

    def test_empty_mask_leaves_query_open(self):
        logits = torch.full((1, 2, 4, 4), -10.0)
        logits[0, 1, 0, 0] = 10.0
        mask = attention_mask_from(logits, (4, 4))
        assert not mask[0, 0].any()
        assert mask[0, 1].sum() == 15

    def test_resized_to_target_scale(self):
        assert attention_mask_from(torch.randn(2, 3, 16, 16), (4, 4)).shape == (2, 3, 16)

    def test_detached(self):
        logits = torch.randn(1, 1, 4, 4, requires_grad=True)
        assert not attention_mask_from(logits, (2, 2)).requires_grad


class TestDecoder:
    def test_prediction_count(self):
        torch.manual_seed(0)
        decoder = MaskedAttentionDecoder(dim=256, heads=8)
        out = decoder(torch.randn(1, 5, 256), pyramid(256))
        assert len(out.predictions) == 10
        assert len(out.auxiliary) == 9
        assert out.final is out.predictions[-1]
        assert out.final.prob_logits.shape == (1, 5)
        assert out.final.mask_logits.shape == (1, 5, 16, 16)

    def test_round_robin_scales(self):
        torch.manual_seed(0)
        decoder = MaskedAttentionDecoder(dim=8, heads=2, num_layers=4, ffn_dim=16)
        out = decoder(torch.randn(1, 3, 8), pyramid(8), return_weights=True)
        assert [w.shape[-1] for w in out.attention_weights] == [4, 16, 64, 4]

    def test_attention_stays_inside_the_mask(self):
        torch.manual_seed(0)
        decoder = MaskedAttentionDecoder(dim=8, heads=2, num_layers=3, ffn_dim=16)
        out = decoder(torch.randn(2, 4, 8), pyramid(8, batch=2), return_weights=True)
        for mask, weights in zip(out.attention_masks, out.attention_weights):
            blocked = mask[:, None].expand_as(weights)
            assert not weights[blocked].any()

    def test_query_permutation_equivariance(self):
        torch.manual_seed(0)
        decoder = MaskedAttentionDecoder(dim=8, heads=2, num_layers=3, ffn_dim=16).double()
        visual = pyramid(8, dtype=torch.float64)
        queries = torch.randn(1, 4, 8, dtype=torch.float64)
        perm = torch.tensor([2, 0, 3, 1])
        a, b = decoder(queries, visual), decoder(queries[:, perm], visual)
        assert torch.allclose(a.final.prob_logits[:, perm], b.final.prob_logits, atol=1e-10)
        assert torch.allclose(a.final.mask_logits[:, perm], b.final.mask_logits, atol=1e-10)

    def test_wrong_scale_count(self):
        with pytest.raises(ArgumentError):
            MaskedAttentionDecoder(dim=8, heads=2)(torch.randn(1, 2, 8), pyramid(8)[:3])

    def test_single_sample(self):
        decoder = MaskedAttentionDecoder(dim=8, heads=2, num_layers=2, ffn_dim=16)
        out = decode_queries(decoder, torch.randn(3, 8), [v[0] for v in pyramid(8)])
        assert out.queries.shape == (3, 8)
        assert out.final.mask_logits.shape == (3, 16, 16)
        assert len(out.predictions) == 3

    def test_layer_keeps_query_shape(self):
        layer = DecoderLayer(4, 2, 8)
        mask = torch.tensor([[[False, True, False, True, True, False]] * 3])
        queries, weights = layer(torch.randn(1, 3, 4), torch.randn(1, 6, 4), mask, return_weights=True)
        assert queries.shape == (1, 3, 4)
        assert not weights[mask[:, None].expand_as(weights)].any()
