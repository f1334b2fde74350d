import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from csarec.augment import (
    AugmentationSpec,
    dim_dropout,
    gaussian_noise,
    make_views,
    mask_items,
    mask_one_item,
    uniform_noise,
)
from csarec.encoders import EncoderConfig, build_encoder

N = 10_000


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestGaussian:
    def test_zero_sigma_identity(self):
        s = torch.randn(8)
        assert torch.equal(gaussian_noise(s, 0.0, gen()), s)

    def test_moments(self):
        sigma = 0.003
        s = torch.zeros(N, 64, dtype=torch.float64)
        eps = gaussian_noise(s, sigma, gen(1))
        mean = eps.mean(0)
        var = eps.var(0)
        assert (mean.abs() <= 4 * sigma / math.sqrt(N)).all()
        assert ((var - sigma**2).abs() <= 0.1 * sigma**2).all()

    def test_same_state_same_output(self):
        s = torch.randn(5)
        assert torch.equal(gaussian_noise(s, 0.1, gen(3)), gaussian_noise(s, 0.1, gen(3)))


class TestUniform:
    def test_degenerate(self):
        s = torch.randn(6, dtype=torch.float64)
        torch.testing.assert_close(uniform_noise(s, 0.02, 0.02, gen()), s + 0.02)

    def test_support_and_mean(self):
        a, b = 0.001, 0.005
        s = torch.zeros(N, 8, dtype=torch.float64)
        eps = uniform_noise(s, a, b, gen(2))
        assert eps.min() >= a and eps.max() <= b
        se = (b - a) / math.sqrt(12) / math.sqrt(N)
        assert (eps.mean(0) - (a + b) / 2).abs().max() <= 4 * se

    def test_bad_interval(self):
        with pytest.raises(ValueError):
            uniform_noise(torch.zeros(2), 0.5, 0.1)


class TestItemMask:
    def test_at_threshold_unchanged(self):
        seq = [9, 9, 1, 2, 3]
        assert mask_one_item(seq, 3, 3, 10, gen()) == seq

    def test_one_position_masked(self):
        seq = [9, 4, 1, 2, 3]
        out = mask_one_item(seq, 4, 3, 10, gen())
        diff = [k for k in range(5) if out[k] != seq[k]]
        assert len(diff) == 1 and out[diff[0]] == 10 and diff[0] >= 1

    def test_position_frequencies(self):
        seqs = torch.tensor([[9, 4, 1, 2, 3]]).repeat(N, 1)
        out = mask_items(seqs, torch.full((N,), 4), 3, 10, gen(4))
        counts = (out == 10).sum(0).tolist()
        assert counts[0] == 0
        bound = 4 * math.sqrt(N * 0.25 * 0.75)
        assert all(abs(c - 2500) <= bound for c in counts[1:])
        assert sum(counts) == N

    def test_mixed_lengths(self):
        seqs = torch.tensor([[9, 9, 1, 2, 3], [5, 4, 1, 2, 3]])
        out = mask_items(seqs, torch.tensor([3, 5]), 3, 10, gen())
        assert torch.equal(out[0], seqs[0])
        assert (out[1] == 10).sum() == 1

    def test_input_untouched(self):
        seqs = torch.tensor([[5, 4, 1, 2, 3]])
        before = seqs.clone()
        mask_items(seqs, torch.tensor([5]), 3, 10, gen())
        assert torch.equal(seqs, before)


class TestDimDropout:
    def test_p_zero(self):
        s = torch.randn(16)
        assert torch.equal(dim_dropout(s, 0.0, gen()), s)

    def test_support(self):
        s = torch.randn(200, 16) + 3.0
        out = dim_dropout(s, 0.3, gen())
        assert ((out == 0) | (out == s)).all()

    def test_zeroed_count(self):
        s = torch.ones(N, 64)
        zeros = (dim_dropout(s, 0.1, gen(6)) == 0).sum(1).double()
        assert abs(zeros.mean().item() - 6.4) <= 4 * math.sqrt(64 * 0.1 * 0.9) / math.sqrt(N)


class TestMakeViews:
    cfg = EncoderConfig(num_items=10, embedding_dim=8, max_len=5)

    def test_n_zero(self):
        assert make_views(None, torch.zeros(8), AugmentationSpec(n=0)) == []

    def test_default_n(self):
        assert AugmentationSpec().n == 2

    def test_sigma_zero_views(self):
        s = torch.randn(8)
        views = make_views(None, s, AugmentationSpec(sigma=0.0, n=3), generator=gen())
        assert len(views) == 3
        assert all(torch.equal(v.state, s) and v.source == "direct_perturbation" for v in views)

    def test_views_are_independent(self):
        views = make_views(None, torch.zeros(8), AugmentationSpec(n=2), generator=gen())
        assert not torch.equal(views[0].state, views[1].state)

    def test_item_mask_reencodes_with_gradient(self):
        enc = build_encoder(self.cfg)
        seqs = torch.tensor([[1, 2, 3, 4, 5], [10, 10, 1, 2, 3]])
        s = enc(seqs)
        views = make_views(seqs, s, AugmentationSpec(kind="item_mask"), enc, gen())
        assert {v.source for v in views} == {"reencoded_masked_sequence"}
        assert views[0].state.shape == s.shape
        # the short row is below the threshold: its view equals the clean encoding
        torch.testing.assert_close(views[0].state[1], s[1])
        views[0].state.sum().backward()
        assert enc.item_embedding.weight.grad[self.cfg.mask_id].abs().sum() > 0

    def test_item_mask_needs_encoder(self):
        with pytest.raises(ValueError):
            make_views(torch.tensor([[1, 2, 3, 4, 5]]), torch.zeros(1, 8), AugmentationSpec(kind="item_mask"))

    @pytest.mark.parametrize("bad", [dict(sigma=-1), dict(alpha=0.01, beta=0.001), dict(min_len_T=0),
                                     dict(drop_p=1.0), dict(n=-1), dict(kind="crop")])
    def test_spec_validation(self, bad):
        with pytest.raises(ValueError):
            AugmentationSpec(**bad)


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["gaussian", "uniform", "dim_dropout"]),
    seed=st.integers(0, 2**31 - 1),
    n=st.integers(0, 4),
)
def test_view_properties(kind, seed, n):
    spec = AugmentationSpec(kind=kind, n=n, sigma=0.01, drop_p=0.3)
    s = torch.randn(3, 6, generator=gen(seed))
    before = s.clone()
    a = make_views(None, s, spec, generator=gen(seed))
    b = make_views(None, s, spec, generator=gen(seed))
    assert torch.equal(s, before)
    assert len(a) == n
    for va, vb in zip(a, b):
        assert torch.equal(va.state, vb.state)
        assert va.state.shape == s.shape
        delta = (va.state - s).abs().max().item() if n else 0.0
        if kind == "uniform":
            assert delta <= spec.beta + 1e-7
        if kind == "dim_dropout":
            assert delta <= s.abs().max().item()
