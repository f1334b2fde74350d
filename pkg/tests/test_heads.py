import pytest
import torch

from csarec.heads import DoubleQPair, QHead, SupervisedHead, double_q_target, q_values, ranking_scores

from oracles import central_difference_grads, relative_error


def set_linear(head, weight, bias=None):
    with torch.no_grad():
        head.linear.weight.copy_(torch.as_tensor(weight, dtype=torch.float32))
        head.linear.bias.copy_(torch.zeros(head.num_items) if bias is None else torch.as_tensor(bias))


@pytest.mark.parametrize("cls,fn", [(SupervisedHead, ranking_scores), (QHead, q_values)])
class TestLinearHeads:
    def test_zero_state_zero_bias(self, cls, fn):
        head = cls(4, 6)
        set_linear(head, torch.randn(6, 4))
        assert torch.equal(fn(torch.zeros(4), head), torch.zeros(6))

    def test_hand_example(self, cls, fn):
        head = cls(2, 3)
        set_linear(head, [[1, 0], [0, 1], [1, 1]])
        assert fn(torch.tensor([2.0, 3.0]), head).tolist() == [2.0, 3.0, 5.0]

    def test_gradient_is_weight_row(self, cls, fn):
        head = cls(3, 4).double()
        s = torch.randn(3, dtype=torch.float64, requires_grad=True)
        for i in range(4):
            (g,) = torch.autograd.grad(fn(s, head)[i], s)
            torch.testing.assert_close(g, head.linear.weight[i].detach())
            num = central_difference_grads(lambda: fn(s, head)[i], [s.detach()])[0]
            assert relative_error(g, num) <= 1e-6

    def test_dimension_mismatch(self, cls, fn):
        with pytest.raises(ValueError, match="dimension"):
            fn(torch.zeros(5), cls(4, 3))

    def test_only_real_items_scored(self, cls, fn):
        assert fn(torch.zeros(2, 4), cls(4, 7)).shape == (2, 7)


class TestDoubleQTarget:
    def pair(self):
        pair = DoubleQPair(2, 2)
        # state (1, 0) reads off column 0 of each weight matrix
        set_linear(pair[0], [[1, 0], [5, 0]])
        set_linear(pair[1], [[10, 0], [2, 0]])
        return pair, torch.tensor([1.0, 0.0])

    def test_hand_toy(self):
        pair, s = self.pair()
        assert double_q_target(1.0, s, pair, 0, 0.5, False).item() == pytest.approx(2.0)

    def test_other_head_online(self):
        pair, s = self.pair()
        # online B picks action 0, bootstrap from A's value 1
        assert double_q_target(1.0, s, pair, 1, 0.5, False).item() == pytest.approx(1.5)

    def test_terminal(self):
        pair, s = self.pair()
        assert double_q_target(0.7, s, pair, 0, 0.5, True).item() == pytest.approx(0.7)

    def test_gamma_zero(self):
        pair = DoubleQPair(3, 4)
        for _ in range(5):
            assert double_q_target(0.2, torch.randn(3), pair, 0, 0.0, False).item() == pytest.approx(0.2)

    def test_gamma_out_of_range(self):
        pair, s = self.pair()
        with pytest.raises(ValueError):
            double_q_target(1.0, s, pair, 0, 1.5, False)

    def test_no_gradient(self):
        pair, s = self.pair()
        s = s.requires_grad_()
        t = double_q_target(1.0, s, pair, 0, 0.5, False)
        assert not t.requires_grad

    def test_batched_mixed_terminal(self):
        pair, s = self.pair()
        t = double_q_target(torch.tensor([1.0, 1.0]), torch.stack([s, s]), pair, 0, 0.5,
                            torch.tensor([False, True]))
        assert t.tolist() == pytest.approx([2.0, 1.0])

    @pytest.mark.parametrize("scale", [0.1, 3.0, 1000.0])
    def test_argmax_decoupling(self, scale):
        torch.manual_seed(0)
        pair = DoubleQPair(4, 9)
        s = torch.randn(16, 4)
        base = double_q_target(torch.zeros(16), s, pair, 0, 1.0, torch.zeros(16, dtype=torch.bool))
        with torch.no_grad():
            pair[1].linear.weight.mul_(scale)
            pair[1].linear.bias.mul_(scale)
        scaled = double_q_target(torch.zeros(16), s, pair, 0, 1.0, torch.zeros(16, dtype=torch.bool))
        torch.testing.assert_close(scaled, scale * base, rtol=1e-5, atol=1e-6)


def test_heads_do_not_share_storage():
    pair = DoubleQPair(4, 5)
    a = {p.data_ptr() for p in pair[0].parameters()}
    b = {p.data_ptr() for p in pair[1].parameters()}
    assert not a & b


def test_coin_is_fair_and_seeded():
    pair = DoubleQPair(2, 2)
    g = torch.Generator().manual_seed(5)
    flips = [pair.flip(g) for _ in range(4000)]
    assert abs(sum(flips) - 2000) <= 4 * (4000 * 0.25) ** 0.5
    g2 = torch.Generator().manual_seed(5)
    assert flips[:50] == [pair.flip(g2) for _ in range(50)]


def test_unknown_activation():
    with pytest.raises(ValueError):
        QHead(2, 2, activation="softsign")
