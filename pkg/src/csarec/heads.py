"""Ranking and Q-value output layers plus the double-Q target."""

from __future__ import annotations

import torch
import torch.nn as nn

ACTIVATIONS = {
    "identity": lambda x: x,
    "tanh": torch.tanh,
    "relu": torch.relu,
}


class LinearHead(nn.Module):
    """``phi(W s + b)`` over the real items only (special tokens are never scored)."""

    def __init__(self, dim: int, num_items: int, activation: str = "identity"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.linear = nn.Linear(dim, num_items)

    @property
    def num_items(self) -> int:
        return self.linear.out_features

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        if s.shape[-1] != self.linear.in_features:
            raise ValueError(
                f"state dimension {s.shape[-1]} != head input {self.linear.in_features}"
            )
        return ACTIVATIONS[self.activation](self.linear(s))


class SupervisedHead(LinearHead):
    pass


class QHead(LinearHead):
    pass


class DoubleQPair(nn.Module):
    """Two independently parameterised Q heads; index 0 is A, 1 is B."""

    def __init__(self, dim: int, num_items: int, activation: str = "identity"):
        super().__init__()
        self.heads = nn.ModuleList([QHead(dim, num_items, activation) for _ in range(2)])

    def __getitem__(self, k: int) -> QHead:
        return self.heads[k]

    def flip(self, generator: torch.Generator | None = None) -> int:
        """Fair coin for which head is online this step."""
        return int(torch.randint(0, 2, (1,), generator=generator).item())


def ranking_scores(s: torch.Tensor, head: SupervisedHead) -> torch.Tensor:
    return head(s)


def q_values(s: torch.Tensor, head: QHead) -> torch.Tensor:
    return head(s)


def double_q_target(
    reward,
    s_next: torch.Tensor,
    pair: DoubleQPair,
    online: int,
    gamma: float,
    terminal,
) -> torch.Tensor:
    """``r + gamma * Q_other(s', argmax_a Q_online(s', a))``, or ``r`` when terminal.

    Works on a single state ``(d,)`` or a batch ``(B, d)``. The result is
    detached: no gradient flows through the bootstrap.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    with torch.no_grad():
        s_next = s_next.detach()
        reward = torch.as_tensor(reward, dtype=s_next.dtype)
        terminal = torch.as_tensor(terminal, dtype=torch.bool)
        q_online = pair[online](s_next)
        q_other = pair[1 - online](s_next)
        best = q_online.argmax(dim=-1, keepdim=True)
        boot = q_other.gather(-1, best).squeeze(-1)
        boot = torch.where(terminal, torch.zeros_like(boot), boot)
        return reward + gamma * boot
