"""Supervised, TD, augmented-TD and contrastive losses and their weighted sum.

Batch-aware: per-sample losses are averaged over leading batch dimensions
unless ``reduction="none"``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F

from .heads import DoubleQPair, double_q_target

TERMS = ("supervised", "q_td", "augmented", "contrastive")


@dataclass
class LossWeights:
    w_s: float = 1.0
    w_q: float = 1.0
    w_a: float = 1.0
    w_c: float = 1.0

    def __post_init__(self):
        for name, w in asdict(self).items():
            if not (w >= 0 and w != float("inf")):
                raise ValueError(f"{name} must be finite and >= 0, got {w}")

    def for_term(self, term: str) -> float:
        return {"supervised": self.w_s, "q_td": self.w_q, "augmented": self.w_a, "contrastive": self.w_c}[term]


@dataclass
class LossBreakdown:
    supervised: float = 0.0
    q_td: float = 0.0
    augmented: float = 0.0
    contrastive: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _reduce(x: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return x.mean()
    if reduction == "sum":
        return x.sum()
    if reduction == "none":
        return x
    raise ValueError(f"unknown reduction {reduction!r}")


def supervised_ce(scores: torch.Tensor, target, reduction: str = "mean") -> torch.Tensor:
    """``-log softmax(scores)[target]`` via log-sum-exp."""
    if not torch.isfinite(scores).all():
        raise ValueError("non-finite ranking scores")
    target = torch.as_tensor(target, dtype=torch.long, device=scores.device)
    if (target < 0).any() or (target >= scores.shape[-1]).any():
        raise ValueError("target item outside the catalog")
    logp = scores - torch.logsumexp(scores, dim=-1, keepdim=True)
    nll = -logp.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    return _reduce(nll, reduction)


def q_td_loss(q_sa: torch.Tensor, target, reduction: str = "mean") -> torch.Tensor:
    target = torch.as_tensor(target, dtype=q_sa.dtype).detach()
    return _reduce((target - q_sa) ** 2, reduction)


def augmented_td_from_targets(
    q_views: Sequence[torch.Tensor], targets: Sequence[torch.Tensor], reduction: str = "mean"
):
    """``sum_j (target_j - Q(view_j, a))^2`` with precomputed (detached) targets."""
    if len(q_views) != len(targets):
        raise ValueError(f"{len(q_views)} current views but {len(targets)} next-state targets")
    if not q_views:
        return torch.zeros(())
    total = sum((t.detach() - q) ** 2 for q, t in zip(q_views, targets))
    return _reduce(total, reduction)


def augmented_td_loss(
    views_t: Sequence[torch.Tensor],
    views_next: Sequence[torch.Tensor],
    action,
    reward,
    gamma: float,
    pair: DoubleQPair,
    online: int,
    terminal=False,
    reduction: str = "mean",
) -> torch.Tensor:
    """Bellman error summed over ``n`` augmented views of the same transition."""
    if len(views_t) != len(views_next):
        raise ValueError(f"{len(views_t)} current views but {len(views_next)} next-state views")
    if not views_t:
        return torch.zeros(())
    action = torch.as_tensor(action, dtype=torch.long)
    head = pair[online]
    q_views = [head(v).gather(-1, action.unsqueeze(-1)).squeeze(-1) for v in views_t]
    targets = [double_q_target(reward, v, pair, online, gamma, terminal) for v in views_next]
    return augmented_td_from_targets(q_views, targets, reduction)


def contrastive_loss(q_pos, q_neg, q_views, reduction: str = "mean") -> torch.Tensor:
    """``-log sigmoid((q_neg - mean_views)^2 - (q_pos - mean_views)^2)``.

    ``q_views`` stacks the ``n`` view Q-values along dim 0.
    """
    if isinstance(q_views, (list, tuple)):
        if not q_views:
            raise ValueError("contrastive loss needs at least one augmented view")
        q_views = torch.stack([torch.as_tensor(q) for q in q_views])
    q_views = torch.as_tensor(q_views)
    if q_views.shape[0] == 0:
        raise ValueError("contrastive loss needs at least one augmented view")
    q_pos = torch.as_tensor(q_pos, dtype=q_views.dtype)
    q_neg = torch.as_tensor(q_neg, dtype=q_views.dtype)
    q_bar = q_views.mean(dim=0)
    arg = (q_neg - q_bar) ** 2 - (q_pos - q_bar) ** 2
    return _reduce(F.softplus(-arg), reduction)


def contrastive_state_loss(q_pos, q_neg, q_views, reduction: str = "mean"):
    """Negative is ``Q(s', a_t)`` for a state ``s'`` from another sequence."""
    return contrastive_loss(q_pos, q_neg, q_views, reduction)


def contrastive_action_loss(q_pos, q_neg, q_views, reduction: str = "mean"):
    """Negative is ``Q(s_t, a')`` for an action ``a'`` logged in another sequence."""
    return contrastive_loss(q_pos, q_neg, q_views, reduction)


def weighted_total(terms: Mapping[str, torch.Tensor | None], weights: LossWeights) -> torch.Tensor:
    """Weighted sum; zero-weight and absent terms are left out of the graph."""
    total = None
    for name in TERMS:
        w = weights.for_term(name)
        value = terms.get(name)
        if w == 0 or value is None:
            continue
        part = value if w == 1 else w * value
        total = part if total is None else total + part
    if total is None:
        return torch.zeros(())
    return total


def joint_loss(terms: Mapping[str, float | torch.Tensor | None], weights: LossWeights) -> LossBreakdown:
    values = {}
    for name in TERMS:
        v = terms.get(name)
        v = 0.0 if v is None else float(v)
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError(f"loss term {name} is not finite: {v}")
        values[name] = v
    total = sum(weights.for_term(k) * v for k, v in values.items())
    return LossBreakdown(total=total, **values)
