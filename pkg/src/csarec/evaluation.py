"""Full-catalog ranking and HR/NDCG@k on held-out transitions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .datasets import Feedback, TupleArrays
from .model import CSANetwork, load_network

DEFAULT_KS = (5, 10, 20)


class EmptyEvaluationError(ValueError):
    pass


@dataclass
class MetricReport:
    hr: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    num_eval_events: int = 0

    @property
    def ks(self) -> tuple[int, ...]:
        return tuple(sorted(self.hr))

    def to_dict(self) -> dict:
        doc = {}
        for k in self.ks:
            doc[f"hr@{k}"] = self.hr[k]
            doc[f"ndcg@{k}"] = self.ndcg[k]
        doc["n"] = self.num_eval_events
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        ks = sorted(int(key.split("@")[1]) for key in doc if key.startswith("hr@"))
        return cls(
            hr={k: float(doc[f"hr@{k}"]) for k in ks},
            ndcg={k: float(doc[f"ndcg@{k}"]) for k in ks},
            num_eval_events=int(doc["n"]),
        )


def rank_of_target(scores, target: int, rng: np.random.Generator | None = None) -> int:
    """1-based rank of ``target``; ties fall in uniformly random order."""
    scores = np.asarray(scores)
    if not 0 <= target < scores.shape[-1]:
        raise ValueError(f"target {target} outside catalog of {scores.shape[-1]}")
    return int(ranks_from_scores(scores[None, :], np.array([target]), rng)[0])


def ranks_from_scores(
    scores: np.ndarray, targets: np.ndarray, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Vectorised rank: ``1 + #strictly greater + U{0..#tied others}``."""
    scores = np.asarray(scores)
    targets = np.asarray(targets, dtype=np.int64)
    t = scores[np.arange(len(targets)), targets][:, None]
    greater = (scores > t).sum(axis=1)
    ties = (scores == t).sum(axis=1) - 1
    rng = rng if rng is not None else np.random.default_rng(0)
    # uniform position of the target inside its tie group
    offset = np.floor(rng.random(len(targets)) * (ties + 1)).astype(np.int64)
    return 1 + greater + np.minimum(offset, ties)


def hr_ndcg(ranks: Sequence[int], ks: Sequence[int] = DEFAULT_KS) -> MetricReport:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise EmptyEvaluationError("no ranked events to evaluate")
    if (ranks < 1).any():
        raise ValueError("ranks are 1-based")
    report = MetricReport(num_eval_events=int(ranks.size))
    gain = 1.0 / np.log2(ranks + 1.0)
    for k in sorted(ks):
        hit = ranks <= k
        report.hr[k] = float(hit.mean())
        report.ndcg[k] = float(np.where(hit, gain, 0.0).mean())
    return report


@torch.no_grad()
def score_states(
    net: CSANetwork, seqs: np.ndarray, use_q: bool = False, batch_size: int = 1024
) -> np.ndarray:
    was_training = net.training
    net.eval()
    out = []
    for i in range(0, len(seqs), batch_size):
        chunk = torch.as_tensor(seqs[i : i + batch_size], dtype=torch.long)
        if use_q:
            s = net.encoder(chunk)
            scores = 0.5 * (net.q_pair[0](s) + net.q_pair[1](s))
        else:
            scores = net(chunk)
        out.append(scores.double().numpy())
    net.train(was_training)
    if not out:
        return np.zeros((0, net.num_items))
    return np.concatenate(out)


def parse_feedback_filter(value) -> Feedback | None:
    if value is None or isinstance(value, Feedback):
        return value
    if str(value).lower() in ("all", "any", "none"):
        return None
    return Feedback.from_label(str(value))


def evaluate(
    model,
    arrays: TupleArrays,
    feedback="purchase",
    ks: Sequence[int] = DEFAULT_KS,
    seed: int = 0,
    use_q: bool = False,
) -> MetricReport:
    """Rank every real item for each transition whose target has the chosen
    feedback type (``"all"`` keeps every transition)."""
    net = load_network(model)
    fb = parse_feedback_filter(feedback)
    events = arrays.filter_feedback(fb)
    if len(events) == 0:
        label = "any" if fb is None else fb.label
        raise EmptyEvaluationError(f"no evaluation events with feedback {label}")
    scores = score_states(net, events.state, use_q=use_q)
    ranks = ranks_from_scores(scores, events.action, np.random.default_rng(seed))
    return hr_ndcg(ranks, ks)
