"""Dense-feedback environment for multi-round recommendation.

Every (user, item) pair has a known reward (e.g. a watch ratio), so any
policy can be rolled out for a fixed number of rounds and scored by its
discounted cumulative reward.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

MATRIX_FORMAT = "csarec-matrix/1"


class RepeatedItemError(ValueError):
    pass


@dataclass
class DenseRewardMatrix:
    rewards: np.ndarray  # (num_users, num_items)

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError("reward matrix must be 2-D")
        if not np.isfinite(r).all():
            raise ValueError("reward matrix must be fully dense and finite")
        if (r < 0).any():
            raise ValueError("rewards must be >= 0")
        self.rewards = r

    @property
    def num_users(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_items(self) -> int:
        return self.rewards.shape[1]

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {MATRIX_FORMAT}\n{self.num_users} {self.num_items}\n")
            for row in self.rewards:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DenseRewardMatrix":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        if not lines:
            raise ValueError(f"{path}: empty matrix file")
        try:
            n_users, n_items = (int(v) for v in lines[0].split())
            values = np.array([float(v) for ln in lines[1:] for v in ln.split()])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed matrix file ({exc})") from None
        if values.size != n_users * n_items:
            raise ValueError(
                f"{path}: header says {n_users}x{n_items} but found {values.size} values"
            )
        return cls(values.reshape(n_users, n_items))


def low_rank_matrix(
    num_users: int, num_items: int, rank: int = 4, seed: int = 0, scale: float = 1.0
) -> DenseRewardMatrix:
    """Synthetic watch-ratio-like matrix ``softplus(U V^T)`` from Gaussian factors."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(num_users, rank))
    v = rng.normal(size=(num_items, rank))
    logits = u @ v.T / np.sqrt(rank)
    return DenseRewardMatrix(scale * np.logaddexp(0.0, logits))


@dataclass
class EpisodeState:
    user_id: int
    prefix: list[int] = field(default_factory=list)  # warm-start items
    history: list[int] = field(default_factory=list)  # recommended so far

    @property
    def round(self) -> int:
        return len(self.history)

    @property
    def sequence(self) -> list[int]:
        return self.prefix + self.history


class SimulatedEnv:
    """Multi-round environment over a dense reward matrix.

    Each user's episode starts from their ``warm_start`` highest-reward items
    within a seeded held-out column subset; held-out columns are never
    recommendable, and (by default) items are not recommended twice.
    """

    def __init__(
        self,
        matrix: DenseRewardMatrix,
        warm_start: int = 3,
        holdout_fraction: float = 0.1,
        no_repeat: bool = True,
        seed: int = 0,
    ):
        self.matrix = matrix
        self.no_repeat = no_repeat
        self.warm_start = warm_start
        n = matrix.num_items
        n_hold = 0
        if warm_start > 0:
            n_hold = max(warm_start, int(round(holdout_fraction * n)))
            if n_hold >= n:
                raise ValueError("held-out columns would cover the whole catalog")
        rng = np.random.default_rng(seed)
        self.holdout = np.sort(rng.choice(n, size=n_hold, replace=False)) if n_hold else np.array([], int)
        self.candidates = np.ones(n, dtype=bool)
        self.candidates[self.holdout] = False

    @property
    def num_users(self) -> int:
        return self.matrix.num_users

    @property
    def num_items(self) -> int:
        return self.matrix.num_items

    def reset(self, user: int) -> EpisodeState:
        if not 0 <= user < self.num_users:
            raise ValueError(f"user {user} outside 0..{self.num_users - 1}")
        prefix = []
        if self.warm_start:
            row = self.matrix.rewards[user, self.holdout]
            # highest reward first; ties by column index
            order = np.lexsort((self.holdout, -row))[: self.warm_start]
            prefix = [int(c) for c in self.holdout[order]]
        return EpisodeState(user, prefix, [])

    def available(self, state: EpisodeState) -> np.ndarray:
        mask = self.candidates.copy()
        if self.no_repeat:
            mask[state.history] = False
        return mask

    def step(self, state: EpisodeState, item: int) -> tuple[float, EpisodeState]:
        item = int(item)
        if not 0 <= item < self.num_items:
            raise ValueError(f"item {item} outside catalog of {self.num_items}")
        if self.no_repeat and item in state.history:
            raise RepeatedItemError(f"item {item} already recommended to user {state.user_id}")
        reward = float(self.matrix.rewards[state.user_id, item])
        return reward, EpisodeState(state.user_id, list(state.prefix), state.history + [item])


# a policy maps (env, episode states, availability masks (U, I)) to one item per episode
Policy = Callable[[SimulatedEnv, Sequence[EpisodeState], np.ndarray], Sequence[int]]


def greedy_oracle_policy(env, states, available):
    rows = env.matrix.rewards[[s.user_id for s in states]]
    return np.where(available, rows, -np.inf).argmax(axis=1)


class RandomPolicy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, env, states, available):
        u = self.rng.random(available.shape)
        return np.where(available, u, -1.0).argmax(axis=1)


class ModelPolicy:
    """Argmax of supervised-head scores over still-available items, given the
    last ``max_len`` items of the episode (warm start + recommendations)."""

    def __init__(self, network, use_q: bool = False):
        self.net = network
        self.use_q = use_q

    @torch.no_grad()
    def __call__(self, env, states, available):
        cfg = self.net.cfg
        L, pad = cfg.max_len, cfg.pad_id
        seqs = []
        for s in states:
            tail = s.sequence[-L:]
            seqs.append([pad] * (L - len(tail)) + tail)
        x = torch.tensor(seqs, dtype=torch.long)
        self.net.eval()
        z = self.net.encoder(x)
        if self.use_q:
            scores = 0.5 * (self.net.q_pair[0](z) + self.net.q_pair[1](z))
        else:
            scores = self.net.supervised_head(z)
        scores = scores.double().numpy()
        return np.where(available, scores, -np.inf).argmax(axis=1)


@dataclass
class RolloutResult:
    user_returns: np.ndarray  # (U,) discounted return per user
    round_rewards: np.ndarray  # (rounds,) mean immediate reward per round
    curve: np.ndarray  # (rounds,) mean discounted cumulative reward after each round

    @property
    def mean_return(self) -> float:
        return float(self.user_returns.mean())


def run_rounds(
    env: SimulatedEnv,
    policy: Policy,
    rounds: int = 10,
    gamma: float = 0.5,
    users: Sequence[int] | None = None,
) -> RolloutResult:
    """Roll out ``rounds`` recommendations for every user; return ``sum_t gamma^t r_t``."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    users = list(range(env.num_users)) if users is None else list(users)
    states = [env.reset(u) for u in users]
    rewards = np.zeros((len(users), rounds))
    for t in range(rounds):
        avail = np.stack([env.available(s) for s in states])
        if not avail.any(axis=1).all():
            raise ValueError(f"round {t + 1}: a user has no items left to recommend")
        items = policy(env, states, avail)
        for k, item in enumerate(items):
            rewards[k, t], states[k] = env.step(states[k], int(item))
    disc = gamma ** np.arange(rounds)
    per_round = rewards * disc
    return RolloutResult(
        user_returns=per_round.sum(axis=1),
        round_rewards=rewards.mean(axis=0),
        curve=np.cumsum(per_round, axis=1).mean(axis=0),
    )


def evaluate_policy(
    policy_factory: Callable[[int], Policy],
    env: SimulatedEnv,
    rounds: int = 10,
    repetitions: int = 3,
    gamma: float = 0.5,
    seed: int = 0,
) -> np.ndarray:
    """Mean cumulative-reward curve over ``repetitions`` rollouts; repetition
    ``k`` builds its policy from seed ``seed + k``."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    curves = [
        run_rounds(env, policy_factory(seed + k), rounds=rounds, gamma=gamma).curve
        for k in range(repetitions)
    ]
    return np.mean(curves, axis=0)


def evaluate_checkpoint(
    model, env: SimulatedEnv, rounds: int = 10, repetitions: int = 3, gamma: float = 0.5, seed: int = 0,
    use_q: bool = False,
) -> np.ndarray:
    from .model import load_network

    net = load_network(model)
    if net.num_items != env.num_items:
        raise ValueError(
            f"model catalog has {net.num_items} items but the environment has {env.num_items}"
        )
    return evaluate_policy(lambda _s: ModelPolicy(net, use_q), env, rounds, repetitions, gamma, seed)

