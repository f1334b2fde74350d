"""Joint supervised + double-Q training with state augmentation and contrastive terms."""

from __future__ import annotations

import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentationSpec, make_views
from .datasets import TupleArrays
from .encoders import EncoderConfig
from .evaluation import EmptyEvaluationError, evaluate
from .heads import double_q_target
from .losses import (
    LossBreakdown,
    LossWeights,
    augmented_td_from_targets,
    contrastive_action_loss,
    contrastive_state_loss,
    joint_loss,
    q_td_loss,
    supervised_ce,
    weighted_total,
)
from .model import (
    CSANetwork,
    atomic_torch_save,
    build_network,
    load_checkpoint,
    network_from_payload,
    network_payload,
)

log = logging.getLogger(__name__)

CONTRASTIVE_MODES = ("state", "action", "off")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, breakdown: dict):
        super().__init__(f"non-finite training loss: {breakdown}")
        self.breakdown = breakdown


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    gamma: float = 0.5
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    contrastive_mode: str = "state"
    batch_size: int = 256
    learning_rate: float = 0.01
    max_epochs: int = 5
    eval_every: int = 1
    seed: int = 0
    deterministic: bool = True
    activation: str = "identity"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationSpec(**self.augmentation)
        errors = []
        if not 0.0 <= self.gamma <= 1.0:
            errors.append("gamma must lie in [0, 1]")
        if self.contrastive_mode not in CONTRASTIVE_MODES:
            errors.append(f"contrastive_mode must be one of {CONTRASTIVE_MODES}")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.contrastive_active and self.batch_size < 2:
            errors.append("contrastive training needs batch_size >= 2 for in-batch negatives")
        if self.contrastive_active and self.augmentation.n < 1:
            errors.append("contrastive training needs at least one augmented view (n >= 1)")
        if self.learning_rate <= 0:
            errors.append("learning_rate must be positive")
        if self.max_epochs < 0 or self.eval_every < 0:
            errors.append("max_epochs and eval_every must be >= 0")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def contrastive_active(self) -> bool:
        return self.contrastive_mode != "off" and self.weights.w_c > 0

    @property
    def augmented_active(self) -> bool:
        return self.weights.w_a > 0 and self.augmentation.n > 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    network: CSANetwork
    optimizer: torch.optim.Optimizer
    step: int = 0
    epoch: int = 0
    # separate streams so that enabling one random path never shifts another
    coin_gen: torch.Generator = field(default_factory=torch.Generator)
    aug_gen: torch.Generator = field(default_factory=torch.Generator)
    neg_gen: torch.Generator = field(default_factory=torch.Generator)
    best_metric: float = float("-inf")

    def payload(self, cfg: TrainConfig) -> dict:
        doc = network_payload(self.network)
        doc.update(
            optimizer=self.optimizer.state_dict(),
            step=self.step,
            epoch=self.epoch,
            rng={k: getattr(self, k).get_state() for k in ("coin_gen", "aug_gen", "neg_gen")},
            best_metric=self.best_metric,
            train_config=cfg.to_dict(),
        )
        return doc


def make_optimizer(net: CSANetwork, lr: float) -> torch.optim.Optimizer:
    return torch.optim.Adam(net.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def init_train_state(enc_cfg: EncoderConfig, cfg: TrainConfig, network: CSANetwork | None = None) -> TrainState:
    net = network if network is not None else build_network(enc_cfg, cfg.activation, seed=cfg.seed)
    state = TrainState(net, make_optimizer(net, cfg.learning_rate))
    for k, gen in enumerate((state.coin_gen, state.aug_gen, state.neg_gen)):
        gen.manual_seed(cfg.seed * 1000003 + 17 * (k + 1))
    return state


def train_state_from_payload(payload: dict, cfg: TrainConfig) -> TrainState:
    net = network_from_payload(payload)
    state = TrainState(net, make_optimizer(net, cfg.learning_rate))
    if "optimizer" in payload:
        state.optimizer.load_state_dict(payload["optimizer"])
    state.step = int(payload.get("step", 0))
    state.epoch = int(payload.get("epoch", 0))
    state.best_metric = float(payload.get("best_metric", float("-inf")))
    for k, st in payload.get("rng", {}).items():
        getattr(state, k).set_state(st)
    return state


@dataclass
class Batch:
    state: torch.Tensor
    action: torch.Tensor
    reward: torch.Tensor
    next_state: torch.Tensor
    terminal: torch.Tensor
    state_len: torch.Tensor
    next_len: torch.Tensor

    @classmethod
    def from_arrays(cls, arrays: TupleArrays, dtype=torch.float32) -> "Batch":
        return cls(
            state=torch.as_tensor(arrays.state, dtype=torch.long),
            action=torch.as_tensor(arrays.action, dtype=torch.long),
            reward=torch.as_tensor(arrays.reward, dtype=dtype),
            next_state=torch.as_tensor(arrays.next_state, dtype=torch.long),
            terminal=torch.as_tensor(arrays.terminal, dtype=torch.bool),
            state_len=torch.as_tensor(arrays.state_len, dtype=torch.long),
            next_len=torch.as_tensor(arrays.next_len, dtype=torch.long),
        )

    def __len__(self) -> int:
        return len(self.action)


def in_batch_partners(batch_size: int, generator: torch.Generator | None = None) -> torch.Tensor:
    """For each row, a uniformly chosen *other* row of the batch."""
    shift = torch.randint(1, batch_size, (batch_size,), generator=generator)
    return (torch.arange(batch_size) + shift) % batch_size


def compute_loss_terms(
    net: CSANetwork,
    batch: Batch,
    cfg: TrainConfig,
    online: int,
    aug_gen: torch.Generator | None = None,
    neg_gen: torch.Generator | None = None,
) -> dict[str, torch.Tensor]:
    """Forward pass producing every active (unweighted) loss term.

    Bootstrap targets are computed under ``no_grad`` from the current
    parameters and enter the losses as constants.
    """
    w = cfg.weights
    spec = cfg.augmentation
    enc = net.encoder
    head = net.q_pair[online]
    a = batch.action.unsqueeze(-1)
    terms: dict[str, torch.Tensor] = {}

    s = enc(batch.state)
    if w.w_s > 0:
        terms["supervised"] = supervised_ce(net.supervised_head(s), batch.action)

    need_q = w.w_q > 0 or cfg.contrastive_active
    q_all = head(s) if need_q else None

    s_next = None
    if w.w_q > 0 or cfg.augmented_active:
        with torch.no_grad():
            s_next = enc(batch.next_state)

    if w.w_q > 0:
        target = double_q_target(batch.reward, s_next, net.q_pair, online, cfg.gamma, batch.terminal)
        terms["q_td"] = q_td_loss(q_all.gather(-1, a).squeeze(-1), target)

    views_t = None
    if cfg.augmented_active or cfg.contrastive_active:
        views_t = [v.state for v in make_views(batch.state, s, spec, enc, aug_gen, batch.state_len)]
        q_views = [head(v).gather(-1, a).squeeze(-1) for v in views_t]

    if cfg.augmented_active:
        with torch.no_grad():
            views_next = [
                v.state for v in make_views(batch.next_state, s_next, spec, enc, aug_gen, batch.next_len)
            ]
            targets = [
                double_q_target(batch.reward, v, net.q_pair, online, cfg.gamma, batch.terminal)
                for v in views_next
            ]
        terms["augmented"] = augmented_td_from_targets(q_views, targets)

    if cfg.contrastive_active:
        partner = in_batch_partners(len(batch), neg_gen)
        q_pos = q_all.gather(-1, a).squeeze(-1)
        if cfg.contrastive_mode == "state":
            q_neg = head(s[partner]).gather(-1, a).squeeze(-1)
            terms["contrastive"] = contrastive_state_loss(q_pos, q_neg, torch.stack(q_views))
        else:
            q_neg = q_all.gather(-1, batch.action[partner].unsqueeze(-1)).squeeze(-1)
            terms["contrastive"] = contrastive_action_loss(q_pos, q_neg, torch.stack(q_views))
    return terms


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig, online: int | None = None) -> LossBreakdown:
    """One coin flip, one forward pass, one optimizer update. Mutates ``state``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    net = state.network
    if online is None:
        online = net.q_pair.flip(state.coin_gen)
    terms = compute_loss_terms(net, batch, cfg, online, state.aug_gen, state.neg_gen)
    total = weighted_total(terms, cfg.weights)
    detached = {k: float(v.detach()) for k, v in terms.items()}
    if not torch.isfinite(total.detach()).all() or not all(np.isfinite(list(detached.values()))):
        raise NonFiniteLossError({**detached, "total": float(total.detach())})
    breakdown = joint_loss(detached, cfg.weights)
    state.optimizer.zero_grad(set_to_none=True)
    if total.requires_grad:
        total.backward()
        state.optimizer.step()
    state.step += 1
    return breakdown


def iterate_batches(n: int, batch_size: int, seed: int, epoch: int, min_batch: int = 1):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for i in range(0, n, batch_size):
        idx = order[i : i + batch_size]
        if len(idx) >= min_batch:
            yield idx


def set_determinism(enabled: bool) -> None:
    torch.use_deterministic_algorithms(enabled)


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    log_path: Path
    validation: list[dict]


def _validation_metric(net, val: TupleArrays | None, seed: int) -> tuple[float, dict]:
    if val is None or len(val) == 0:
        return float("nan"), {}
    try:
        report = evaluate(net, val, feedback="purchase", ks=(5, 10, 20), seed=seed)
    except EmptyEvaluationError:
        log.warning("validation split has no purchase events; selecting on all events")
        report = evaluate(net, val, feedback="all", ks=(5, 10, 20), seed=seed)
    return report.ndcg[10], report.to_dict()


def train(
    train_arrays: TupleArrays,
    val_arrays: TupleArrays | None,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    out_dir: str | os.PathLike,
    resume: str | os.PathLike | None = None,
) -> TrainResult:
    """Epoch loop with per-step JSONL logging and best-validation retention.

    Writes ``train_log.jsonl``, ``last.pt`` (after every epoch, for resuming),
    ``best.pt`` and a step/metric-stamped copy of each new best.
    """
    if len(train_arrays) == 0:
        raise ValueError("training split is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg.deterministic)
    log_path = out / "train_log.jsonl"
    last_path, best_path = out / "last.pt", out / "best.pt"

    if resume is not None:
        state = train_state_from_payload(load_checkpoint(resume), cfg)
        mode = "a"
    else:
        state = init_train_state(enc_cfg, cfg)
        mode = "w"

    validation = []

    def save_best(metric: float) -> None:
        payload = state.payload(cfg)
        stamped = out / f"ckpt-step{state.step:07d}-ndcg{metric:.4f}.pt"
        atomic_torch_save(payload, stamped)
        shutil.copyfile(stamped, best_path)

    if resume is None:
        metric, report = _validation_metric(state.network, val_arrays, cfg.seed)
        state.best_metric = metric if np.isfinite(metric) else float("-inf")
        validation.append({"epoch": 0, "step": 0, **report})
        save_best(metric if np.isfinite(metric) else 0.0)
        atomic_torch_save(state.payload(cfg), last_path)

    min_batch = 2 if cfg.contrastive_active else 1
    with open(log_path, mode, encoding="utf-8") as logf:
        while state.epoch < cfg.max_epochs:
            epoch = state.epoch
            for idx in iterate_batches(len(train_arrays), cfg.batch_size, cfg.seed, epoch, min_batch):
                batch = Batch.from_arrays(train_arrays.take(idx))
                bd = train_step(state, batch, cfg)
                rec = {"step": state.step, "epoch": epoch, **bd.to_dict(), "wall_time": time.time()}
                logf.write(json.dumps(rec) + "\n")
            logf.flush()
            state.epoch += 1
            if cfg.eval_every and (state.epoch % cfg.eval_every == 0 or state.epoch == cfg.max_epochs):
                metric, report = _validation_metric(state.network, val_arrays, cfg.seed)
                validation.append({"epoch": state.epoch, "step": state.step, **report})
                log.info("epoch %d step %d val ndcg@10 %.4f", state.epoch, state.step, metric)
                if np.isfinite(metric) and metric > state.best_metric:
                    state.best_metric = metric
                    save_best(metric)
            atomic_torch_save(state.payload(cfg), last_path)
    if val_arrays is None or len(val_arrays) == 0:
        shutil.copyfile(last_path, best_path)
    return TrainResult(best_path, last_path, log_path, validation)
