"""The shared-encoder network and its versioned checkpoint container."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import torch
import torch.nn as nn

from .encoders import EncoderConfig, build_encoder
from .heads import DoubleQPair, SupervisedHead

CHECKPOINT_FORMAT = "csarec-checkpoint/1"


class CSANetwork(nn.Module):
    """Encoder ``G`` feeding a supervised ranking head and a double-Q pair."""

    def __init__(self, cfg: EncoderConfig, activation: str = "identity"):
        super().__init__()
        self.cfg = cfg
        self.activation = activation
        self.encoder = build_encoder(cfg)
        d = cfg.embedding_dim
        self.supervised_head = SupervisedHead(d, cfg.num_items, activation)
        self.q_pair = DoubleQPair(d, cfg.num_items, activation)

    @property
    def num_items(self) -> int:
        return self.cfg.num_items

    def forward(self, seqs: torch.Tensor) -> torch.Tensor:
        return self.supervised_head(self.encoder(seqs))

    def q_scores(self, seqs: torch.Tensor, head: int = 0) -> torch.Tensor:
        return self.q_pair[head](self.encoder(seqs))


def build_network(cfg: EncoderConfig, activation: str = "identity", seed: int = 0) -> CSANetwork:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return CSANetwork(cfg, activation)


def atomic_torch_save(obj, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def network_payload(net: CSANetwork) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "encoder_config": net.cfg.to_dict(),
        "activation": net.activation,
        "parameters": {k: v.detach().clone() for k, v in net.state_dict().items()},
    }


def load_checkpoint(path: str | os.PathLike) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    tag = payload.get("format") if isinstance(payload, dict) else None
    if tag != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: checkpoint format {tag!r}, expected {CHECKPOINT_FORMAT!r}")
    return payload


def network_from_payload(payload: dict) -> CSANetwork:
    cfg = EncoderConfig(**payload["encoder_config"])
    net = CSANetwork(cfg, payload.get("activation", "identity"))
    net.load_state_dict(payload["parameters"])
    return net


def load_network(path_or_payload) -> CSANetwork:
    if isinstance(path_or_payload, CSANetwork):
        return path_or_payload
    payload = path_or_payload
    if not isinstance(payload, dict):
        payload = load_checkpoint(payload)
    return network_from_payload(payload)
