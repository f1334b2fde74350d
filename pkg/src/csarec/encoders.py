"""Sequence encoders mapping a left-padded item-id window to a state vector."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

ENCODER_KINDS = ("recurrent", "self_attention", "filter_mlp")


@dataclass
class EncoderConfig:
    num_items: int
    embedding_dim: int = 64
    max_len: int = 10
    encoder_kind: str = "recurrent"
    attention_heads: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.num_items < 1:
            raise ValueError("num_items must be positive")
        if self.embedding_dim <= 0 or self.max_len <= 0:
            raise ValueError("embedding_dim and max_len must be positive")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.attention_heads < 1 or self.embedding_dim % self.attention_heads:
            raise ValueError("attention_heads must divide embedding_dim")

    @property
    def pad_id(self) -> int:
        return self.num_items

    @property
    def mask_id(self) -> int:
        return self.num_items + 1

    def to_dict(self) -> dict:
        return asdict(self)


class SequenceEncoder(nn.Module):
    """Shared plumbing: input validation and the item embedding table."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.item_embedding = nn.Embedding(cfg.num_items + 2, cfg.embedding_dim)
        nn.init.normal_(self.item_embedding.weight, std=0.1)

    @property
    def dim(self) -> int:
        return self.cfg.embedding_dim

    def check_input(self, seqs: torch.Tensor) -> torch.Tensor:
        if seqs.dim() != 2:
            raise ValueError(f"expected a (batch, {self.cfg.max_len}) id tensor, got {tuple(seqs.shape)}")
        if seqs.shape[1] != self.cfg.max_len:
            raise ValueError(f"sequence length {seqs.shape[1]} != max_len {self.cfg.max_len}")
        bad = (seqs < 0) | (seqs >= self.cfg.num_items + 2)
        if bad.any():
            row, pos = (int(v) for v in bad.nonzero()[0])
            raise ValueError(
                f"item id {int(seqs[row, pos])} out of range at row {row}, position {pos}"
            )
        return seqs

    def forward(self, seqs: torch.Tensor) -> torch.Tensor:
        seqs = self.check_input(torch.as_tensor(seqs, dtype=torch.long))
        return self.encode_ids(seqs)

    def encode_ids(self, seqs: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class RecurrentEncoder(SequenceEncoder):
    """Single-layer GRU; padded steps carry the hidden state through unchanged,
    so the final hidden state depends only on the unpadded prefix."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__(cfg)
        self.cell = nn.GRUCell(cfg.embedding_dim, cfg.embedding_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def encode_ids(self, seqs):
        emb = self.drop(self.item_embedding(seqs))
        keep = (seqs != self.cfg.pad_id).unsqueeze(-1).to(emb.dtype)
        h = emb.new_zeros(seqs.shape[0], self.dim)
        for t in range(seqs.shape[1]):
            h_new = self.cell(emb[:, t], h)
            h = keep[:, t] * h_new + (1.0 - keep[:, t]) * h
        return h


class SelfAttentionEncoder(SequenceEncoder):
    """One SASRec-style block: causal self-attention and a point-wise
    feed-forward layer, each pre-normed with a residual connection."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__(cfg)
        d = cfg.embedding_dim
        self.heads = cfg.attention_heads
        self.position_embedding = nn.Embedding(cfg.max_len, d)
        nn.init.normal_(self.position_embedding.weight, std=0.1)
        self.attn_norm = nn.LayerNorm(d)
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.ffn_norm = nn.LayerNorm(d)
        self.ffn1 = nn.Linear(d, d)
        self.ffn2 = nn.Linear(d, d)
        self.out_norm = nn.LayerNorm(d)
        self.drop = nn.Dropout(cfg.dropout)
        causal = torch.ones(cfg.max_len, cfg.max_len, dtype=torch.bool).tril()
        self.register_buffer("causal", causal, persistent=False)

    def encode_ids(self, seqs):
        B, L = seqs.shape
        d, h = self.dim, self.heads
        keep = seqs != self.cfg.pad_id
        pos = torch.arange(L, device=seqs.device)
        x = self.item_embedding(seqs) * math.sqrt(d) + self.position_embedding(pos)
        x = self.drop(x) * keep.unsqueeze(-1)

        q_in = self.attn_norm(x)
        q = self.q_proj(q_in).view(B, L, h, d // h).transpose(1, 2)
        k = self.k_proj(x).view(B, L, h, d // h).transpose(1, 2)
        v = self.v_proj(x).view(B, L, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        allowed = self.causal.unsqueeze(0) & keep.unsqueeze(1)  # (B, Lq, Lk)
        # fully-masked query rows (pad queries) get finite uniform weights
        scores = scores.masked_fill(~allowed.unsqueeze(1), -1e9)
        attn = self.drop(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(B, L, d)
        x = q_in + ctx
        x = x + self.drop(self.ffn2(self.drop(F.relu(self.ffn1(self.ffn_norm(x))))))
        x = self.out_norm(x) * keep.unsqueeze(-1)
        return x[:, -1]


class FilterMLPEncoder(SequenceEncoder):
    """Optional FMLP-style block: a learnable frequency-domain filter followed
    by a feed-forward layer. Pads are zeroed before the FFT."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__(cfg)
        d, L = cfg.embedding_dim, cfg.max_len
        self.position_embedding = nn.Embedding(L, d)
        nn.init.normal_(self.position_embedding.weight, std=0.1)
        self.filter = nn.Parameter(torch.randn(L // 2 + 1, d, 2) * 0.02)
        self.norm1 = nn.LayerNorm(d)
        self.ffn1 = nn.Linear(d, d)
        self.ffn2 = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(cfg.dropout)

    def encode_ids(self, seqs):
        L = seqs.shape[1]
        keep = (seqs != self.cfg.pad_id).unsqueeze(-1)
        pos = torch.arange(L, device=seqs.device)
        x = (self.item_embedding(seqs) + self.position_embedding(pos)) * keep
        spec = torch.fft.rfft(x, dim=1, norm="ortho")
        spec = spec * torch.view_as_complex(self.filter.to(x.dtype).contiguous())
        x = self.norm1(x + self.drop(torch.fft.irfft(spec, n=L, dim=1, norm="ortho")))
        x = self.norm2(x + self.drop(self.ffn2(F.gelu(self.ffn1(x)))))
        return x[:, -1]


def build_encoder(cfg: EncoderConfig) -> SequenceEncoder:
    kinds = {
        "recurrent": RecurrentEncoder,
        "self_attention": SelfAttentionEncoder,
        "filter_mlp": FilterMLPEncoder,
    }
    return kinds[cfg.encoder_kind](cfg)


def encode(encoder: SequenceEncoder, seq) -> torch.Tensor:
    """Encode a single length-L id sequence to a ``(d,)`` state."""
    seq = torch.as_tensor(seq, dtype=torch.long)
    if seq.dim() != 1:
        raise ValueError("encode takes one sequence; use encode_batch for several")
    return encoder(seq.unsqueeze(0))[0]


def encode_batch(encoder: SequenceEncoder, seqs) -> torch.Tensor:
    if not isinstance(seqs, torch.Tensor):
        rows = [list(r) for r in seqs]
        if not rows:
            raise ValueError("empty batch")
        if len({len(r) for r in rows}) != 1:
            raise ValueError("ragged batch: sequences differ in length")
        seqs = torch.tensor(rows, dtype=torch.long)
    if seqs.dim() != 2 or seqs.shape[0] < 1:
        raise ValueError("encode_batch expects a non-empty (batch, L) input")
    return encoder(seqs)
