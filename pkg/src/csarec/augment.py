"""State augmentations: Gaussian noise, uniform noise, item mask, dimension dropout.

All functions take an explicit ``torch.Generator`` and never modify their
inputs. Noise functions accept a single state ``(d,)`` or a batch ``(B, d)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

AUGMENTATION_KINDS = ("gaussian", "uniform", "item_mask", "dim_dropout")


@dataclass
class AugmentationSpec:
    kind: str = "gaussian"
    sigma: float = 0.003
    alpha: float = 0.001
    beta: float = 0.005
    min_len_T: int = 3
    drop_p: float = 0.1
    n: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.kind not in AUGMENTATION_KINDS:
            errors.append(f"kind must be one of {AUGMENTATION_KINDS}, got {self.kind!r}")
        if self.sigma < 0:
            errors.append("sigma must be >= 0")
        if not 0 <= self.alpha <= self.beta:
            errors.append("need 0 <= alpha <= beta")
        if self.min_len_T < 1:
            errors.append("min_len_T must be >= 1")
        if not 0 <= self.drop_p < 1:
            errors.append("drop_p must lie in [0, 1)")
        if self.n < 0:
            errors.append("n must be >= 0")
        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self) -> dict:
        return asdict(self)


def gaussian_noise(s: torch.Tensor, sigma: float, generator: torch.Generator | None = None):
    eps = torch.randn(s.shape, generator=generator, dtype=s.dtype, device=s.device)
    return s + sigma * eps


def uniform_noise(
    s: torch.Tensor, alpha: float, beta: float, generator: torch.Generator | None = None
):
    if beta < alpha:
        raise ValueError("beta must be >= alpha")
    u = torch.rand(s.shape, generator=generator, dtype=s.dtype, device=s.device)
    return s + (alpha + (beta - alpha) * u)


def dim_dropout(s: torch.Tensor, p: float, generator: torch.Generator | None = None):
    # independent Bernoulli(p) zeroing per coordinate, no 1/(1-p) rescaling
    u = torch.rand(s.shape, generator=generator, dtype=s.dtype, device=s.device)
    return s * (u >= p).to(s.dtype)


def mask_items(
    seqs: torch.Tensor,
    true_lens: torch.Tensor,
    T: int,
    mask_id: int,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Replace one uniformly chosen unpadded position per row by ``mask_id``.

    Rows are left-padded, so the unpadded items are the last ``true_len``
    positions. Rows with ``true_len <= T`` come back unchanged.
    """
    seqs = torch.as_tensor(seqs, dtype=torch.long)
    true_lens = torch.as_tensor(true_lens, dtype=torch.long).reshape(-1)
    B, L = seqs.shape
    u = torch.rand(B, generator=generator, dtype=torch.float64)
    lens = true_lens.clamp(min=1, max=L)
    offset = torch.minimum((u * lens).long(), lens - 1)
    pos = L - 1 - offset
    out = seqs.clone()
    rows = torch.nonzero(true_lens > T).squeeze(-1)
    out[rows, pos[rows]] = mask_id
    return out


def mask_one_item(seq, true_len: int, T: int, mask_id: int, generator=None) -> list[int]:
    seq = torch.as_tensor(seq, dtype=torch.long).reshape(1, -1)
    return mask_items(seq, torch.tensor([true_len]), T, mask_id, generator)[0].tolist()


@dataclass
class AugmentedView:
    state: torch.Tensor
    source: str  # "direct_perturbation" | "reencoded_masked_sequence"


def perturb(s: torch.Tensor, spec: AugmentationSpec, generator=None) -> torch.Tensor:
    """One direct perturbation of ``s`` for the non-mask kinds."""
    if spec.kind == "gaussian":
        return gaussian_noise(s, spec.sigma, generator)
    if spec.kind == "uniform":
        return uniform_noise(s, spec.alpha, spec.beta, generator)
    if spec.kind == "dim_dropout":
        return dim_dropout(s, spec.drop_p, generator)
    raise ValueError(f"{spec.kind!r} is not a direct state perturbation")


def make_views(
    seqs: torch.Tensor,
    s: torch.Tensor,
    spec: AugmentationSpec,
    encoder=None,
    generator: torch.Generator | None = None,
    true_lens: torch.Tensor | None = None,
) -> list[AugmentedView]:
    """``spec.n`` independent views of the same kind.

    For ``item_mask`` every view re-encodes a masked copy of ``seqs`` through
    ``encoder`` (inside the autograd graph); ``true_lens`` defaults to the
    count of non-pad positions.
    """
    views = []
    for _ in range(spec.n):
        if spec.kind == "item_mask":
            if encoder is None:
                raise ValueError("item_mask views need the encoder")
            seqs_t = torch.as_tensor(seqs, dtype=torch.long)
            single = seqs_t.dim() == 1
            if single:
                seqs_t = seqs_t.unsqueeze(0)
            lens = true_lens
            if lens is None:
                lens = (seqs_t != encoder.cfg.pad_id).sum(dim=1)
            masked = mask_items(seqs_t, lens, spec.min_len_T, encoder.cfg.mask_id, generator)
            state = encoder(masked)
            views.append(AugmentedView(state[0] if single else state, "reencoded_masked_sequence"))
        else:
            views.append(AugmentedView(perturb(s, spec, generator), "direct_perturbation"))
    return views
