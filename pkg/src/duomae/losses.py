"""Pre-training losses and their weighted composition.

Five components: pixel reconstruction at masked patches (MSE), token
prediction at masked positions (cross-entropy), per-modality feature
alignment between student latents from masked inputs and teacher latents
from original inputs (MSE), and binary pair matching (two-way softmax
cross-entropy). The composite is

    total = (1 - alpha) * (image_recon + token_recon)
            + alpha * (image_feature + text_feature)
            + pair_match

Both MSE losses reduce by per-sample element mean, then batch mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractError


@dataclass
class LossBundle:
    """Float snapshot of one step's loss components, for the metrics log."""

    image_recon: float
    token_recon: float
    image_feature: float
    text_feature: float
    pair_match: float
    alpha: float

    @property
    def total(self) -> float:
        return (
            (1.0 - self.alpha) * (self.image_recon + self.token_recon)
            + self.alpha * (self.image_feature + self.text_feature)
            + self.pair_match
        )

    def to_dict(self) -> dict[str, float]:
        return {
            "image_recon": self.image_recon,
            "token_recon": self.token_recon,
            "image_feature": self.image_feature,
            "text_feature": self.text_feature,
            "pair_match": self.pair_match,
            "alpha": self.alpha,
            "total": self.total,
        }


def masked_image_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """MSE over masked-patch pixels: per-sample element mean, then batch mean."""
    if predicted.shape != target.shape:
        raise ContractError(f"prediction shape {tuple(predicted.shape)} != target shape {tuple(target.shape)}")
    return ((predicted - target) ** 2).mean(dim=(1, 2)).mean()


def masked_token_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of the true token at masked positions."""
    if logits.shape[:2] != labels.shape:
        raise ContractError(f"logit shape {tuple(logits.shape)} does not cover labels {tuple(labels.shape)}")
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    return (-picked).mean(dim=1).mean()


def feature_alignment_loss(student_latent: torch.Tensor, teacher_latent: torch.Tensor) -> torch.Tensor:
    """MSE between pooled latents; the teacher side carries no gradient."""
    if student_latent.shape != teacher_latent.shape:
        raise ContractError(
            f"latent shapes differ: {tuple(student_latent.shape)} vs {tuple(teacher_latent.shape)}"
        )
    return ((student_latent - teacher_latent.detach()) ** 2).mean(dim=1).mean()


def pair_match_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Two-way softmax cross-entropy; label 1 = matched pair, 0 = mismatched."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ContractError(f"pair-match logits must be (batch, 2), got {tuple(logits.shape)}")
    return F.cross_entropy(logits, labels)


def compose_pretrain(
    image_recon: torch.Tensor,
    token_recon: torch.Tensor,
    image_feature: torch.Tensor,
    text_feature: torch.Tensor,
    pair_match: torch.Tensor,
    alpha: float,
) -> torch.Tensor:
    return (1.0 - alpha) * (image_recon + token_recon) + alpha * (image_feature + text_feature) + pair_match
