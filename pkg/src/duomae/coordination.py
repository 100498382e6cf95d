"""Gradient coordination for balanced multi-modal fine-tuning.

Per supervised step, each modality's contribution is the batch sum of the
ground-truth-class softmax probability from its split head. The faster
modality (larger contribution ratio) has its uni-modal encoder gradients
scaled by 1 - tanh(beta * ratio) and perturbed with zero-mean Gaussian noise
whose per-tensor variance equals the empirical variance of that tensor's
gradient elements this step. Fusion, heads, and the slower modality receive
their gradients unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractError, NumericalError
from .model import ModelBundle


@dataclass
class CoordinationState:
    step: int
    contribution_image: float
    contribution_text: float
    ratio_image: float
    ratio_text: float
    coeff_image: float
    coeff_text: float

    def to_dict(self) -> dict[str, float | int]:
        return {
            "step": self.step,
            "contribution_image": self.contribution_image,
            "contribution_text": self.contribution_text,
            "ratio_image": self.ratio_image,
            "ratio_text": self.ratio_text,
            "coeff_image": self.coeff_image,
            "coeff_text": self.coeff_text,
        }


@torch.no_grad()
def modality_contributions(
    image_logits: torch.Tensor, text_logits: torch.Tensor, labels: torch.Tensor
) -> tuple[float, float]:
    """Batch sums of the ground-truth-class softmax probability per split head."""
    num_classes = image_logits.shape[-1]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ContractError("label index out of range for the split heads")
    idx = labels.unsqueeze(-1)
    c_image = F.softmax(image_logits, dim=-1).gather(-1, idx).sum()
    c_text = F.softmax(text_logits, dim=-1).gather(-1, idx).sum()
    return float(c_image), float(c_text)


def optimization_ratios(contribution_image: float, contribution_text: float) -> tuple[float, float]:
    """ratio_image = C_image / C_text and its reciprocal; product is exactly 1."""
    if contribution_image <= 0.0 or contribution_text <= 0.0:
        raise ContractError("contributions must be strictly positive (softmax output cannot be zero)")
    return contribution_image / contribution_text, contribution_text / contribution_image


def coordination_coefficient(ratio: float, other_ratio: float, beta: float) -> float:
    """1 - tanh(beta * ratio) when this modality is the faster one, else 1."""
    if ratio > other_ratio:
        return 1.0 - math.tanh(beta * ratio)
    return 1.0


@torch.no_grad()
def modulate_gradients(
    params: list[torch.nn.Parameter],
    coeff: float,
    noise_generator: torch.Generator | None,
) -> None:
    """In-place: grad <- coeff * grad + noise, noise ~ N(0, var(grad elements)).

    Passing noise_generator=None disables the noise term (deterministic test
    mode); variance uses the population estimator so singleton tensors get
    zero noise rather than NaN.
    """
    for param in params:
        if param.grad is None:
            continue
        grad = param.grad
        if noise_generator is not None:
            std = grad.var(correction=0).sqrt()
            noise = torch.empty_like(grad).normal_(0.0, 1.0, generator=noise_generator) * std
            grad.mul_(coeff).add_(noise)
        else:
            grad.mul_(coeff)


def check_finite_gradients(bundle: ModelBundle) -> None:
    for name, param in bundle.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NumericalError(f"non-finite gradient in {name}; step aborted")


def supervised_loss(
    bundle: ModelBundle, patches: torch.Tensor, tokens: torch.Tensor, labels: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Cross-entropy on the joint head plus both split heads, unit weights.

    Inputs are full (unmasked) pairs. Returns (loss, joint, image, text) logits.
    """
    z_image, z_text = bundle.student(patches, tokens)
    joint_logits, image_logits, text_logits = bundle.task_heads(z_image, z_text)
    loss = (
        F.cross_entropy(joint_logits, labels)
        + F.cross_entropy(image_logits, labels)
        + F.cross_entropy(text_logits, labels)
    )
    return loss, joint_logits, image_logits, text_logits


def coordinated_step(
    bundle: ModelBundle,
    patches: torch.Tensor,
    tokens: torch.Tensor,
    labels: torch.Tensor,
    optimizer: torch.optim.Optimizer,
    beta: float,
    step: int,
    noise_generator: torch.Generator | None,
    coordinate: bool = True,
) -> tuple[CoordinationState | None, float]:
    """One supervised step, optionally with gradient coordination.

    With coordinate=False this is a plain supervised step; with balanced
    contributions (both coefficients 1) and noise disabled, the coordinated
    step is bit-identical to the plain one.
    """
    loss, _, image_logits, text_logits = supervised_loss(bundle, patches, tokens, labels)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    check_finite_gradients(bundle)

    state: CoordinationState | None = None
    if coordinate:
        c_image, c_text = modality_contributions(image_logits, text_logits, labels)
        ratio_image, ratio_text = optimization_ratios(c_image, c_text)
        coeff_image = coordination_coefficient(ratio_image, ratio_text, beta)
        coeff_text = coordination_coefficient(ratio_text, ratio_image, beta)
        if coeff_image < 1.0:
            modulate_gradients(bundle.modality_parameters("image"), coeff_image, noise_generator)
        elif coeff_text < 1.0:
            modulate_gradients(bundle.modality_parameters("text"), coeff_text, noise_generator)
        state = CoordinationState(
            step=step,
            contribution_image=c_image,
            contribution_text=c_text,
            ratio_image=ratio_image,
            ratio_text=ratio_text,
            coeff_image=coeff_image,
            coeff_text=coeff_text,
        )
    optimizer.step()
    return state, float(loss.detach())
