"""Random masking of image patches and text tokens.

Masked counts are always floor(ratio * maskable_count). Image patches are
zeroed in place (the encoder substitutes its learned mask embedding at those
positions); text tokens are replaced by the dedicated mask-token id. The
original values are kept on the masked sample as reconstruction targets.

All functions are pure given an explicit numpy Generator, so concurrent calls
with independent generators are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ImageSample, TextSample, Vocabulary
from .errors import ConfigurationError, EmptyInputError


@dataclass
class MaskPlan:
    """Which positions were masked for one sample."""

    masked_indices: np.ndarray  # (m,), int64, sorted
    visible_indices: np.ndarray  # (k,), int64, sorted
    mask_ratio: float
    maskable_count: int

    def __post_init__(self) -> None:
        assert len(np.intersect1d(self.masked_indices, self.visible_indices)) == 0
        assert len(self.masked_indices) + len(self.visible_indices) == self.maskable_count


@dataclass
class MaskedImage:
    patches: np.ndarray  # masked positions zeroed
    plan: MaskPlan
    targets: np.ndarray  # (m, patch_dim) original pixels at masked positions


@dataclass
class MaskedText:
    tokens: np.ndarray  # masked positions replaced by mask id
    plan: MaskPlan
    targets: np.ndarray  # (m,) original ids at masked positions


def _check_ratio(ratio: float) -> None:
    if not (0.0 < ratio < 1.0):
        raise ConfigurationError(f"mask ratio must lie in (0, 1), got {ratio!r}")


def _draw_plan(maskable: np.ndarray, ratio: float, rng: np.random.Generator) -> MaskPlan:
    count = math.floor(ratio * len(maskable))
    chosen = rng.permutation(len(maskable))[:count]
    masked = np.sort(maskable[chosen])
    visible = np.sort(np.setdiff1d(maskable, masked, assume_unique=True))
    return MaskPlan(masked_indices=masked, visible_indices=visible, mask_ratio=ratio, maskable_count=len(maskable))


def mask_image(image: ImageSample, ratio: float, rng: np.random.Generator) -> tuple[MaskedImage, MaskPlan]:
    _check_ratio(ratio)
    if image.num_patches == 0:
        raise EmptyInputError("image has no patches to mask")
    plan = _draw_plan(np.arange(image.num_patches, dtype=np.int64), ratio, rng)
    patches = image.patches.copy()
    targets = patches[plan.masked_indices].copy()
    patches[plan.masked_indices] = 0.0
    return MaskedImage(patches=patches, plan=plan, targets=targets), plan


def mask_text(text: TextSample, ratio: float, vocab: Vocabulary, rng: np.random.Generator) -> tuple[MaskedText, MaskPlan]:
    _check_ratio(ratio)
    maskable = np.array(
        [i for i, tok in enumerate(text.tokens) if int(tok) not in vocab.special_ids],
        dtype=np.int64,
    )
    if len(maskable) == 0:
        raise EmptyInputError("text has no maskable tokens")
    plan = _draw_plan(maskable, ratio, rng)
    tokens = text.tokens.copy()
    targets = tokens[plan.masked_indices].copy()
    tokens[plan.masked_indices] = vocab.mask_id
    return MaskedText(tokens=tokens, plan=plan, targets=targets), plan


def unmask_image(masked: MaskedImage) -> np.ndarray:
    """Restore the original patch array from a masked image and its targets."""
    patches = masked.patches.copy()
    patches[masked.plan.masked_indices] = masked.targets
    return patches


def unmask_text(masked: MaskedText) -> np.ndarray:
    tokens = masked.tokens.copy()
    tokens[masked.plan.masked_indices] = masked.targets
    return tokens
