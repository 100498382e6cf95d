"""Collation of paired samples into torch tensors, plus derived RNG streams.

Per-step randomness (masking choices, pair-match negatives, gradient noise)
comes from generators derived as pure functions of (base seed, purpose, step),
so a resumed run replays the exact stream of the uninterrupted one without
carrying mutable RNG state in checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import PairedSample, Vocabulary
from .errors import ContractError
from .masking import mask_image, mask_text

_PURPOSES = {"mask_image": 1, "mask_text": 2, "match": 3, "noise": 4}


def stream_rng(seed: int, purpose: str, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_PURPOSES[purpose], step)))


def noise_generator(seed: int, step: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed((seed * 1_000_003 + _PURPOSES["noise"] * 7919 + step) % (2**63 - 1))
    return gen


@dataclass
class PairBatch:
    patches: torch.Tensor  # (B, n, patch_dim)
    tokens: torch.Tensor  # (B, L)
    labels: torch.Tensor  # (B,)


@dataclass
class MaskedBatch:
    patches: torch.Tensor  # masked positions zeroed
    image_masked: torch.Tensor  # (B, n) bool
    image_targets: torch.Tensor  # (B, m, patch_dim)
    tokens: torch.Tensor  # mask id substituted
    text_masked: torch.Tensor  # (B, L) bool
    token_targets: torch.Tensor  # (B, m_t)


def collate_pairs(samples: list[PairedSample], dtype: torch.dtype) -> PairBatch:
    if not samples:
        raise ContractError("cannot collate an empty batch")
    lengths = {s.text.length for s in samples}
    if len(lengths) != 1:
        raise ContractError("all text samples in a batch must share one length")
    patches = torch.tensor(np.stack([s.image.patches for s in samples]), dtype=dtype)
    tokens = torch.tensor(np.stack([s.text.tokens for s in samples]), dtype=torch.long)
    labels = torch.tensor([s.label for s in samples], dtype=torch.long)
    return PairBatch(patches=patches, tokens=tokens, labels=labels)


def collate_masked(
    samples: list[PairedSample],
    vocab: Vocabulary,
    image_ratio: float,
    text_ratio: float,
    seed: int,
    step: int,
    dtype: torch.dtype,
) -> MaskedBatch:
    """Mask every sample with the step's derived generators and stack tensors."""
    rng_image = stream_rng(seed, "mask_image", step)
    rng_text = stream_rng(seed, "mask_text", step)
    patch_rows, image_bools, image_targets = [], [], []
    token_rows, text_bools, token_targets = [], [], []
    for sample in samples:
        masked_image, plan_i = mask_image(sample.image, image_ratio, rng_image)
        bool_i = np.zeros(sample.image.num_patches, dtype=bool)
        bool_i[plan_i.masked_indices] = True
        patch_rows.append(masked_image.patches)
        image_bools.append(bool_i)
        image_targets.append(masked_image.targets)

        masked_text, plan_t = mask_text(sample.text, text_ratio, vocab, rng_text)
        bool_t = np.zeros(sample.text.length, dtype=bool)
        bool_t[plan_t.masked_indices] = True
        token_rows.append(masked_text.tokens)
        text_bools.append(bool_t)
        token_targets.append(masked_text.targets)
    return MaskedBatch(
        patches=torch.tensor(np.stack(patch_rows), dtype=dtype),
        image_masked=torch.tensor(np.stack(image_bools)),
        image_targets=torch.tensor(np.stack(image_targets), dtype=dtype),
        tokens=torch.tensor(np.stack(token_rows), dtype=torch.long),
        text_masked=torch.tensor(np.stack(text_bools)),
        token_targets=torch.tensor(np.stack(token_targets), dtype=torch.long),
    )


def build_match_batch(
    samples: list[PairedSample], seed: int, step: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pair-matching inputs: each text kept (label 1) or swapped for another
    in-batch text with a different caption (label 0), with probability 1/2.

    A swap partner must carry a different caption so mismatch labels stay
    truthful when the small scene space repeats captions.
    """
    rng = stream_rng(seed, "match", step)
    tokens, labels = [], []
    for i, sample in enumerate(samples):
        partner = sample
        label = 1
        if len(samples) > 1 and rng.random() < 0.5:
            candidates = [j for j in range(len(samples)) if samples[j].caption != sample.caption]
            if candidates:
                partner = samples[int(rng.choice(candidates))]
                label = 0
        tokens.append(partner.text.tokens)
        labels.append(label)
    return (
        torch.tensor(np.stack(tokens), dtype=torch.long),
        torch.tensor(labels, dtype=torch.long),
    )
