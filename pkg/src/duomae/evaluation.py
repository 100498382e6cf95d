"""Classification accuracy, pair-match accuracy, and retrieval Recall@K."""

from __future__ import annotations

import numpy as np
import torch

from .data import TaskDataset
from .errors import EmptyInputError
from .model import ModelBundle
from .tensors import collate_pairs, stream_rng


@torch.no_grad()
def predict_classification(
    bundle: ModelBundle, dataset: TaskDataset, batch_size: int, dtype: torch.dtype
) -> tuple[np.ndarray, np.ndarray]:
    """Argmax over joint-head logits for every sample, in dataset order."""
    if len(dataset) == 0:
        raise EmptyInputError("cannot evaluate an empty dataset")
    bundle.eval()
    preds, labels = [], []
    for start in range(0, len(dataset), batch_size):
        batch = collate_pairs(dataset.samples[start : start + batch_size], dtype)
        z_image, z_text = bundle.student(batch.patches, batch.tokens)
        joint, _, _ = bundle.task_heads(z_image, z_text)
        preds.append(joint.argmax(dim=-1).numpy())
        labels.append(batch.labels.numpy())
    return np.concatenate(preds), np.concatenate(labels)


def evaluate_classification(bundle: ModelBundle, dataset: TaskDataset, batch_size: int, dtype: torch.dtype) -> float:
    """Micro-average accuracy on the dataset."""
    preds, labels = predict_classification(bundle, dataset, batch_size, dtype)
    return float((preds == labels).mean())


@torch.no_grad()
def pair_score_matrix(bundle: ModelBundle, dataset: TaskDataset, dtype: torch.dtype, batch_size: int = 64) -> np.ndarray:
    """Match log-odds for every (image, text) combination in the pool.

    Entry [i, j] scores image i against text j through the fused pair
    representation and the linear match head.
    """
    if len(dataset) == 0:
        raise EmptyInputError("cannot score an empty retrieval pool")
    bundle.eval()
    n = len(dataset)
    patches = torch.tensor(np.stack([s.image.patches for s in dataset.samples]), dtype=dtype)
    tokens = torch.tensor(np.stack([s.text.tokens for s in dataset.samples]), dtype=torch.long)
    scores = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        image_row = patches[i].unsqueeze(0).expand(n, -1, -1)
        for start in range(0, n, batch_size):
            z_image, z_text = bundle.student(image_row[start : start + batch_size], tokens[start : start + batch_size])
            logits = bundle.match_head(z_image, z_text)
            scores[i, start : start + batch_size] = (logits[:, 1] - logits[:, 0]).numpy()
    return scores


def recall_at_k(scores: np.ndarray, ks: tuple[int, ...]) -> dict[str, dict[int, float]]:
    """Recall@K in both directions from a square score matrix.

    The true partner of query i is index i. Candidates are ranked by
    descending score; ties break toward the lower index (stable order).
    """
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise EmptyInputError(f"score matrix must be square, got {scores.shape}")
    n = scores.shape[0]
    out: dict[str, dict[int, float]] = {"image_to_text": {}, "text_to_image": {}}
    ranks_i2t = np.empty(n, dtype=np.int64)
    ranks_t2i = np.empty(n, dtype=np.int64)
    for i in range(n):
        order = np.argsort(-scores[i], kind="stable")
        ranks_i2t[i] = int(np.where(order == i)[0][0])
        order = np.argsort(-scores[:, i], kind="stable")
        ranks_t2i[i] = int(np.where(order == i)[0][0])
    for k in ks:
        out["image_to_text"][k] = float((ranks_i2t < k).mean())
        out["text_to_image"][k] = float((ranks_t2i < k).mean())
    return out


def evaluate_retrieval(
    bundle: ModelBundle, dataset: TaskDataset, ks: tuple[int, ...], dtype: torch.dtype
) -> dict[str, dict[int, float]]:
    """Recall@K over the identity-paired pool, scored by the match head."""
    return recall_at_k(pair_score_matrix(bundle, dataset, dtype), ks)


@torch.no_grad()
def evaluate_pair_matching(bundle: ModelBundle, dataset: TaskDataset, dtype: torch.dtype, seed: int = 0) -> float:
    """Accuracy on a balanced matched/swapped pool built from the dataset.

    Every sample appears once matched (label 1) and once with a swapped,
    different-caption text (label 0, when a partner exists).
    """
    if len(dataset) == 0:
        raise EmptyInputError("cannot evaluate an empty dataset")
    bundle.eval()
    rng = stream_rng(seed, "match", 0)
    samples = dataset.samples
    rows: list[tuple[int, int, int]] = [(i, i, 1) for i in range(len(samples))]
    for i, sample in enumerate(samples):
        candidates = [j for j in range(len(samples)) if samples[j].caption != sample.caption]
        if candidates:
            rows.append((i, int(rng.choice(candidates)), 0))
    patches = torch.tensor(np.stack([samples[i].image.patches for i, _, _ in rows]), dtype=dtype)
    tokens = torch.tensor(np.stack([samples[j].text.tokens for _, j, _ in rows]), dtype=torch.long)
    labels = np.array([y for _, _, y in rows])
    correct = 0
    for start in range(0, len(rows), 64):
        z_image, z_text = bundle.student(patches[start : start + 64], tokens[start : start + 64])
        logits = bundle.match_head(z_image, z_text)
        correct += int((logits.argmax(dim=-1).numpy() == labels[start : start + 64]).sum())
    return correct / len(rows)
