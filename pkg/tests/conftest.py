import numpy as np
import pytest
import torch

from duomae.config import RunConfig
from duomae.data import SyntheticSpec, generate_corpus
from duomae.model import ModelConfig, build_bundle

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SyntheticSpec(n_samples=80, seed=11))


@pytest.fixture(scope="session")
def vocab(small_corpus):
    return small_corpus.vocab


def tiny_model_config(vocab_size: int, **overrides) -> ModelConfig:
    """Sub-10k-parameter configuration used by gradient checks."""
    values = dict(
        embed_dim=8,
        latent_dim=4,
        encoder_layers=1,
        fusion_layers=1,
        decoder_layers=1,
        num_heads=2,
        mlp_ratio=2.0,
        dropout=0.0,
        num_patches=16,
        patch_dim=48,
        vocab_size=vocab_size,
        max_text_len=16,
        num_classes=4,
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture()
def tiny_bundle(vocab):
    return build_bundle(tiny_model_config(len(vocab)), seed=3, dtype=torch.float64)


@pytest.fixture()
def fast_config():
    """A config small enough for loop-level tests to run in seconds."""
    return RunConfig(
        pretrain_steps=6,
        calib_steps=4,
        finetune_steps=6,
        batch_size=8,
        pretrain_samples=48,
        downstream_samples=60,
        downstream_train_fraction=0.4,
        downstream_val_fraction=0.2,
        eval_every=0,
        precision="float64",
        num_classes=4,
        downstream_label_rule="shape",
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(123)
