import json

import numpy as np
import pytest

from duomae.data import (
    COLORS,
    SHAPE_OF_WORD,
    SHAPES,
    SyntheticSpec,
    batch_iterator,
    detokenize,
    downstream_spec_from,
    generate_corpus,
    grammar_vocabulary,
    load_corpus,
    save_corpus,
    tokenize,
)
from duomae.errors import ConfigurationError


def linear_probe_accuracy(features: np.ndarray, labels: np.ndarray, n_train: int, n_classes: int) -> float:
    """Brute-force least-squares one-vs-rest probe, fit on the first n_train rows."""
    design = np.hstack([features, np.ones((len(features), 1))])
    weights, *_ = np.linalg.lstsq(design[:n_train], np.eye(n_classes)[labels[:n_train]], rcond=None)
    preds = (design[n_train:] @ weights).argmax(axis=1)
    return float((preds == labels[n_train:]).mean())


def test_same_spec_and_seed_identical_corpora():
    spec = SyntheticSpec(n_samples=50, seed=5)
    a, b = generate_corpus(spec), generate_corpus(spec)
    for ds_a, ds_b in ((a.train, b.train), (a.val, b.val), (a.test, b.test)):
        assert len(ds_a) == len(ds_b)
        for s_a, s_b in zip(ds_a.samples, ds_b.samples):
            assert s_a.caption == s_b.caption
            assert s_a.label == s_b.label
            assert np.array_equal(s_a.image.patches, s_b.image.patches)


def test_split_sizes_80_10_10():
    corpus = generate_corpus(SyntheticSpec(n_samples=100, seed=1))
    assert (len(corpus.train), len(corpus.val), len(corpus.test)) == (80, 10, 10)


def test_color_prior_shift_moves_pixel_distribution():
    base = SyntheticSpec(n_samples=200, seed=3)
    shifted_spec = downstream_spec_from(base, 200, skew=0.85, noise_level=0.02,
                                        train_fraction=0.8, val_fraction=0.1)
    base_corpus = generate_corpus(base)
    shifted = generate_corpus(shifted_spec)

    def channel_means(corpus):
        return np.stack([s.image.patches.mean(axis=0) for s in corpus.train.samples]).mean(axis=0)

    base_mean, shifted_mean = channel_means(base_corpus), channel_means(shifted)
    pooled_std = np.stack([s.image.patches.mean(axis=0) for s in base_corpus.train.samples]).std(axis=0).mean()
    gap = np.abs(base_mean - shifted_mean).max()
    # two-sample separation: the largest per-feature mean gap dwarfs sampling noise
    assert gap > 3 * pooled_std / np.sqrt(len(base_corpus.train))


def test_tokenize_round_trip_and_unk():
    vocab = grammar_vocabulary()
    sample = tokenize("a red circle in the top left", vocab)
    assert sample.tokens[0] == vocab.bos_id and sample.tokens[-1] == vocab.eos_id
    assert detokenize(sample, vocab) == "a red circle in the top left"
    assert tokenize("", vocab).tokens.tolist() == [vocab.bos_id, vocab.eos_id]
    unk = tokenize("a purple zeppelin", vocab)
    assert unk.tokens[2] == vocab.unk_id and unk.tokens[3] == vocab.unk_id


def test_vocabulary_is_small_and_closed():
    vocab = grammar_vocabulary()
    assert len(vocab) < 64
    assert len(set(vocab.tokens)) == len(vocab)


def test_batch_iterator_determinism_and_coverage(small_corpus):
    batches_a = list(batch_iterator(small_corpus.train, 7, seed=2, epoch=0))
    batches_b = list(batch_iterator(small_corpus.train, 7, seed=2, epoch=0))
    ids_a = [s.sample_id for batch in batches_a for s in batch]
    ids_b = [s.sample_id for batch in batches_b for s in batch]
    assert ids_a == ids_b
    assert sorted(ids_a) == sorted(s.sample_id for s in small_corpus.train.samples)
    assert len(batches_a[-1]) == len(small_corpus.train) % 7 or len(batches_a[-1]) == 7
    shuffled = [s.sample_id for batch in batch_iterator(small_corpus.train, 7, seed=2, epoch=1) for s in batch]
    assert shuffled != ids_a


def test_modality_signal_probe_default_spec():
    corpus = generate_corpus(SyntheticSpec(n_samples=400, seed=7))
    samples = corpus.train.samples + corpus.val.samples + corpus.test.samples
    labels = np.array([s.label for s in samples])
    vocab = corpus.vocab

    bow = np.zeros((len(samples), len(vocab)))
    for i, sample in enumerate(samples):
        for token in sample.text.tokens:
            bow[i, token] += 1
    assert linear_probe_accuracy(bow, labels, n_train=320, n_classes=len(SHAPES)) > 0.9

    mean_patches = np.stack([s.image.patches.mean(axis=0) for s in samples])
    assert linear_probe_accuracy(mean_patches, labels, n_train=320, n_classes=len(SHAPES)) > 0.9


def test_label_recoverable_from_caption_alone():
    corpus = generate_corpus(SyntheticSpec(n_samples=60, seed=13, label_rule="shape_color"))
    for dataset in (corpus.train, corpus.val, corpus.test):
        for sample in dataset.samples:
            words = sample.caption.split()
            shape = SHAPE_OF_WORD[words[2]]
            expected = SHAPES.index(shape) * len(COLORS) + list(COLORS).index(words[1])
            assert sample.label == expected


def test_corpus_disk_round_trip(tmp_path):
    corpus = generate_corpus(SyntheticSpec(n_samples=40, seed=9, noise_level=0.05,
                                           min_shape_size=5, max_shape_size=8, brightness_jitter=0.2))
    directory = str(tmp_path / "corpus")
    save_corpus(corpus, directory)
    loaded = load_corpus(directory)
    for split in ("train", "val", "test"):
        original, restored = corpus.split(split), loaded.split(split)
        assert len(original) == len(restored)
        for s_orig, s_load in zip(original.samples, restored.samples):
            assert np.array_equal(s_orig.image.patches, s_load.image.patches)
            assert np.array_equal(s_orig.text.tokens, s_load.text.tokens)
            assert (s_orig.caption, s_orig.label) == (s_load.caption, s_load.label)
    assert loaded.vocab.tokens == corpus.vocab.tokens


def test_manifest_is_line_delimited_json(tmp_path):
    corpus = generate_corpus(SyntheticSpec(n_samples=20, seed=2))
    directory = str(tmp_path / "c")
    save_corpus(corpus, directory)
    with open(f"{directory}/manifest.jsonl", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh]
    assert "header" in lines[0]
    assert {"id", "caption", "label", "split"} <= set(lines[1])
    assert len(lines) == 21


def test_bad_label_rule_rejected():
    with pytest.raises(ConfigurationError):
        generate_corpus(SyntheticSpec(n_samples=8, seed=0, label_rule="texture"))
