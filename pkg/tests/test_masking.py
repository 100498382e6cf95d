import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duomae.data import ImageSample, TextSample, grammar_vocabulary
from duomae.errors import ConfigurationError, EmptyInputError
from duomae.masking import mask_image, mask_text, unmask_image, unmask_text


def make_image(num_patches: int, patch_size: int = 4, channels: int = 3) -> ImageSample:
    # lay patches out on a 1 x n grid so any count is a valid image
    rng = np.random.default_rng(7)
    patches = rng.random((num_patches, channels * patch_size**2))
    return ImageSample(
        patches=patches,
        height=patch_size,
        width=patch_size * num_patches,
        channels=channels,
        patch_size=patch_size,
    )


def make_text(n_words: int) -> TextSample:
    vocab = grammar_vocabulary()
    word_ids = [i for i in range(len(vocab)) if i not in vocab.special_ids and i != vocab.mask_id][:n_words]
    tokens = np.array([vocab.bos_id] + word_ids + [vocab.eos_id], dtype=np.int64)
    return TextSample(tokens=tokens, vocab_size=len(vocab))


def test_image_16_patches_075_masks_12():
    masked, plan = mask_image(make_image(16), 0.75, np.random.default_rng(0))
    assert len(plan.masked_indices) == 12
    assert len(plan.visible_indices) == 4


def test_image_floor_rule_on_non_integral_count():
    # floor(0.75 * 10) = 7, confirmed by counting the plan's index sets
    _, plan = mask_image(make_image(10), 0.75, np.random.default_rng(0))
    assert len(plan.masked_indices) == 7
    assert len(plan.visible_indices) == 3
    img = make_image(16)
    for ratio, expected in ((0.5, 8), (0.33, 5), (0.9, 14)):
        _, plan = mask_image(img, ratio, np.random.default_rng(0))
        assert len(plan.masked_indices) == expected


def test_image_same_seed_same_plan():
    img = make_image(16)
    _, plan_a = mask_image(img, 0.75, np.random.default_rng(42))
    _, plan_b = mask_image(img, 0.75, np.random.default_rng(42))
    assert np.array_equal(plan_a.masked_indices, plan_b.masked_indices)
    assert np.array_equal(plan_a.visible_indices, plan_b.visible_indices)


def test_image_targets_and_zeroing():
    img = make_image(16)
    masked, plan = mask_image(img, 0.75, np.random.default_rng(1))
    assert np.all(masked.patches[plan.masked_indices] == 0.0)
    assert np.array_equal(masked.targets, img.patches[plan.masked_indices])
    assert np.array_equal(masked.patches[plan.visible_indices], img.patches[plan.visible_indices])


def test_text_20_maskable_015_masks_3():
    text = make_text(20)
    masked, plan = mask_text(text, 0.15, grammar_vocabulary(), np.random.default_rng(0))
    assert len(plan.masked_indices) == 3


def test_text_specials_never_masked():
    vocab = grammar_vocabulary()
    text = make_text(10)
    for seed in range(20):
        _, plan = mask_text(text, 0.9, vocab, np.random.default_rng(seed))
        assert 0 not in plan.masked_indices
        assert len(text.tokens) - 1 not in plan.masked_indices


def test_text_same_seed_same_positions():
    vocab = grammar_vocabulary()
    text = make_text(12)
    _, plan_a = mask_text(text, 0.5, vocab, np.random.default_rng(9))
    _, plan_b = mask_text(text, 0.5, vocab, np.random.default_rng(9))
    assert np.array_equal(plan_a.masked_indices, plan_b.masked_indices)


def test_unmasking_restores_bit_exact():
    img = make_image(16)
    masked, _ = mask_image(img, 0.75, np.random.default_rng(3))
    assert np.array_equal(unmask_image(masked), img.patches)

    vocab = grammar_vocabulary()
    text = make_text(9)
    masked_text, _ = mask_text(text, 0.3, vocab, np.random.default_rng(3))
    assert masked_text.tokens[masked_text.plan.masked_indices[0]] == vocab.mask_id
    assert np.array_equal(unmask_text(masked_text), text.tokens)


@given(
    num_patches=st.sampled_from([1, 4, 9, 16, 25]),
    ratio=st.floats(min_value=0.01, max_value=0.99),
    seed=st.integers(min_value=0, max_value=2**31),
)
@settings(max_examples=60, deadline=None)
def test_mask_count_disjointness_coverage(num_patches, ratio, seed):
    masked, plan = mask_image(make_image(num_patches), ratio, np.random.default_rng(seed))
    assert len(plan.masked_indices) == int(np.floor(ratio * num_patches))
    combined = np.concatenate([plan.masked_indices, plan.visible_indices])
    assert np.array_equal(np.sort(combined), np.arange(num_patches))


def test_ratio_out_of_range_is_config_error():
    img = make_image(16)
    for ratio in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigurationError):
            mask_image(img, ratio, np.random.default_rng(0))


def test_empty_inputs_rejected():
    vocab = grammar_vocabulary()
    bookends_only = TextSample(tokens=np.array([vocab.bos_id, vocab.eos_id]), vocab_size=len(vocab))
    with pytest.raises(EmptyInputError):
        mask_text(bookends_only, 0.15, vocab, np.random.default_rng(0))
