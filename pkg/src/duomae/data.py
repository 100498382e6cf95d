"""Synthetic paired image-text corpus: generation, tokenization, batching, disk IO.

Each sample is a small RGB canvas with one colored shape drawn in one cell of a
2x2 position grid, paired with a caption produced by a fixed template grammar:

    "a {color} {shape} in the {row} {col}"

The class label is the shape, so it is recoverable from the image alone (the
drawn silhouette) and from the caption alone (the shape word). Colors use an
equal-luminance palette so shape identity stays linearly decodable from
mean-pooled patches regardless of color. Distribution shift between corpora is
driven by the color prior and the pixel noise level.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import arrayio
from .errors import ConfigurationError, ContractError, EmptyInputError

SHAPES = ("circle", "square", "triangle", "cross")

# Each shape can be named by any of its synonyms in captions. A small labeled
# downstream set rarely covers all of them, while unlabeled pre-training pairs
# ground every synonym, so vocabulary coverage becomes part of what transfers.
SHAPE_SYNONYMS: dict[str, tuple[str, ...]] = {
    "circle": ("circle", "disk", "ring", "round", "dot", "oval", "orb", "blob", "coin", "moon"),
    "square": ("square", "box", "block", "tile", "slab", "panel", "cube", "brick", "card", "frame"),
    "triangle": ("triangle", "wedge", "arrow", "corner", "spike", "peak", "ramp", "fang", "horn", "sail"),
    "cross": ("cross", "plus", "star", "mark", "brace", "joint", "pin", "axis", "knot", "seam"),
}
SHAPE_OF_WORD: dict[str, str] = {word: shape for shape, words in SHAPE_SYNONYMS.items() for word in words}

# Every color sums to the same total intensity (1.2), so overall luminance does
# not leak shape-independent information into mean-pooled features.
COLORS: dict[str, tuple[float, float, float]] = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.90, 0.15),
    "blue": (0.15, 0.15, 0.90),
    "yellow": (0.60, 0.60, 0.00),
    "cyan": (0.00, 0.60, 0.60),
    "magenta": (0.60, 0.00, 0.60),
}

ROWS = ("top", "bottom")
COLS = ("left", "right")
BACKGROUND = 0.10

BOS, EOS, MASK_TOKEN, UNK = "<s>", "</s>", "<mask>", "<unk>"


class Vocabulary:
    """Closed token vocabulary with start/boundary/mask/unknown specials."""

    def __init__(self, words: list[str]):
        self.tokens = [BOS, EOS, MASK_TOKEN, UNK] + sorted(set(words))
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.mask_id = self.index[MASK_TOKEN]
        self.unk_id = self.index[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.bos_id, self.eos_id))


def grammar_vocabulary() -> Vocabulary:
    words = ["a", "in", "the"] + list(SHAPE_OF_WORD) + list(COLORS) + list(ROWS) + list(COLS)
    return Vocabulary(words)


@dataclass
class ImageSample:
    """An image as a sequence of flattened patch vectors, values in [0, 1]."""

    patches: np.ndarray  # (num_patches, channels * patch * patch), float64
    height: int
    width: int
    channels: int
    patch_size: int

    def __post_init__(self) -> None:
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigurationError("image dimensions must be divisible by patch size")
        expected = (self.height // self.patch_size) * (self.width // self.patch_size)
        if self.patches.shape != (expected, self.channels * self.patch_size**2):
            raise ContractError(
                f"patch array shape {self.patches.shape} does not match "
                f"{expected} patches of dim {self.channels * self.patch_size ** 2}"
            )
        if self.patches.size and (self.patches.min() < 0.0 or self.patches.max() > 1.0):
            raise ContractError("pixel values must lie in [0, 1]")

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]


@dataclass
class TextSample:
    """Token-id sequence bookended by start and boundary tokens."""

    tokens: np.ndarray  # (length,), int64
    vocab_size: int

    def __post_init__(self) -> None:
        if self.tokens.ndim != 1 or len(self.tokens) < 2:
            raise ContractError("token sequence needs at least the two bookend tokens")
        if self.tokens.max() >= self.vocab_size or self.tokens.min() < 0:
            raise ContractError("token id out of vocabulary range")

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class PairedSample:
    sample_id: int
    image: ImageSample
    text: TextSample
    caption: str
    label: int


@dataclass
class TaskDataset:
    kind: str  # pretrain-pairs | classification | retrieval
    split: str  # train | val | test
    samples: list[PairedSample]
    label_names: tuple[str, ...]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class SyntheticSpec:
    """Knobs controlling one generated corpus.

    label_rule "shape" gives 4 classes; "shape_color" crosses shape with color
    for 24 classes. Either way the label is recoverable from the image alone
    and from the caption alone.
    """

    n_samples: int = 256
    seed: int = 7
    image_size: int = 16
    patch_size: int = 4
    channels: int = 3
    color_weights: dict[str, float] = field(default_factory=dict)  # empty = uniform
    noise_level: float = 0.02
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    label_rule: str = "shape"
    # rendering jitter; defaults draw every shape at full cell size and brightness
    min_shape_size: int = 0  # 0 = full cell
    max_shape_size: int = 0
    brightness_jitter: float = 0.0

    def label_names(self) -> tuple[str, ...]:
        if self.label_rule == "shape":
            return SHAPES
        if self.label_rule == "shape_color":
            return tuple(f"{shape}-{color}" for shape in SHAPES for color in COLORS)
        raise ConfigurationError(f"unknown label_rule {self.label_rule!r}")

    def label_for(self, shape: str, color: str) -> int:
        if self.label_rule == "shape":
            return SHAPES.index(shape)
        return SHAPES.index(shape) * len(COLORS) + list(COLORS).index(color)

    def resolved_color_weights(self) -> np.ndarray:
        if not self.color_weights:
            return np.full(len(COLORS), 1.0 / len(COLORS))
        weights = np.array([self.color_weights.get(name, 0.0) for name in COLORS], dtype=np.float64)
        if weights.sum() <= 0:
            raise ConfigurationError("color_weights must have positive total mass")
        return weights / weights.sum()


@dataclass
class Corpus:
    train: TaskDataset
    val: TaskDataset
    test: TaskDataset
    vocab: Vocabulary
    spec: SyntheticSpec

    def split(self, name: str) -> TaskDataset:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigurationError(f"unknown split {name!r}") from None


def _shape_mask(shape: str, size: int) -> np.ndarray:
    """Boolean silhouette of one shape on a size x size cell."""
    yy, xx = np.mgrid[0:size, 0:size]
    center = (size - 1) / 2.0
    if shape == "circle":
        return (yy - center) ** 2 + (xx - center) ** 2 <= (size / 2 - 0.5) ** 2
    if shape == "square":
        return (yy >= 1) & (yy < size - 1) & (xx >= 1) & (xx < size - 1)
    if shape == "triangle":
        return yy >= xx
    if shape == "cross":
        mid_lo, mid_hi = size // 2 - 1, size // 2 + 1
        return ((yy >= mid_lo) & (yy < mid_hi)) | ((xx >= mid_lo) & (xx < mid_hi))
    raise ConfigurationError(f"unknown shape {shape!r}")


def render_scene(
    shape: str,
    color: str,
    row: str,
    col: str,
    spec: SyntheticSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Render one scene to an (H, W, C) float64 canvas in [0, 1].

    With jitter enabled the shape's size, placement inside its cell, and
    brightness vary per sample, so recognizing it requires more than a fixed
    pixel template.
    """
    size = spec.image_size
    canvas = np.full((size, size, spec.channels), BACKGROUND, dtype=np.float64)
    cell = size // 2
    r0 = 0 if row == "top" else cell
    c0 = 0 if col == "left" else cell
    if spec.min_shape_size and spec.max_shape_size:
        extent = int(rng.integers(spec.min_shape_size, spec.max_shape_size + 1))
        off_r = int(rng.integers(0, cell - extent + 1))
        off_c = int(rng.integers(0, cell - extent + 1))
    else:
        extent, off_r, off_c = cell, 0, 0
    mask = _shape_mask(shape, extent)
    rgb = np.array(COLORS[color][: spec.channels], dtype=np.float64)
    if spec.brightness_jitter > 0:
        rgb = rgb * (1.0 + spec.brightness_jitter * (2.0 * rng.random() - 1.0))
    canvas[r0 + off_r : r0 + off_r + extent, c0 + off_c : c0 + off_c + extent][mask] = np.clip(rgb, 0.0, 1.0)
    if spec.noise_level > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_level, canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


def image_to_patches(canvas: np.ndarray, patch_size: int) -> np.ndarray:
    """Flatten an (H, W, C) canvas into (num_patches, C*p*p) row-major patches."""
    h, w, c = canvas.shape
    gh, gw = h // patch_size, w // patch_size
    blocks = canvas.reshape(gh, patch_size, gw, patch_size, c)
    blocks = blocks.transpose(0, 2, 4, 1, 3)  # (gh, gw, c, p, p)
    return blocks.reshape(gh * gw, c * patch_size * patch_size)


def patches_to_image(patches: np.ndarray, height: int, width: int, channels: int, patch_size: int) -> np.ndarray:
    gh, gw = height // patch_size, width // patch_size
    blocks = patches.reshape(gh, gw, channels, patch_size, patch_size)
    return blocks.transpose(0, 3, 1, 4, 2).reshape(height, width, channels)


def make_caption(shape_word: str, color: str, row: str, col: str) -> str:
    return f"a {color} {shape_word} in the {row} {col}"


def tokenize(caption: str, vocab: Vocabulary) -> TextSample:
    """Whitespace tokenization against the closed vocabulary, with bookends."""
    ids = [vocab.bos_id]
    for word in caption.split():
        ids.append(vocab.index.get(word, vocab.unk_id))
    ids.append(vocab.eos_id)
    return TextSample(tokens=np.array(ids, dtype=np.int64), vocab_size=len(vocab))


def detokenize(sample: TextSample, vocab: Vocabulary) -> str:
    words = [vocab.tokens[t] for t in sample.tokens[1:-1]]
    return " ".join(words)


def generate_corpus(spec: SyntheticSpec, kind: str = "pretrain-pairs") -> Corpus:
    """Deterministically generate a corpus of paired samples and split it 80/10/10
    (or per the spec's fractions)."""
    if spec.n_samples <= 0:
        raise EmptyInputError("corpus needs at least one sample")
    vocab = grammar_vocabulary()
    rng = np.random.default_rng(spec.seed)
    color_names = list(COLORS)
    weights = spec.resolved_color_weights()

    samples: list[PairedSample] = []
    for idx in range(spec.n_samples):
        shape = SHAPES[rng.integers(len(SHAPES))]
        color = color_names[rng.choice(len(color_names), p=weights)]
        row = ROWS[rng.integers(len(ROWS))]
        col = COLS[rng.integers(len(COLS))]
        shape_word = SHAPE_SYNONYMS[shape][rng.integers(len(SHAPE_SYNONYMS[shape]))]
        canvas = render_scene(shape, color, row, col, spec, rng)
        image = ImageSample(
            patches=image_to_patches(canvas, spec.patch_size),
            height=spec.image_size,
            width=spec.image_size,
            channels=spec.channels,
            patch_size=spec.patch_size,
        )
        caption = make_caption(shape_word, color, row, col)
        samples.append(
            PairedSample(
                sample_id=idx,
                image=image,
                text=tokenize(caption, vocab),
                caption=caption,
                label=spec.label_for(shape, color),
            )
        )

    n_train = int(spec.train_fraction * spec.n_samples)
    n_val = int(spec.val_fraction * spec.n_samples)
    splits = {
        "train": samples[:n_train],
        "val": samples[n_train : n_train + n_val],
        "test": samples[n_train + n_val :],
    }
    datasets = {
        name: TaskDataset(kind=kind, split=name, samples=part, label_names=spec.label_names(), vocab=vocab)
        for name, part in splits.items()
    }
    return Corpus(train=datasets["train"], val=datasets["val"], test=datasets["test"], vocab=vocab, spec=spec)


def batch_iterator(dataset: TaskDataset, batch_size: int, seed: int, epoch: int = 0):
    """Yield batches in a seeded order; the final partial batch is included."""
    if batch_size <= 0:
        raise ConfigurationError("batch_size must be positive")
    order = epoch_permutation(len(dataset), seed, epoch)
    for start in range(0, len(order), batch_size):
        yield [dataset.samples[i] for i in order[start : start + batch_size]]


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """Permutation for one epoch, a pure function of (seed, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,)))
    return rng.permutation(n)


# --- disk format -----------------------------------------------------------
#
# manifest.jsonl : header line with corpus-level metadata, then one line per
#                  sample (id, caption, label, split).
# patches_<split>.bin : named-array container with the stacked patch arrays.


def save_corpus(corpus: Corpus, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    header = {
        "image_size": corpus.spec.image_size,
        "patch_size": corpus.spec.patch_size,
        "channels": corpus.spec.channels,
        "label_names": list(corpus.spec.label_names()),
        "label_rule": corpus.spec.label_rule,
        "vocab": corpus.vocab.tokens,
        "kind": corpus.train.kind,
        "seed": corpus.spec.seed,
        "noise_level": corpus.spec.noise_level,
        "color_weights": {k: v for k, v in corpus.spec.color_weights.items()},
        "n_samples": corpus.spec.n_samples,
        "train_fraction": corpus.spec.train_fraction,
        "val_fraction": corpus.spec.val_fraction,
        "min_shape_size": corpus.spec.min_shape_size,
        "max_shape_size": corpus.spec.max_shape_size,
        "brightness_jitter": corpus.spec.brightness_jitter,
    }
    lines = [json.dumps({"header": header})]
    for split_name in ("train", "val", "test"):
        split = corpus.split(split_name)
        for sample in split.samples:
            lines.append(
                json.dumps(
                    {
                        "id": sample.sample_id,
                        "caption": sample.caption,
                        "label": sample.label,
                        "split": split_name,
                    }
                )
            )
        stacked = (
            np.stack([s.image.patches for s in split.samples])
            if split.samples
            else np.zeros((0, 0, 0), dtype=np.float64)
        )
        arrayio.write_arrays(os.path.join(directory, f"patches_{split_name}.bin"), {"patches": stacked})
    with open(os.path.join(directory, "manifest.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_corpus(directory: str) -> Corpus:
    manifest_path = os.path.join(directory, "manifest.jsonl")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "header" not in lines[0]:
        raise ContractError(f"{manifest_path} is missing its header line")
    header = lines[0]["header"]
    vocab = Vocabulary([t for t in header["vocab"] if t not in (BOS, EOS, MASK_TOKEN, UNK)])
    if vocab.tokens != header["vocab"]:
        raise ContractError("stored vocabulary does not round-trip")
    spec = SyntheticSpec(
        n_samples=header["n_samples"],
        seed=header["seed"],
        image_size=header["image_size"],
        patch_size=header["patch_size"],
        channels=header["channels"],
        color_weights=dict(header["color_weights"]),
        noise_level=header["noise_level"],
        train_fraction=header["train_fraction"],
        val_fraction=header["val_fraction"],
        label_rule=header.get("label_rule", "shape"),
        min_shape_size=header.get("min_shape_size", 0),
        max_shape_size=header.get("max_shape_size", 0),
        brightness_jitter=header.get("brightness_jitter", 0.0),
    )
    rows_by_split: dict[str, list[dict]] = {"train": [], "val": [], "test": []}
    for row in lines[1:]:
        rows_by_split[row["split"]].append(row)

    datasets = {}
    for split_name, rows in rows_by_split.items():
        patch_file = arrayio.read_arrays(os.path.join(directory, f"patches_{split_name}.bin"))["patches"]
        samples = []
        for i, row in enumerate(rows):
            image = ImageSample(
                patches=patch_file[i],
                height=header["image_size"],
                width=header["image_size"],
                channels=header["channels"],
                patch_size=header["patch_size"],
            )
            samples.append(
                PairedSample(
                    sample_id=row["id"],
                    image=image,
                    text=tokenize(row["caption"], vocab),
                    caption=row["caption"],
                    label=row["label"],
                )
            )
        datasets[split_name] = TaskDataset(
            kind=header["kind"], split=split_name, samples=samples, label_names=tuple(header["label_names"]), vocab=vocab
        )
    return Corpus(train=datasets["train"], val=datasets["val"], test=datasets["test"], vocab=vocab, spec=spec)


def downstream_spec_from(base: SyntheticSpec, n_samples: int, skew: float, noise_level: float,
                         train_fraction: float, val_fraction: float,
                         label_rule: str = "shape_color") -> SyntheticSpec:
    """Shifted corpus spec: mass `skew` moves onto the secondary colors."""
    secondary = ("yellow", "cyan", "magenta")
    weights = {
        name: (skew / len(secondary) if name in secondary else (1.0 - skew) / 3.0) for name in COLORS
    }
    return SyntheticSpec(
        n_samples=n_samples,
        seed=base.seed + 1,
        image_size=base.image_size,
        patch_size=base.patch_size,
        channels=base.channels,
        color_weights=weights,
        noise_level=noise_level,
        train_fraction=train_fraction,
        val_fraction=val_fraction,
        label_rule=label_rule,
        min_shape_size=base.min_shape_size,
        max_shape_size=base.max_shape_size,
        brightness_jitter=base.brightness_jitter,
    )
