"""Toy-scale laboratory for training-data bias effects.

A linear regressor over hashed character n-grams stands in for a
neural metric: big enough to learn that corrupted hypotheses score
low, small enough to train in seconds. Two experiments show how its
scores drift when the training data is skewed — by filtering one
translation direction's score distribution, and by year tags attached
to the training examples.
"""

from __future__ import annotations

import dataclasses
import math
import random
import string
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .evalset import Direction

# Experiment knobs, not claims. gold_da = clamp(mean + DA_SLOPE*(q-1/2) + noise),
# and a quality-q hypothesis keeps its reference chars with prob 1 - (1-q)*CORRUPTION_SCALE.
CORRUPTION_SCALE = 0.5
DA_SLOPE = 0.3
DA_NOISE_SIGMA = 0.05
DIM = 2**18  # power of two
NGRAM_ORDERS = (1, 2, 3)
ALPHABET_SIZE = 10
REF_LEN_RANGE = (15, 28)

# Per-direction mean human scores used as synthetic-data priors.
DIST_DIRECTIONS: tuple[tuple[Direction, float], ...] = (
    (Direction("en", "de"), 0.841),
    (Direction("en", "zh"), 0.775),
)
TAG_DIRECTION = Direction("en", "de")
TAG_TRAIN_MEANS = {"2019": 0.721, "2020": 0.735, "2021": 0.749}
TEST_TAGS = tuple(str(year) for year in range(2018, 2026))


@dataclass(frozen=True)
class SynthExample:
    direction: Direction
    source: str
    hypothesis: str
    reference: str
    gold_da: float
    quality: float
    tag: str | None = None


def _direction_alphabet(direction: Direction, side: str) -> str:
    rng = random.Random(f"alphabet:{side}:{direction}")
    return "".join(rng.sample(string.ascii_lowercase, ALPHABET_SIZE))


def corrupt_text(reference: str, rate: float, alphabet: str, rng: random.Random) -> str:
    """Each character survives with probability 1-rate; a corrupted one is
    equally likely replaced by a random alphabet character or dropped."""
    chars = []
    for ch in reference:
        if rng.random() >= rate:
            chars.append(ch)
        elif rng.random() < 0.5:
            chars.append(rng.choice(alphabet))
    return "".join(chars)


def generate_synth(
    directions: Sequence[tuple[Direction, float]],
    n_per_direction: int,
    seed: int | str,
    tag: str | None = None,
) -> list[SynthExample]:
    """Deterministic synthetic (reference, hypothesis, gold_da) triples.

    Per example: latent quality q ~ U[0,1]; the reference is a random
    string over a direction-specific alphabet; the hypothesis is the
    reference with substitution/deletion noise at rate (1-q)*0.5, so
    q = 1 reproduces it exactly; gold_da couples to q with slope 0.3
    plus N(0, 0.05) noise, clamped to [0,1].
    """
    examples = []
    for direction, mean_da in directions:
        if not 0.0 <= mean_da <= 1.0:
            raise ValueError(f"mean DA for {direction} must be in [0,1], got {mean_da}")
        tgt_alphabet = _direction_alphabet(direction, "tgt")
        src_alphabet = _direction_alphabet(direction, "src")
        rng = random.Random(f"synth:{seed}:{direction}:{tag}")
        for _ in range(n_per_direction):
            quality = rng.random()
            length = rng.randrange(*REF_LEN_RANGE)
            reference = "".join(rng.choice(tgt_alphabet) for _ in range(length))
            rate = (1.0 - quality) * CORRUPTION_SCALE
            hypothesis = corrupt_text(reference, rate, tgt_alphabet, rng)
            source = "".join(rng.choice(src_alphabet) for _ in range(length))
            gold = mean_da + DA_SLOPE * (quality - 0.5) + rng.gauss(0.0, DA_NOISE_SIGMA)
            examples.append(
                SynthExample(
                    direction=direction,
                    source=source,
                    hypothesis=hypothesis,
                    reference=reference,
                    gold_da=min(max(gold, 0.0), 1.0),
                    quality=quality,
                    tag=tag,
                )
            )
    return examples


# --- featurization and the linear scorer ---------------------------------


def _slot(namespace: str, token: str, hash_seed: int, dim: int) -> int:
    key = f"{hash_seed}\x1f{namespace}\x1f{token}".encode("utf-8")
    return zlib.crc32(key) % dim


def featurize(example: SynthExample, hash_seed: int = 0, dim: int = DIM) -> dict[int, float]:
    """Hashed sparse counts: hyp and ref n-grams in separate namespaces,
    one direction token, and one tag token when a tag is present."""
    features: dict[int, float] = {}
    for namespace, text in (("hyp", example.hypothesis), ("ref", example.reference)):
        for n in NGRAM_ORDERS:
            for i in range(len(text) - n + 1):
                idx = _slot(namespace, text[i : i + n], hash_seed, dim)
                features[idx] = features.get(idx, 0.0) + 1.0
    idx = _slot("dir", str(example.direction), hash_seed, dim)
    features[idx] = features.get(idx, 0.0) + 1.0
    if example.tag is not None:
        idx = _slot("tag", example.tag, hash_seed, dim)
        features[idx] = features.get(idx, 0.0) + 1.0
    return features


def assert_no_token_collisions(tokens: Iterable[tuple[str, str]], hash_seed: int = 0, dim: int = DIM) -> None:
    """Fail fast if any two categorical tokens hash to one slot."""
    seen: dict[int, tuple[str, str]] = {}
    for namespace, token in tokens:
        idx = _slot(namespace, token, hash_seed, dim)
        if idx in seen and seen[idx] != (namespace, token):
            raise ValueError(f"hash collision between {seen[idx]} and {(namespace, token)} at slot {idx}")
        seen[idx] = (namespace, token)


class ToyScorer:
    """Dense-weight linear regressor over hashed features."""

    def __init__(self, dim: int = DIM, hash_seed: int = 0) -> None:
        if dim & (dim - 1) != 0 or dim <= 0:
            raise ValueError("feature dimension must be a power of two")
        self.dim = dim
        self.hash_seed = hash_seed
        self.weights = np.zeros(dim, dtype=np.float64)
        self.bias = 0.0
        self.epoch_losses: tuple[float, ...] = ()

    def predict_features(self, features: dict[int, float]) -> float:
        return self.bias + sum(self.weights[i] * v for i, v in features.items())

    def predict(self, example: SynthExample) -> float:
        return self.predict_features(featurize(example, self.hash_seed, self.dim))

    def squared_error(self, features: dict[int, float], gold: float) -> float:
        return (self.predict_features(features) - gold) ** 2

    def gradient(self, features: dict[int, float], gold: float) -> tuple[dict[int, float], float]:
        """d/dw and d/db of the squared error on one example."""
        err = self.predict_features(features) - gold
        return {i: 2.0 * err * v for i, v in features.items()}, 2.0 * err


def train(
    dataset: Sequence[SynthExample],
    epochs: int = 30,
    learning_rate: float = 5e-4,
    seed: int | str = 0,
    dim: int = DIM,
    hash_seed: int = 0,
) -> ToyScorer:
    """Plain SGD on squared error with a per-epoch deterministic shuffle.

    The default learning rate is small because features are raw counts:
    a per-example step of 2*lr*|x|^2 beyond 1 oscillates, and |x|^2 is
    a few hundred here.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    cached = []
    for ex in dataset:
        features = featurize(ex, hash_seed, dim)
        idx = np.fromiter(features.keys(), dtype=np.int64, count=len(features))
        val = np.fromiter(features.values(), dtype=np.float64, count=len(features))
        cached.append((idx, val, ex.gold_da))
    scorer = ToyScorer(dim=dim, hash_seed=hash_seed)
    rng = random.Random(f"train:{seed}")
    order = list(range(len(cached)))
    losses = []
    weights = scorer.weights
    for _ in range(epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for k in order:
            idx, val, gold = cached[k]
            err = scorer.bias + float(weights[idx] @ val) - gold
            epoch_loss += err * err
            step = 2.0 * learning_rate * err
            weights[idx] -= step * val
            scorer.bias -= step
        mean_loss = epoch_loss / len(cached)
        if not math.isfinite(mean_loss):
            raise ValueError(f"training diverged (epoch loss {mean_loss}); lower the learning rate")
        losses.append(mean_loss)
    scorer.epoch_losses = tuple(losses)
    return scorer


def mean_score(scorer: ToyScorer, dataset: Sequence[SynthExample]) -> float:
    if not dataset:
        raise ValueError("cannot average over an empty dataset")
    return math.fsum(scorer.predict(ex) for ex in dataset) / len(dataset)


# --- dataset surgery ------------------------------------------------------


def filter_fraction(
    dataset: Sequence[SynthExample],
    direction: Direction,
    keep: str,
    fraction: float,
) -> list[SynthExample]:
    """Keep only the top/bottom fraction (by gold_da) of one direction.

    Other directions pass through untouched; the output preserves the
    original dataset order. Ties break by original index.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if keep not in ("top", "bottom"):
        raise ValueError(f"keep must be 'top' or 'bottom', got {keep!r}")
    in_direction = [(ex.gold_da, i) for i, ex in enumerate(dataset) if ex.direction == direction]
    if not in_direction:
        raise ValueError(f"no examples for direction {direction}")
    in_direction.sort()
    k = round(fraction * len(in_direction))
    chosen = in_direction[-k:] if keep == "top" else in_direction[:k]
    kept_indices = {i for _, i in chosen}
    return [ex for i, ex in enumerate(dataset) if ex.direction != direction or i in kept_indices]


# --- experiments ----------------------------------------------------------


@dataclass(frozen=True)
class DistBiasReport:
    """Mean test-set score per direction for each training-data filter."""

    directions: tuple[str, str]
    rows: tuple[tuple[str, float, float], ...]  # (config, mean A, mean B)


def distribution_bias_experiment(
    seed: int | str,
    n_per_direction: int = 250,
    n_test: int = 200,
    epochs: int = 30,
    learning_rate: float = 5e-4,
    dim: int = DIM,
) -> DistBiasReport:
    """Train on {all, top/bottom-75% of each direction}, score one test set.

    The priors 0.841 and 0.775 are per-direction mean human scores;
    filtering shifts the filtered direction's training mean and the
    scorer follows it, while the untouched direction should barely move.
    """
    (dir_a, mean_a), (dir_b, mean_b) = DIST_DIRECTIONS
    train_set = generate_synth(DIST_DIRECTIONS, n_per_direction, seed=f"{seed}/train")
    test_set = generate_synth(DIST_DIRECTIONS, n_test, seed=f"{seed}/test")
    test_a = [ex for ex in test_set if ex.direction == dir_a]
    test_b = [ex for ex in test_set if ex.direction == dir_b]

    configs = [
        ("all", train_set),
        (f"top75:{dir_a}", filter_fraction(train_set, dir_a, "top", 0.75)),
        (f"bottom75:{dir_a}", filter_fraction(train_set, dir_a, "bottom", 0.75)),
        (f"top75:{dir_b}", filter_fraction(train_set, dir_b, "top", 0.75)),
        (f"bottom75:{dir_b}", filter_fraction(train_set, dir_b, "bottom", 0.75)),
    ]
    rows = []
    for name, data in configs:
        scorer = train(data, epochs=epochs, learning_rate=learning_rate, seed=seed, dim=dim)
        rows.append((name, mean_score(scorer, test_a), mean_score(scorer, test_b)))
    return DistBiasReport(directions=(str(dir_a), str(dir_b)), rows=tuple(rows))


@dataclass(frozen=True)
class TagBiasReport:
    """Mean predicted score when the whole test set carries one tag."""

    rows: tuple[tuple[str, float, bool], ...]  # (tag, mean score, seen in training)


def tag_bias_experiment(
    seed: int | str,
    n_per_tag: int = 400,
    n_test: int = 200,
    epochs: int = 150,
    learning_rate: float = 1e-3,
    dim: int = DIM,
) -> TagBiasReport:
    """Train with year tags 2019-2021 whose gold means rise with the year,
    then score one fixed test set once per tag 2018-2025.

    A same-sized untagged portion trains alongside the tagged groups.
    It anchors the intercept at the overall mean so each tag weight
    converges to that year's offset (2019's below zero, 2021's above);
    without the anchor the intercept/tag split is underdetermined and
    the tag weights absorb a large share of the common level, pushing
    every unseen tag below every seen one.  Convergence matters as much
    as the anchor: groups must be large enough that the n-gram weights
    cannot memorize individual examples, and training long enough that
    the slowly-moving tag-vs-intercept direction actually settles.
    """
    assert_no_token_collisions(
        [("tag", tag) for tag in TEST_TAGS] + [("dir", str(TAG_DIRECTION))], hash_seed=0, dim=dim
    )
    base_mean = sum(TAG_TRAIN_MEANS.values()) / len(TAG_TRAIN_MEANS)
    train_set: list[SynthExample] = []
    for tag, mean_da in TAG_TRAIN_MEANS.items():
        train_set.extend(
            generate_synth([(TAG_DIRECTION, mean_da)], n_per_tag, seed=f"{seed}/tag{tag}", tag=tag)
        )
    train_set.extend(generate_synth([(TAG_DIRECTION, base_mean)], n_per_tag, seed=f"{seed}/anchor"))
    scorer = train(train_set, epochs=epochs, learning_rate=learning_rate, seed=seed, dim=dim)
    test_set = generate_synth([(TAG_DIRECTION, base_mean)], n_test, seed=f"{seed}/test")
    rows = []
    for tag in TEST_TAGS:
        retagged = [dataclasses.replace(ex, tag=tag) for ex in test_set]
        rows.append((tag, mean_score(scorer, retagged), tag in TAG_TRAIN_MEANS))
    return TagBiasReport(rows=tuple(rows))
