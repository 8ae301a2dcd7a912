"""Synthetic requirement-pair corpora with controllable class balance.

Pairs are built from topic token pools plus polarity markers so that the
three relations are separable for any reasonable sentence encoder:

- Duplicate: same topic, near-identical token bags, same marker.
- Conflict: same topic bag on both sides, opposing polarity markers.
- Neutral: disjoint topics, independent markers.

The topic vocabulary is a pure function of the topic index, so corpora
drawn with different seeds share one distribution (useful for building
source/target splits of a transfer experiment). Also provides Gaussian
blob features for classifier-only tests.
"""

from __future__ import annotations

import random

import numpy as np

from .corpus import Dataset, Label, RequirementPair

_MARKER_PAIRS = [
    ("always", "never"),
    ("enable", "disable"),
    ("permit", "forbid"),
    ("require", "prohibit"),
]
_TOKENS_PER_TOPIC = 14
_BAG_SIZE = 7


def _topic_pool(topic: int) -> list[str]:
    return [f"top{topic:02d}tok{j:02d}" for j in range(_TOKENS_PER_TOPIC)]


def _sentence(tokens: list[str], markers: tuple[str, str]) -> str:
    # markers appear twice: bag-of-token encoders weight by multiplicity
    return (f"the system shall {markers[0]} {markers[0]} " + " ".join(tokens)
            + f" {markers[1]} {markers[1]}")


def _counts_from_weights(n: int, weights: tuple[float, float, float]) -> list[int]:
    """Largest-remainder apportionment of n among the three labels."""
    total = sum(weights)
    exact = [n * w / total for w in weights]
    counts = [int(x) for x in exact]
    remainders = sorted(range(3), key=lambda i: exact[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[remainders[i % 3]] += 1
    return counts


def synthetic_corpus(n: int, seed: int,
                     weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
                     noise: float = 0.0, n_topics: int = 12,
                     name: str = "synthetic") -> Dataset:
    """n labeled pairs with class proportions ~ weights (Conflict,
    Duplicate, Neutral order). ``noise`` relabels that fraction of pairs
    uniformly to a different class, injecting irreducible error."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n_topics < 2:
        raise ValueError("need at least 2 topics for neutral pairs")
    rng = random.Random(seed)
    counts = _counts_from_weights(n, weights)
    slots = ([Label.CONFLICT] * counts[0] + [Label.DUPLICATE] * counts[1]
             + [Label.NEUTRAL] * counts[2])
    rng.shuffle(slots)

    def markers(fams: tuple[int, int], sides: tuple[int, int]) -> tuple[str, str]:
        return (_MARKER_PAIRS[fams[0]][sides[0]], _MARKER_PAIRS[fams[1]][sides[1]])

    pairs: list[RequirementPair] = []
    for i, label in enumerate(slots):
        if label is Label.DUPLICATE:
            topic = rng.randrange(n_topics)
            bag = rng.sample(_topic_pool(topic), _BAG_SIZE)
            other = bag[:]
            if rng.random() < 0.5:
                spare = [t for t in _topic_pool(topic) if t not in bag]
                other[rng.randrange(_BAG_SIZE)] = rng.choice(spare)
            m = markers(tuple(rng.sample(range(4), 2)),
                        (rng.randrange(2), rng.randrange(2)))
            t1 = _sentence(bag, m)
            t2 = _sentence(other, m)
        elif label is Label.CONFLICT:
            topic = rng.randrange(n_topics)
            bag = rng.sample(_topic_pool(topic), _BAG_SIZE)
            fams = tuple(rng.sample(range(4), 2))
            s1, s2 = rng.randrange(2), rng.randrange(2)
            t1 = _sentence(bag, markers(fams, (s1, s2)))
            t2 = _sentence(bag, markers(fams, (1 - s1, 1 - s2)))
        else:
            # disjoint marker families per side: neutral pairs never mimic
            # the agree/oppose patterns of the other two relations
            t_a, t_b = rng.sample(range(n_topics), 2)
            f = rng.sample(range(4), 4)
            t1 = _sentence(rng.sample(_topic_pool(t_a), _BAG_SIZE),
                           markers((f[0], f[1]), (rng.randrange(2), rng.randrange(2))))
            t2 = _sentence(rng.sample(_topic_pool(t_b), _BAG_SIZE),
                           markers((f[2], f[3]), (rng.randrange(2), rng.randrange(2))))
        if noise > 0.0 and rng.random() < noise:
            label = rng.choice([l for l in Label if l is not label])
        pairs.append(RequirementPair(id=str(i), text1=t1, text2=t2, label=label))
    return Dataset(name=name, pairs=tuple(pairs))


def gaussian_blobs(n: int, d: int, C: int, seed: int,
                   sep: float = 4.0) -> tuple[np.ndarray, list[int]]:
    """Linearly separable class blobs for classifier-only tests."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(C, d))
    centers *= sep / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = [i % C for i in range(n)]
    X = np.stack([centers[c] + rng.normal(size=d) for c in labels])
    return X, labels
