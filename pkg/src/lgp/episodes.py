"""Corpus ingestion, class splits, and deterministic N-way K-shot episode sampling.

Episodes are multi-label: a query sentence mentioning several of the episode's
classes appears once, carries the full restricted label vector, and counts
toward every matching class's query quota.  Support sentences are excluded
from the query pool.  All sampling is reproducible: the episode stream derives
one sub-seed per episode index so individual episodes can be regenerated (and
evaluated in parallel) without replaying the stream.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, SamplingError, ValidationError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    labels: frozenset


class Corpus:
    """Immutable sentence collection with a label index."""

    def __init__(self, sentences):
        self.sentences = tuple(sentences)
        self.by_id = {}
        by_label: dict[str, list[int]] = {}
        for idx, s in enumerate(self.sentences):
            if s.id in self.by_id:
                raise ValidationError(f"duplicate sentence id {s.id!r}")
            self.by_id[s.id] = idx
            for label in s.labels:
                by_label.setdefault(label, []).append(idx)
        self.by_label = {label: tuple(ids) for label, ids in by_label.items()}

    @property
    def labels(self):
        return sorted(self.by_label)

    def __len__(self):
        return len(self.sentences)


def load_corpus(path) -> Corpus:
    """Parse a JSON Lines corpus: {"id": str, "text": str, "labels": [str, ...]}."""
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                sid = str(rec["id"])
                text = str(rec["text"])
                labels = rec["labels"]
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: missing field: {exc}") from exc
            if not isinstance(labels, list) or not labels:
                raise ParseError(f"{path}:{lineno}: labels must be a nonempty list")
            sentences.append(Sentence(id=sid, text=text, labels=frozenset(map(str, labels))))
    return Corpus(sentences)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        seen = {}
        for part in ("train", "val", "test"):
            for label in getattr(self, part):
                if label in seen:
                    raise ValidationError(
                        f"label {label!r} appears in both {seen[label]} and {part} splits"
                    )
                seen[label] = part

    def part(self, name: str):
        if name not in ("train", "val", "test"):
            raise ValidationError(f"unknown split part {name!r}")
        return getattr(self, name)

    def all_labels(self):
        return tuple(self.train) + tuple(self.val) + tuple(self.test)


def load_split(path) -> SplitSpec:
    """Load a split file: {"train": [...], "val": [...], "test": [...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict) or set(raw) != {"train", "val", "test"}:
        raise ValidationError(f"{path}: split file must have exactly train/val/test keys")
    return SplitSpec(
        train=tuple(map(str, raw["train"])),
        val=tuple(map(str, raw["val"])),
        test=tuple(map(str, raw["test"])),
    )


def save_split(path, split: SplitSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"train": list(split.train), "val": list(split.val), "test": list(split.test)}, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupportItem:
    sentence: Sentence
    sampled_for: str  # the class whose label fills the support prompt


@dataclass(frozen=True)
class QueryItem:
    sentence: Sentence
    label_bits: tuple  # restricted to the episode's classes


@dataclass(frozen=True)
class Episode:
    classes: tuple  # N labels
    support: tuple  # N groups of K SupportItems, aligned with classes
    queries: tuple  # QueryItems

    @property
    def n_way(self) -> int:
        return len(self.classes)

    @property
    def k_shot(self) -> int:
        return len(self.support[0]) if self.support else 0


def mix64(z: int) -> int:
    """SplitMix64 finalizer; diffuses counters into independent sub-seeds."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def episode_seed(seed: int, index: int) -> int:
    return mix64((seed + (index + 1) * _GOLDEN) & _MASK64)


def sample_episode(rng, corpus: Corpus, labels, n_way: int, k_shot: int, n_query: int) -> Episode:
    """Draw one N-way K-shot episode from the given split part.

    Stages are uniform without replacement: classes, then K support sentences
    per class, then query sentences per class until every class is positive in
    at least ``n_query`` query label vectors.
    """
    label_pool = list(labels)
    if len(label_pool) < n_way:
        raise SamplingError(
            f"split part has {len(label_pool)} classes, episode needs {n_way}"
        )
    class_idx = rng.choice(len(label_pool), size=n_way, replace=False)
    classes = tuple(label_pool[int(i)] for i in class_idx)

    for c in classes:
        pool = corpus.by_label.get(c, ())
        if len(pool) < k_shot + n_query:
            raise SamplingError(
                f"class {c!r} has {len(pool)} sentences, episode needs {k_shot + n_query}"
            )

    support_groups = []
    support_ids = set()
    for c in classes:
        pool = corpus.by_label[c]
        picks = rng.choice(len(pool), size=k_shot, replace=False)
        group = tuple(SupportItem(corpus.sentences[pool[int(p)]], c) for p in picks)
        support_groups.append(group)
        support_ids.update(item.sentence.id for item in group)

    quotas = {c: 0 for c in classes}
    chosen: dict[str, QueryItem] = {}
    for c in classes:
        while quotas[c] < n_query:
            candidates = [
                idx
                for idx in corpus.by_label[c]
                if corpus.sentences[idx].id not in support_ids
                and corpus.sentences[idx].id not in chosen
            ]
            if not candidates:
                raise SamplingError(
                    f"class {c!r} ran out of query candidates "
                    f"(needs {n_query}, has {quotas[c]})"
                )
            pick = candidates[int(rng.integers(len(candidates)))]
            sentence = corpus.sentences[pick]
            bits = tuple(1 if cls in sentence.labels else 0 for cls in classes)
            chosen[sentence.id] = QueryItem(sentence, bits)
            for cls, bit in zip(classes, bits):
                if bit:
                    quotas[cls] += 1

    return Episode(classes=classes, support=tuple(support_groups), queries=tuple(chosen.values()))


def episode_stream(seed: int, corpus: Corpus, labels, n_way: int, k_shot: int,
                   n_query: int, count: int):
    """Yield ``count`` episodes, each from its own counter-derived sub-seed."""
    if count < 1:
        raise SamplingError(f"episode count must be >= 1, got {count}")
    for index in range(count):
        rng = np.random.Generator(np.random.PCG64(episode_seed(seed, index)))
        yield sample_episode(rng, corpus, labels, n_way, k_shot, n_query)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

_FILLERS = ("the", "was", "really", "and", "overall", "it", "quite", "very")


def make_synthetic_corpus(
    n_classes: int = 20,
    sentences_per_class: int = 30,
    seed: int = 0,
    multi_label_rate: float = 0.25,
    n_feature_tokens: int = 10,
    markers_per_sentence: int = 2,
    noise_vocab: int = 40,
    noise_per_sentence: int = 8,
) -> tuple[Corpus, SplitSpec]:
    """Generate a separable toy corpus whose sentences embed class-marker tokens.

    Each class is a distinct pair of feature tokens from a shared pool, so
    classes held out for testing still consist of tokens seen (and tuned)
    during training.  Noise tokens are shared across classes.  The split is
    disjoint: half the classes train, a quarter validate, a quarter test.
    """
    if n_feature_tokens * (n_feature_tokens - 1) // 2 < n_classes:
        raise ValidationError(
            f"{n_feature_tokens} feature tokens give too few pairs for {n_classes} classes"
        )
    rng = np.random.Generator(np.random.PCG64(mix64(seed ^ 0x5EED)))

    pairs = [(i, j) for i in range(n_feature_tokens) for j in range(i + 1, n_feature_tokens)]
    pair_order = rng.permutation(len(pairs))
    features = [f"feat{i:02d}" for i in range(n_feature_tokens)]
    class_markers = {}
    labels = []
    for c in range(n_classes):
        i, j = pairs[int(pair_order[c])]
        label = f"aspect_{features[i]}_{features[j]}"
        labels.append(label)
        class_markers[label] = (features[i], features[j])

    noise_pool = [f"noise{i:02d}" for i in range(noise_vocab)]
    sentences = []
    sid = 0
    for label in labels:
        for _ in range(sentences_per_class):
            labelset = {label}
            if rng.random() < multi_label_rate:
                other = labels[int(rng.integers(n_classes))]
                if other != label:
                    labelset.add(other)
            tokens = []
            for lab in sorted(labelset):
                marks = list(class_markers[lab])
                take = min(markers_per_sentence, len(marks))
                picks = rng.choice(len(marks), size=take, replace=False)
                tokens.extend(marks[int(p)] for p in picks)
            tokens.extend(
                noise_pool[int(i)]
                for i in rng.integers(noise_vocab, size=noise_per_sentence)
            )
            tokens.extend(
                _FILLERS[int(i)] for i in rng.integers(len(_FILLERS), size=2)
            )
            perm = rng.permutation(len(tokens))
            text = " ".join(tokens[int(p)] for p in perm)
            sentences.append(Sentence(id=f"syn{sid:05d}", text=text, labels=frozenset(labelset)))
            sid += 1

    n_train = n_classes // 2
    n_val = (n_classes - n_train) // 2
    split = SplitSpec(
        train=tuple(labels[:n_train]),
        val=tuple(labels[n_train : n_train + n_val]),
        test=tuple(labels[n_train + n_val :]),
    )
    return Corpus(sentences), split


def save_corpus(path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus.sentences:
            fh.write(json.dumps({"id": s.id, "text": s.text, "labels": sorted(s.labels)}) + "\n")
