"""Episodic dataset construction: class splits, base and K-shot episodes.

The K budget counts labels, not images.  A candidate query image is
accepted only if every class it contains still has room in its budget;
when no exact-fit selection exists, construction fails loudly rather
than exceed K for any class.  Support exemplars for the fine-tuning
phase are drawn from the selected query images, so the support set is
always contained in the query set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .synthetic import AnnotatedInstance, Dataset, Scene, render_mask


class EpisodeError(ValueError):
    """Episode construction violated a precondition."""


@dataclass(frozen=True)
class ClassSplit:
    """Disjoint base/novel partition covering the dataset's classes."""

    base_ids: tuple[int, ...]
    novel_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.base_ids or not self.novel_ids:
            raise EpisodeError("both base and novel class sets must be nonempty")
        if set(self.base_ids) & set(self.novel_ids):
            raise EpisodeError("base and novel class sets overlap")

    @property
    def all_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.base_ids + self.novel_ids))

    def to_dict(self) -> dict:
        return {"base": list(self.base_ids), "novel": list(self.novel_ids)}


def make_split(class_ids, novel_ids) -> ClassSplit:
    """Declare novel classes; the base set is the complement."""
    class_set = set(class_ids)
    novel = sorted(set(novel_ids))
    if not novel:
        raise EpisodeError("novel class set is empty")
    missing = [c for c in novel if c not in class_set]
    if missing:
        raise EpisodeError(f"novel classes {missing} not in dataset classes")
    base = sorted(class_set - set(novel))
    if not base:
        raise EpisodeError("novel set covers every class; base set would be empty")
    return ClassSplit(tuple(base), tuple(novel))


def split_dataset(dataset: Dataset, train_fraction: float, seed: int):
    """Seeded image-level partition into (train, test).

    Every class must appear in both subsets; a class that lands entirely
    on one side raises ``EpisodeError`` naming it.
    """
    if not 0.0 < train_fraction < 1.0:
        raise EpisodeError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xD1,)))
    order = rng.permutation(len(dataset.scenes))
    n_train = int(round(train_fraction * len(dataset.scenes)))
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    train = Dataset(dataset.image_size, dataset.class_ids, [dataset.scenes[i] for i in train_idx])
    test = Dataset(dataset.image_size, dataset.class_ids, [dataset.scenes[i] for i in test_idx])
    for name, part in (("train", train), ("test", test)):
        present = {inst.class_id for scene in part.scenes for inst in scene.instances}
        absent = sorted(set(dataset.class_ids) - present)
        if absent:
            raise EpisodeError(f"class {absent[0]} has no instances in the {name} subset")
    return train, test


@dataclass
class SupportItem:
    image_ref: str
    image: np.ndarray
    instance: AnnotatedInstance
    mask: np.ndarray


@dataclass
class QueryItem:
    image_ref: str
    image: np.ndarray
    instances: list[AnnotatedInstance]


@dataclass
class KShotBudget:
    k: int
    per_class_used: dict[int, int]


@dataclass
class Episode:
    """One meta-learning task: a support exemplar per class plus query images."""

    phase: str  # "base" | "finetune"
    support: dict[int, SupportItem]
    query: list[QueryItem]
    split: ClassSplit
    k_shot: int | None = None
    budget: KShotBudget | None = None

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.support))

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "k": self.k_shot,
            "split": self.split.to_dict(),
            "support": {
                str(c): {
                    "image": item.image_ref,
                    "class": item.instance.class_id,
                    "bbox": list(item.instance.bbox),
                }
                for c, item in sorted(self.support.items())
            },
            "query": [
                {
                    "image": q.image_ref,
                    "labels": [
                        {"class": inst.class_id, "bbox": list(inst.bbox)}
                        for inst in q.instances
                    ],
                }
                for q in self.query
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )


def _class_instances(dataset: Dataset, class_id: int):
    """All (scene, instance) pairs of one class, in file order."""
    return [
        (scene, inst)
        for scene in dataset.scenes
        for inst in scene.instances
        if inst.class_id == class_id
    ]


def _draw_support(dataset_size, candidates, rng) -> SupportItem:
    scene, inst = candidates[rng.integers(0, len(candidates))]
    return SupportItem(scene.name, scene.image, inst, render_mask(dataset_size, inst))


def build_base_episode(d_tr: Dataset, split: ClassSplit, seed: int) -> Episode:
    """Base phase: all base-class images as queries, novel labels removed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB0,)))
    base_set = set(split.base_ids)
    support: dict[int, SupportItem] = {}
    for c in sorted(split.base_ids):
        candidates = _class_instances(d_tr, c)
        if not candidates:
            raise EpisodeError(f"base class {c} has no instances in the training set")
        support[c] = _draw_support(d_tr.image_size, candidates, rng)
    query = []
    for scene in d_tr.scenes:
        kept = [inst for inst in scene.instances if inst.class_id in base_set]
        if kept:
            query.append(QueryItem(scene.name, scene.image, kept))
    return Episode("base", support, query, split)


def build_finetune_episode(d_tr: Dataset, split: ClassSplit, k: int, seed: int) -> Episode:
    """K-shot phase over all classes; exactly K labels per class, supports from queries."""
    if k < 1:
        raise EpisodeError(f"K must be positive, got {k}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xF7,)))
    class_ids = split.all_ids
    available = {c: len(_class_instances(d_tr, c)) for c in class_ids}
    for c in class_ids:
        if available[c] < k:
            raise EpisodeError(
                f"class {c} has only {available[c]} labels in the training set, need K={k}"
            )

    used = {c: 0 for c in class_ids}
    chosen: list[Scene] = []
    order = rng.permutation(len(d_tr.scenes))
    for idx in order:
        scene = d_tr.scenes[idx]
        counts: dict[int, int] = {}
        for inst in scene.instances:
            counts[inst.class_id] = counts.get(inst.class_id, 0) + 1
        if not counts:
            continue
        if all(used[c] + n <= k for c, n in counts.items()):
            # an image only enters the query set if no class budget overflows
            for c, n in counts.items():
                used[c] += n
            chosen.append(scene)
        if all(used[c] == k for c in class_ids):
            break
    short = [c for c in class_ids if used[c] != k]
    if short:
        c = short[0]
        raise EpisodeError(
            f"no exact-fit selection: class {c} reached {used[c]} of K={k} labels"
        )

    chosen.sort(key=lambda s: s.name)
    query = [QueryItem(s.name, s.image, list(s.instances)) for s in chosen]
    selected = Dataset(d_tr.image_size, d_tr.class_ids, chosen)
    support: dict[int, SupportItem] = {}
    for c in sorted(class_ids):
        candidates = _class_instances(selected, c)
        support[c] = _draw_support(d_tr.image_size, candidates, rng)
    return Episode(
        "finetune",
        support,
        query,
        split,
        k_shot=k,
        budget=KShotBudget(k, used),
    )
