"""Episode protocol: splits, K budgets, containment, and leakage checks."""

import numpy as np
import pytest

from metafsod.episodes import (
    EpisodeError,
    build_base_episode,
    build_finetune_episode,
    make_split,
    split_dataset,
)
from metafsod.synthetic import SceneConfig, default_class_shapes, generate_dataset


@pytest.fixture(scope="module")
def toy_train():
    cfg = SceneConfig(
        image_size=64,
        class_shapes=default_class_shapes(5),
        objects_per_image=(1, 2),
        size_range=(10.0, 20.0),
        noise_std=0.02,
        seed=123,
    )
    return generate_dataset(cfg, 150)


@pytest.fixture(scope="module")
def toy_split():
    return make_split(range(5), [3, 4])


class TestMakeSplit:
    def test_complement(self):
        split = make_split({1, 2, 3, 4, 5}, {4, 5})
        assert split.base_ids == (1, 2, 3)
        assert split.novel_ids == (4, 5)

    def test_single_novel(self):
        split = make_split(range(1, 11), [1])
        assert split.base_ids == tuple(range(2, 11))

    def test_ten_classes_three_novel_gives_seven_base(self):
        split = make_split(range(10), [0, 1, 2])
        assert len(split.base_ids) == 7 and len(split.novel_ids) == 3

    def test_empty_novel_rejected(self):
        with pytest.raises(EpisodeError, match="empty"):
            make_split(range(5), [])

    def test_non_subset_rejected(self):
        with pytest.raises(EpisodeError, match="not in dataset"):
            make_split(range(5), [9])

    def test_full_cover_rejected(self):
        with pytest.raises(EpisodeError, match="base set"):
            make_split(range(3), range(3))


class TestSplitDataset:
    def test_even_partition(self):
        cfg = SceneConfig(seed=5, objects_per_image=(1, 2))
        ds = generate_dataset(cfg, 100)
        train, test = split_dataset(ds, 0.5, seed=1)
        assert len(train) == 50 and len(test) == 50
        names = {s.name for s in train.scenes} | {s.name for s in test.scenes}
        assert len(names) == 100  # disjoint and covering

    def test_same_seed_identical(self):
        cfg = SceneConfig(seed=5)
        ds = generate_dataset(cfg, 60)
        a = split_dataset(ds, 0.7, seed=9)
        b = split_dataset(ds, 0.7, seed=9)
        assert [s.name for s in a[0].scenes] == [s.name for s in b[0].scenes]

    def test_per_class_presence_both_sides(self):
        cfg = SceneConfig(seed=6, objects_per_image=(1, 2))
        ds = generate_dataset(cfg, 200)
        train, test = split_dataset(ds, 0.8, seed=2)
        for part in (train, test):
            seen = {inst.class_id for s in part.scenes for inst in s.instances}
            assert seen == set(ds.class_ids)

    def test_bad_fraction_rejected(self):
        cfg = SceneConfig(seed=5)
        ds = generate_dataset(cfg, 10)
        with pytest.raises(EpisodeError, match="train_fraction"):
            split_dataset(ds, 1.0, seed=0)

    def test_absent_class_named(self):
        # two scenes, class 4 appears once: any split strands it on one side
        cfg = SceneConfig(seed=0, objects_per_image=(1, 1))
        ds = generate_dataset(cfg, 4)
        present = {inst.class_id for s in ds.scenes for inst in s.instances}
        assert len(present) < 5  # 4 singletons cannot cover both sides for all 5
        with pytest.raises(EpisodeError, match="class"):
            split_dataset(ds, 0.5, seed=3)


class TestBaseEpisode:
    def test_support_one_per_base_class(self, toy_train, toy_split):
        ep = build_base_episode(toy_train, toy_split, seed=0)
        assert sorted(ep.support) == [0, 1, 2]
        for c, item in ep.support.items():
            assert item.instance.class_id == c
            assert item.mask.sum() == item.instance.area

    def test_novel_labels_absent(self, toy_train, toy_split):
        ep = build_base_episode(toy_train, toy_split, seed=0)
        for q in ep.query:
            for inst in q.instances:
                assert inst.class_id in toy_split.base_ids

    def test_query_label_multiset_matches_recount(self, toy_train, toy_split):
        ep = build_base_episode(toy_train, toy_split, seed=0)
        got = {}
        for q in ep.query:
            for inst in q.instances:
                got[inst.class_id] = got.get(inst.class_id, 0) + 1
        want = {}
        for scene in toy_train.scenes:
            for inst in scene.instances:
                if inst.class_id in toy_split.base_ids:
                    want[inst.class_id] = want.get(inst.class_id, 0) + 1
        assert got == want

    def test_deterministic(self, toy_train, toy_split):
        a = build_base_episode(toy_train, toy_split, seed=4)
        b = build_base_episode(toy_train, toy_split, seed=4)
        assert a.to_dict() == b.to_dict()

    def test_missing_base_class_rejected(self, toy_train):
        # restrict the training set to scenes without class 0
        from metafsod.synthetic import Dataset

        scenes = [
            s
            for s in toy_train.scenes
            if all(inst.class_id != 0 for inst in s.instances)
        ]
        reduced = Dataset(toy_train.image_size, toy_train.class_ids, scenes)
        with pytest.raises(EpisodeError, match="class 0"):
            build_base_episode(reduced, make_split(range(5), [3, 4]), seed=0)


class TestFinetuneEpisode:
    @pytest.mark.parametrize("k", [1, 3, 5, 10])
    def test_exact_budget_every_class(self, toy_train, toy_split, k):
        ep = build_finetune_episode(toy_train, toy_split, k, seed=k)
        counts = {c: 0 for c in toy_split.all_ids}
        for q in ep.query:
            for inst in q.instances:
                counts[inst.class_id] += 1
        assert counts == {c: k for c in toy_split.all_ids}
        assert ep.budget.per_class_used == counts

    def test_support_contained_in_query(self, toy_train, toy_split):
        ep = build_finetune_episode(toy_train, toy_split, 5, seed=2)
        query_refs = {q.image_ref for q in ep.query}
        for item in ep.support.values():
            assert item.image_ref in query_refs

    def test_single_instance_images_force_k_images_per_class(self):
        cfg = SceneConfig(seed=77, objects_per_image=(1, 1), size_range=(10.0, 18.0))
        ds = generate_dataset(cfg, 120)
        split = make_split(range(5), [4])
        ep = build_finetune_episode(ds, split, 3, seed=0)
        per_class_images = {c: 0 for c in split.all_ids}
        for q in ep.query:
            assert len(q.instances) == 1
            per_class_images[q.instances[0].class_id] += 1
        assert per_class_images == {c: 3 for c in split.all_ids}

    def test_multi_instance_recount_k10(self, toy_train, toy_split):
        ep = build_finetune_episode(toy_train, toy_split, 10, seed=6)
        recount = {c: 0 for c in toy_split.all_ids}
        for q in ep.query:
            for inst in q.instances:
                recount[inst.class_id] += 1
        assert all(v == 10 for v in recount.values())

    def test_insufficient_labels_names_class_and_count(self, toy_split):
        cfg = SceneConfig(seed=3, objects_per_image=(1, 1))
        ds = generate_dataset(cfg, 12)
        with pytest.raises(EpisodeError, match=r"class \d+ has only \d+ labels"):
            build_finetune_episode(ds, toy_split, 50, seed=0)

    def test_deterministic_serialization(self, toy_train, toy_split):
        a = build_finetune_episode(toy_train, toy_split, 5, seed=9)
        b = build_finetune_episode(toy_train, toy_split, 5, seed=9)
        assert a.to_dict() == b.to_dict()

    def test_save_round_trip_fields(self, toy_train, toy_split, tmp_path):
        import json

        ep = build_finetune_episode(toy_train, toy_split, 3, seed=1)
        ep.save(tmp_path / "episode.json")
        loaded = json.loads((tmp_path / "episode.json").read_text())
        assert loaded["k"] == 3
        assert loaded["split"] == {"base": [0, 1, 2], "novel": [3, 4]}
        assert sorted(int(c) for c in loaded["support"]) == [0, 1, 2, 3, 4]


def _episode_protocol_case(seed, k):
    cfg = SceneConfig(seed=1000 + seed % 7, objects_per_image=(1, 1), size_range=(10.0, 20.0))
    ds = generate_dataset(cfg, 110)
    split = make_split(range(5), [3, 4])
    ep = build_finetune_episode(ds, split, k, seed=seed)
    counts = {c: 0 for c in split.all_ids}
    for q in ep.query:
        for inst in q.instances:
            counts[inst.class_id] += 1
    query_refs = {q.image_ref for q in ep.query}
    contained = all(item.image_ref in query_refs for item in ep.support.values())
    return counts, contained


def test_protocol_over_many_seeds():
    """Spot version of the acceptance sweep: exact budgets, containment."""
    rng = np.random.default_rng(0)
    for _ in range(12):
        seed = int(rng.integers(0, 10_000))
        k = int(rng.choice([3, 5, 10, 20]))
        counts, contained = _episode_protocol_case(seed, k)
        assert all(v == k for v in counts.values())
        assert contained
