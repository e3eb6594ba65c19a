import json
import os

import numpy as np
import pytest

from shotshift.episodic import (
    Annotation,
    DatasetIndex,
    ImageRecord,
    MDTSPolicy,
    SplitConfig,
    enumerate_fewshot,
    load_dataset,
    load_split,
    merge_indexes,
    partition,
    plan_episode,
    sample_episode,
)
from shotshift.exceptions import (
    AnnotationError,
    ConfigError,
    SamplingError,
    SplitError,
)
from shotshift.imaging import ImageRGB

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "configs")
CLASS_TABLE = {1: "disc", 2: "square", 3: "triangle", 4: "ring", 5: "cross"}


def make_index(layout, size=32, class_table=CLASS_TABLE, first_id=1):
    """
    layout: list of (domain, class ids) per image, one 6x6 object per class.
    """
    rng = np.random.default_rng(first_id)
    images, annotations, pixels = [], [], {}
    ann_id = first_id * 1000
    for offset, (domain, classes) in enumerate(layout):
        image_id = first_id + offset
        images.append(ImageRecord(image_id, "{}.png".format(image_id), size, size, domain))
        pixels[image_id] = ImageRGB(rng.integers(0, 256, (size, size, 3), dtype=np.uint8))
        for slot, class_id in enumerate(classes):
            bbox = (2.0 + 8 * slot, 4.0, 6.0, 6.0)
            annotations.append(Annotation(bbox, class_id, image_id, ann_id))
            ann_id += 1
    return DatasetIndex(images, annotations, class_table, pixels=pixels)


def two_domain_layout(per_domain=20):
    layout = []
    for domain in ("source", "target"):
        for i in range(per_domain):
            layout.append((domain, [i % 4 + 1, (i + 1) % 4 + 1]))
    return layout


def test_index_validation():
    record = ImageRecord(1, "a.png", 32, 32, "source")
    tests = [
        ([record, record], []),
        ([record._replace(domain="night")], []),
        ([record], [Annotation((1, 1, 4, 4), 1, 2, 1)]),
        ([record], [Annotation((1, 1, 4, 4), 9, 1, 1)]),
        ([record], [Annotation((1, 1, 0, 4), 1, 1, 1)]),
        ([record], [Annotation((40, 40, 4, 4), 1, 1, 1)]),
        ([record], [Annotation((1, 1, float("nan"), 4), 1, 1, 1)]),
    ]
    for images, annotations in tests:
        print(images, annotations)
        with pytest.raises(AnnotationError):
            DatasetIndex(images, annotations, CLASS_TABLE)

    with pytest.raises(AnnotationError) as e:
        DatasetIndex([record], [Annotation((1, 1, 4, 4), 9, 1, 1)], CLASS_TABLE)
    assert e.value.class_id == 9
    assert e.value.image_id == 1


def test_boxes_are_clipped():
    record = ImageRecord(1, "a.png", 32, 32, "source")
    index = DatasetIndex([record], [Annotation((-2, -2, 6, 6), 1, 1, 1)], CLASS_TABLE)
    assert index.annotations[0].bbox == (0.0, 0.0, 4.0, 4.0)
    index = DatasetIndex([record], [Annotation((30, 28, 6, 6), 1, 1, 1)], CLASS_TABLE)
    assert index.annotations[0].bbox == (30.0, 28.0, 2.0, 4.0)


def test_load_dataset(tmp_path):
    index = make_index([("source", [1, 2]), ("target", [3])])
    for record in index.images:
        index.image(record.image_id).save(str(tmp_path / record.file_name))
    path = index.save(str(tmp_path / "ann.json"))

    loaded = load_dataset(path)
    assert loaded.annotations == index.annotations
    assert loaded.images == index.images
    assert loaded.image(2) == index.image(2)

    os.remove(str(tmp_path / "2.png"))
    with pytest.raises(AnnotationError):
        load_dataset(path)
    assert len(load_dataset(path, check_files=False)) == 2

    tests = [
        [],
        {"images": []},
        {"images": [{"id": 1}], "annotations": [], "categories": []},
        {
            "images": [],
            "annotations": [{"image_id": 1, "category_id": 1, "bbox": [1, 2, 3]}],
            "categories": [],
        },
        {"images": [], "annotations": [], "categories": [{"id": "car", "name": "car"}]},
        {
            "images": [{"id": 1, "file_name": "1.png", "width": "wide", "height": 4}],
            "annotations": [],
            "categories": [],
        },
        {
            "images": [],
            "annotations": [{"image_id": "one", "category_id": 1, "bbox": [1, 2, 3, 4]}],
            "categories": [],
        },
        {
            "images": [],
            "annotations": [{"id": None, "image_id": 1, "category_id": 1, "bbox": [1, 2, 3, 4]}],
            "categories": [],
        },
    ]
    for i, data in enumerate(tests):
        print(data)
        bad = tmp_path / "bad{}.json".format(i)
        bad.write_text(json.dumps(data))
        with pytest.raises(AnnotationError):
            load_dataset(str(bad), check_files=False)


def test_shipped_splits():
    tless = load_split(os.path.join(CONFIGS, "tless_split.json"))
    assert len(tless.base_class_ids) == 19
    assert len(tless.novel_class_ids) == 11
    assert tless.base_class_ids == set(range(1, 19)) | {27}
    assert tless.novel_class_ids == set(range(19, 27)) | {28, 29, 30}

    voc = load_split(os.path.join(CONFIGS, "voc_exdark_split.json"))
    assert (len(voc.base_class_ids), len(voc.novel_class_ids)) == (15, 5)
    assert voc.novel_class_ids == {4, 5, 6, 8, 14}

    shapes = load_split(os.path.join(CONFIGS, "shapes_split.json"))
    assert shapes.class_ids == set(range(1, 7))


def test_split_errors(tmp_path):
    for base, novel in (([1, 2], [2, 3]), ([], [1]), ([1], []), (["a"], [1])):
        print(base, novel)
        with pytest.raises(SplitError):
            SplitConfig(base, novel)
    with pytest.raises(SplitError):
        SplitConfig([1], [9]).validate(CLASS_TABLE)
    # split errors are configuration errors
    assert issubclass(SplitError, ConfigError)

    for data in ({"base_class_ids": [1]}, {"base_class_ids": [1], "novel_class_ids": [2], "x": 1}):
        path = tmp_path / "split.json"
        path.write_text(json.dumps(data))
        with pytest.raises(SplitError):
            load_split(str(path))


def test_partition():
    index = make_index(
        [("source", [1, 2]), ("source", [3]), ("target", [1, 4]), ("target", [2])]
    )
    base, novel = partition(index, SplitConfig([1, 2], [3, 4]))
    assert base.image_ids == (1, 3, 4)
    assert novel.image_ids == (2, 3)
    # mixed image 3 shows only the annotations of each view
    assert [a.class_id for a in base.annotations_for(3)] == [1]
    assert [a.class_id for a in novel.annotations_for(3)] == [4]

    ids = [a.ann_id for a in base.annotations] + [a.ann_id for a in novel.annotations]
    assert sorted(ids) == sorted(a.ann_id for a in index.annotations)
    assert not set(a.ann_id for a in base.annotations) & set(
        a.ann_id for a in novel.annotations
    )

    all_base, empty = partition(
        DatasetIndex(index.images, index.annotations, CLASS_TABLE),
        SplitConfig([1, 2, 3, 4], [5]),
    )
    assert len(empty) == 0
    assert len(all_base) == 4

    with pytest.raises(SplitError):
        partition(index, SplitConfig([1], [7]))

    source_novel = novel.restrict_domain("source")
    assert source_novel.image_ids == (2,)
    assert novel.instances(4, "target")[0].image_id == 3
    assert novel.instances(4, "source") == ()


def test_merge_indexes():
    source = make_index([("source", [1]), ("source", [2])], first_id=1)
    target = make_index([("target", [1]), ("target", [3])], first_id=11)
    merged = merge_indexes([source, target])
    assert merged.image_ids == (1, 2, 11, 12)
    assert merged.image(11) == target.image(11)
    assert merged.record(12).domain == "target"

    with pytest.raises(AnnotationError):
        merge_indexes([source, source])
    renamed = make_index(
        [("target", [1])], class_table={1: "box", 2: "b", 3: "c", 4: "d"}, first_id=30
    )
    with pytest.raises(AnnotationError):
        merge_indexes([source, renamed])
    with pytest.raises(AnnotationError):
        merge_indexes([])


def test_policy_validation():
    tests = [
        dict(query_target_prob=1.5),
        dict(query_target_prob=-0.1),
        dict(support_mix_mode="both"),
        dict(few_shot_target_budget=-1),
        dict(few_shot_target_budget=1.5),
    ]
    for kwargs in tests:
        print(kwargs)
        with pytest.raises(ConfigError):
            MDTSPolicy(**kwargs)


def test_episode_invariants():
    view, _ = partition(make_index(two_domain_layout()), SplitConfig([1, 2, 3, 4], [5]))
    budget = 3
    policy = MDTSPolicy(0.5, "mixed", budget)
    allowed = {}
    for class_id in range(1, 5):
        targets = [
            i
            for i in view.image_ids
            if view.domain_of(i) == "target"
            and any(a.class_id == class_id for a in view.annotations_for(i))
        ]
        allowed[class_id] = set(targets[:budget])

    rng = np.random.default_rng(0)
    shots = 5
    domains = set()
    for _ in range(10 ** 5):
        plan = plan_episode(view, policy, shots, rng)
        assert plan.positive_class != plan.negative_class
        assert any(
            a.class_id == plan.positive_class for a in view.annotations_for(plan.query_image_id)
        )
        assert view.domain_of(plan.query_image_id) == plan.query_domain
        for refs, class_id in (
            (plan.positive_supports, plan.positive_class),
            (plan.negative_supports, plan.negative_class),
        ):
            assert len(refs) == shots
            for ref in refs:
                assert ref.annotation.class_id == class_id
                assert ref.annotation.image_id != plan.query_image_id
                assert view.domain_of(ref.annotation.image_id) == ref.domain
                if ref.domain == "target":
                    assert ref.annotation.image_id in allowed[class_id]
                domains.add(ref.domain)
    assert domains == {"source", "target"}


def test_episode_modes():
    base, _ = partition(make_index(two_domain_layout()), SplitConfig([1, 2, 3, 4], [5]))
    rng = np.random.default_rng(1)

    for _ in range(200):
        plan = plan_episode(base, MDTSPolicy(), 3, rng)
        assert plan.query_domain == "source"
        refs = plan.positive_supports + plan.negative_supports
        assert {r.domain for r in refs} == {"source"}

    policy = MDTSPolicy(1.0, "target_only", 100)
    for _ in range(200):
        plan = plan_episode(base, policy, 3, rng)
        assert plan.query_domain == "target"
        refs = plan.positive_supports + plan.negative_supports
        assert {r.domain for r in refs} == {"target"}

    policy = MDTSPolicy(0.0, "single_random_domain", 100)
    for _ in range(200):
        plan = plan_episode(base, policy, 3, rng)
        assert len({r.domain for r in plan.positive_supports + plan.negative_supports}) == 1

    # zero-shot budget: target pool is empty
    with pytest.raises(SamplingError):
        plan_episode(base, MDTSPolicy(0.0, "target_only", 0), 3, rng)


def test_two_class_view():
    index = make_index([("source", [1, 2])] * 6)
    view, _ = partition(index, SplitConfig([1, 2], [3]))
    rng = np.random.default_rng(2)
    for _ in range(100):
        plan = plan_episode(view, MDTSPolicy(), 2, rng)
        assert {plan.positive_class, plan.negative_class} == {1, 2}

    single, _ = partition(make_index([("source", [1])] * 1), SplitConfig([1], [2]))
    with pytest.raises(SamplingError):
        plan_episode(single, MDTSPolicy(), 1, rng)


def test_sample_episode_crops():
    base, _ = partition(make_index(two_domain_layout(8)), SplitConfig([1, 2, 3, 4], [5]))
    episode = sample_episode(base, MDTSPolicy(), 2, 16, np.random.default_rng(3))
    assert episode.query == base.image(episode.query_image_id)
    assert all(a.class_id == episode.positive_class for a in episode.query_annotations)
    for support in episode.positive_supports + episode.negative_supports:
        assert (support.image.width, support.image.height) == (16, 16)


def test_enumerate_fewshot():
    _, novel = partition(make_index(two_domain_layout()), SplitConfig([1, 2], [3, 4]))
    view = novel.restrict_domain("source")

    five = enumerate_fewshot(view, 5, np.random.default_rng(9))
    again = enumerate_fewshot(view, 5, np.random.default_rng(9))
    three = enumerate_fewshot(view, 3, np.random.default_rng(9))
    assert five.class_ids == [3, 4]
    assert five.supports == again.supports
    for class_id in five.class_ids:
        assert len(five.supports[class_id]) == 5
        assert len(set(a.ann_id for a in five.supports[class_id])) == 5
        assert three.supports[class_id] == five.supports[class_id][:3]
        assert all(view.domain_of(a.image_id) == "source" for a in five.supports[class_id])

    patches = five.patches(3, 2, 12)
    assert len(patches) == 5
    assert all((p.width, p.height) == (12, 12) for p in patches)
    assert five.to_dict()["shots"] == 5

    with pytest.raises(SamplingError) as e:
        enumerate_fewshot(view, 11, np.random.default_rng(0))
    assert e.value.class_ids == (3, 4)


def test_query_target_fraction():
    base, _ = partition(make_index(two_domain_layout()), SplitConfig([1, 2, 3, 4], [5]))
    policy = MDTSPolicy(0.5, "mixed", 100)
    rng = np.random.default_rng(2)
    n = 10 ** 4
    targets = sum(plan_episode(base, policy, 2, rng).query_domain == "target" for _ in range(n))
    assert 0.48 <= targets / n <= 0.52
