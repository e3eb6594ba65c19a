import json
import os

import numpy as np
import pytest

from shotshift.constants import GAP_PRESETS, SOURCE_DOMAIN
from shotshift.episodic import SplitConfig, load_dataset
from shotshift.exceptions import ConfigError, PlacementError, SplitError
from shotshift.imaging import ImageRGB
from shotshift.metrics import iou
from shotshift.synthgen import (
    DomainSpec,
    SceneSpec,
    apply_domain_effects,
    background_pool,
    generate_dataset,
    generate_scene,
    render_background,
    shape_mask,
)

SPLIT = SplitConfig([1, 2, 3, 4], [5, 6], name="shapes")


def test_scene_spec_validation():
    tests = [
        dict(canvas=(4, 64)),
        dict(objects=(3, 1)),
        dict(objects=(-1, 2)),
        dict(size_range=(2, 10)),
        dict(size_range=(20, 10)),
        dict(size_range=(14, 80)),
        dict(overlap_limit=1.5),
        dict(class_ids=[7]),
    ]
    for kwargs in tests:
        print(kwargs)
        with pytest.raises(ConfigError):
            SceneSpec(**kwargs)

    spec = SceneSpec()
    assert spec.class_ids == (1, 2, 3, 4, 5, 6)
    assert spec.class_table[4] == "ring"
    assert SceneSpec(class_ids=[2, 5]).class_table == {2: "square", 5: "cross"}


def test_shape_masks():
    square = shape_mask("square", 10)
    assert square.all()

    disc = shape_mask("disc", 12)
    assert disc[6, 6]
    assert not disc[0, 0] and not disc[11, 11]

    ring = shape_mask("ring", 20)
    assert not ring[10, 10]
    assert ring[10, 0]

    cross = shape_mask("cross", 12)
    assert cross[6, 6] and cross[0, 6] and cross[6, 0]
    assert not cross[0, 0]

    for kind in ("triangle", "diamond"):
        mask = shape_mask(kind, 16)
        assert mask[8, 8]
        assert not mask[0, 0]
        assert 0 < mask.sum() < 16 * 16

    with pytest.raises(ConfigError):
        shape_mask("hexagon", 10)


def test_domain_spec():
    tests = [
        dict(background="stripes"),
        dict(background="checker", colors=["#000000"]),
        dict(colors=["#12345"]),
        dict(cell=0),
        dict(color_shift=(0, 300, 0)),
        dict(color_shift=(1, 2)),
        dict(illumination=(0.0, 1.0)),
        dict(noise_sigma=-1.0),
    ]
    for kwargs in tests:
        print(kwargs)
        with pytest.raises(ConfigError):
            DomainSpec(**kwargs)
    with pytest.raises(ConfigError):
        DomainSpec.from_dict({"fog": 0.3})

    source = DomainSpec.from_dict(SOURCE_DOMAIN)
    assert source == DomainSpec()
    assert source.digest() == DomainSpec().digest()
    digests = {
        DomainSpec.from_dict(GAP_PRESETS[name]).digest() for name in ("mild", "default", "harsh")
    }
    assert len(digests) == 3
    assert source.digest() not in digests
    assert DomainSpec.from_dict(source.to_dict()) == source


def test_render_background():
    rng = np.random.default_rng(0)
    flat = render_background(DomainSpec(colors=["#102030"]), 5, 4, rng)
    assert flat.shape == (4, 5, 3)
    assert (flat == [16, 32, 48]).all()

    checker = render_background(DomainSpec("checker", ["#000000", "#FFFFFF"], cell=2), 8, 8, rng)
    assert (checker[0, 0] == 0).all()
    assert (checker[0, 2] == 255).all()
    assert (checker[2, 2] == 0).all()

    noise = render_background(DomainSpec("noise", ["#000000", "#FFFFFF"], cell=4), 16, 16, rng)
    assert noise.min() >= 0 and noise.max() <= 255


def test_domain_effects():
    img = ImageRGB(np.random.default_rng(1).integers(0, 256, (16, 16, 3), dtype=np.uint8))
    rng = np.random.default_rng(0)
    assert apply_domain_effects(img, DomainSpec(), rng) == img

    gray = ImageRGB.blank(4, 4, (100, 100, 100))
    shifted = apply_domain_effects(gray, DomainSpec(color_shift=(10, -20, 200)), rng)
    assert (shifted.data == [110, 80, 255]).all()


def test_generate_scene():
    scene = SceneSpec(canvas=(64, 48), objects=(1, 4), size_range=(8, 16), overlap_limit=0.1)
    domain = DomainSpec()
    for seed in range(30):
        img, anns = generate_scene(scene, domain, np.random.default_rng(seed), image_id=seed)
        again, again_anns = generate_scene(
            scene, domain, np.random.default_rng(seed), image_id=seed
        )
        assert img == again
        assert anns == again_anns
        assert (img.width, img.height) == (64, 48)
        assert 1 <= len(anns) <= 4
        assert [a.ann_id for a in anns] == list(range(len(anns)))
        for i, ann in enumerate(anns):
            x, y, w, h = ann.bbox
            assert ann.image_id == seed
            assert ann.class_id in scene.class_ids
            assert x >= 0 and y >= 0 and x + w <= 64 and y + h <= 48
            region = img.data[int(y) : int(y + h), int(x) : int(x + w)]
            assert (region != [180, 180, 180]).any(axis=2).any()
            for other in anns[i + 1 :]:
                assert iou(ann.bbox, other.bbox) <= 0.1


def test_empty_scene():
    scene = SceneSpec(canvas=(16, 16), objects=(0, 0), size_range=(4, 8))
    img, anns = generate_scene(scene, DomainSpec(), np.random.default_rng(0))
    assert anns == []
    assert (img.data == 180).all()


def test_placement_error():
    scene = SceneSpec(canvas=(8, 8), objects=(2, 2), size_range=(8, 8), overlap_limit=0.0)
    with pytest.raises(PlacementError) as e:
        generate_scene(scene, DomainSpec(), np.random.default_rng(0))
    assert "object 2" in str(e.value)


def test_generate_dataset(tmp_path):
    scene = SceneSpec(canvas=(32, 32), objects=(1, 2), size_range=(8, 12))
    source = DomainSpec()
    target = DomainSpec.from_dict(GAP_PRESETS["default"])
    out = str(tmp_path / "one")
    messages = []
    paths = generate_dataset(
        3,
        scene,
        source,
        target,
        SPLIT,
        out,
        seed=5,
        log=lambda msg, level="info": messages.append(msg),
    )
    assert paths == (os.path.join(out, "source.json"), os.path.join(out, "target.json"))
    assert len(messages) == 2

    source_index = load_dataset(paths[0])
    target_index = load_dataset(paths[1])
    assert [r.image_id for r in source_index.images] == [1, 2, 3]
    assert [r.image_id for r in target_index.images] == [4, 5, 6]
    assert {r.domain for r in source_index.images} == {"source"}
    assert {r.domain for r in target_index.images} == {"target"}
    ann_ids = [a.ann_id for a in source_index.annotations + target_index.annotations]
    assert ann_ids == list(range(1, len(ann_ids) + 1))

    with open(os.path.join(out, "split.json")) as f:
        split = json.load(f)
    assert split["novel_class_ids"] == [5, 6]
    assert split["class_names"]["6"] == "diamond"

    threaded = str(tmp_path / "threaded")
    generate_dataset(3, scene, source, target, SPLIT, threaded, seed=5, threads=2)
    for name in ("source.json", "target.json", "images/target/000002.png"):
        with open(os.path.join(out, name), "rb") as a:
            with open(os.path.join(threaded, name), "rb") as b:
                assert a.read() == b.read()


def test_identical_domains_render_identical_scenes(tmp_path):
    scene = SceneSpec(canvas=(32, 32), objects=(1, 2), size_range=(8, 12))
    out = str(tmp_path)
    none = DomainSpec.from_dict(GAP_PRESETS["none"])
    generate_dataset(2, scene, DomainSpec(), none, SPLIT, out, seed=1)
    source = load_dataset(os.path.join(out, "source.json"))
    target = load_dataset(os.path.join(out, "target.json"))
    assert source.image(1) == target.image(3)
    assert [a.bbox for a in source.annotations] == [a.bbox for a in target.annotations]


def test_split_must_cover_scene_classes(tmp_path):
    scene = SceneSpec(canvas=(16, 16), objects=(1, 1), size_range=(4, 8), class_ids=[1, 2, 3])
    with pytest.raises(SplitError):
        generate_dataset(1, scene, DomainSpec(), DomainSpec(), SPLIT, str(tmp_path), seed=0)


def test_background_pool():
    pool = background_pool(5, 20, 10, np.random.default_rng(3))
    assert len(pool) == 5
    assert all((img.width, img.height) == (20, 10) for img in pool)
    again = background_pool(5, 20, 10, np.random.default_rng(3))
    assert pool == again
    assert background_pool(0, 20, 10, np.random.default_rng(3)) == []


def test_class_balance():
    scene = SceneSpec(canvas=(32, 32), objects=(1, 1), size_range=(8, 12))
    counts = dict.fromkeys(scene.class_ids, 0)
    n = 1200
    for seed in range(n):
        _, anns = generate_scene(scene, DomainSpec(), np.random.default_rng(seed))
        for ann in anns:
            counts[ann.class_id] += 1
    p = 1 / len(scene.class_ids)
    sigma = np.sqrt(n * p * (1 - p))
    for class_id, count in counts.items():
        print(class_id, count)
        assert abs(count - n * p) <= 3 * sigma
