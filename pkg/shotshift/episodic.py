"""
Dataset indexing, base/novel partitioning and the mixed domain episode
sampler.

A DatasetIndex is immutable once built.  DatasetView objects are filters
over an index (by class set and optionally by domain); they never copy
pixels.
"""
from __future__ import division

import os

from collections import namedtuple, OrderedDict
from functools import lru_cache
from math import isfinite

from shotshift.constants import DOMAINS, SUPPORT_MIX_MODES
from shotshift.exceptions import AnnotationError, ConfigError, SamplingError, SplitError
from shotshift.imaging import ImageRGB, crop_support
from shotshift.storage import read_json, write_json


Annotation = namedtuple("Annotation", "bbox class_id image_id ann_id")
Annotation.__new__.__defaults__ = (None,)

ImageRecord = namedtuple("ImageRecord", "image_id file_name width height domain")

SupportRef = namedtuple("SupportRef", "annotation domain")
Support = namedtuple("Support", "image annotation domain")

EpisodePlan = namedtuple(
    "EpisodePlan",
    "query_image_id query_domain positive_class negative_class "
    "positive_supports negative_supports",
)

Episode = namedtuple(
    "Episode",
    "query query_annotations query_image_id query_domain positive_class "
    "negative_class positive_supports negative_supports",
)


@lru_cache(maxsize=4096)
def _read_image(path):
    return ImageRGB.load(path)


def _clip_bbox(bbox, width, height):
    try:
        x, y, w, h = (float(v) for v in bbox)
    except (TypeError, ValueError):
        return None
    if not all(isfinite(v) for v in (x, y, w, h)) or w <= 0 or h <= 0:
        return None
    x0, y0 = max(x, 0.0), max(y, 0.0)
    x1, y1 = min(x + w, float(width)), min(y + h, float(height))
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


class DatasetIndex:
    """
    Images (with domain tags), their annotations and the class table.

    Annotations are ordered by image id and keep the file order within an
    image.  Boxes are clipped to their image.  Pixels come either from
    files under image_root (or explicit per-image paths) or from an in
    memory mapping image_id -> ImageRGB.
    """

    def __init__(
        self, images, annotations, class_table, image_root="", paths=None, pixels=None
    ):
        self.class_table = OrderedDict(
            (int(k), str(v)) for k, v in sorted(class_table.items())
        )
        self.image_root = image_root or ""
        self._records = OrderedDict()
        for record in sorted(images, key=lambda r: r.image_id):
            if record.image_id in self._records:
                raise AnnotationError(
                    "duplicate image id {}".format(record.image_id),
                    image_id=record.image_id,
                )
            if record.domain not in DOMAINS:
                raise AnnotationError(
                    "image {} has domain {!r}, expected one of {}".format(
                        record.image_id, record.domain, DOMAINS
                    ),
                    image_id=record.image_id,
                )
            if record.width < 1 or record.height < 1:
                raise AnnotationError(
                    "image {} has no pixels".format(record.image_id),
                    image_id=record.image_id,
                )
            self._records[record.image_id] = record
        by_image = OrderedDict((image_id, []) for image_id in self._records)
        for ann in annotations:
            record = self._records.get(ann.image_id)
            if record is None:
                raise AnnotationError(
                    "annotation {} references unknown image id {}".format(
                        ann.ann_id, ann.image_id
                    ),
                    image_id=ann.image_id,
                )
            if ann.class_id not in self.class_table:
                raise AnnotationError(
                    "annotation {} references unknown class id {}".format(
                        ann.ann_id, ann.class_id
                    ),
                    image_id=ann.image_id,
                    class_id=ann.class_id,
                )
            bbox = _clip_bbox(ann.bbox, record.width, record.height)
            if bbox is None:
                raise AnnotationError(
                    "annotation {} on image {} has malformed box {}".format(
                        ann.ann_id, ann.image_id, ann.bbox
                    ),
                    image_id=ann.image_id,
                    class_id=ann.class_id,
                )
            by_image[ann.image_id].append(ann._replace(bbox=bbox))
        self._by_image = OrderedDict((k, tuple(v)) for k, v in by_image.items())
        self._paths = dict(paths or {})
        self._pixels = dict(pixels or {})

    @property
    def images(self):
        return tuple(self._records.values())

    @property
    def annotations(self):
        return tuple(a for anns in self._by_image.values() for a in anns)

    @property
    def image_ids(self):
        return tuple(self._records)

    def record(self, image_id):
        try:
            return self._records[image_id]
        except KeyError:
            raise AnnotationError("unknown image id {}".format(image_id), image_id=image_id)

    def annotations_for(self, image_id):
        return self._by_image.get(image_id, ())

    def path(self, image_id):
        if image_id in self._paths:
            return self._paths[image_id]
        return os.path.join(self.image_root, self.record(image_id).file_name)

    def image(self, image_id):
        if image_id in self._pixels:
            return self._pixels[image_id]
        return _read_image(self.path(image_id))

    def to_dict(self):
        return {
            "images": [
                {
                    "id": r.image_id,
                    "file_name": r.file_name,
                    "width": r.width,
                    "height": r.height,
                    "domain": r.domain,
                }
                for r in self.images
            ],
            "annotations": [
                {
                    "id": a.ann_id,
                    "image_id": a.image_id,
                    "category_id": a.class_id,
                    "bbox": list(a.bbox),
                }
                for a in self.annotations
            ],
            "categories": [
                {"id": k, "name": v} for k, v in self.class_table.items()
            ],
        }

    def save(self, path):
        return write_json(path, self.to_dict())

    def __len__(self):
        return len(self._records)

    def __repr__(self):
        return "<DatasetIndex {} images, {} annotations>".format(
            len(self._records), sum(len(a) for a in self._by_image.values())
        )


def _field(entry, key, kind, where):
    try:
        return entry[key]
    except (KeyError, TypeError):
        raise AnnotationError("{} entry {!r} lacks `{}`".format(kind, where, key))


def _int_field(entry, key, kind, where):
    value = _field(entry, key, kind, where)
    try:
        return int(value)
    except (TypeError, ValueError, OverflowError):
        raise AnnotationError(
            "{} entry {!r} has non-integer `{}`: {!r}".format(kind, where, key, value)
        )


def index_from_dict(data, image_root="", check_files=True):
    """
    Build a DatasetIndex from the parsed annotation JSON.
    """
    if not isinstance(data, dict):
        raise AnnotationError("annotation file must hold a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise AnnotationError("annotation file lacks a `{}` list".format(key))
    class_table = {}
    for i, entry in enumerate(data["categories"]):
        class_table[_int_field(entry, "id", "category", i)] = str(
            _field(entry, "name", "category", i)
        )
    images = []
    for i, entry in enumerate(data["images"]):
        record = ImageRecord(
            _int_field(entry, "id", "image", i),
            str(_field(entry, "file_name", "image", i)),
            _int_field(entry, "width", "image", i),
            _int_field(entry, "height", "image", i),
            _field(entry, "domain", "image", i),
        )
        if check_files:
            path = os.path.join(image_root, record.file_name)
            if not os.path.isfile(path):
                raise AnnotationError(
                    "image {} is missing: {}".format(record.image_id, path),
                    image_id=record.image_id,
                )
        images.append(record)
    annotations = []
    for i, entry in enumerate(data["annotations"]):
        bbox = _field(entry, "bbox", "annotation", i)
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise AnnotationError(
                "annotation {} has malformed box {!r}".format(entry.get("id", i), bbox),
                image_id=entry.get("image_id"),
            )
        annotations.append(
            Annotation(
                tuple(bbox),
                _int_field(entry, "category_id", "annotation", i),
                _int_field(entry, "image_id", "annotation", i),
                _int_field(entry, "id", "annotation", i) if "id" in entry else i,
            )
        )
    return DatasetIndex(images, annotations, class_table, image_root)


def load_dataset(annotation_path, image_root=None, check_files=True):
    """
    Load and validate an annotation file.  Image paths are relative to
    image_root, by default the directory holding the annotation file.
    """
    if image_root is None or image_root == "":
        image_root = os.path.dirname(os.path.abspath(annotation_path))
    return index_from_dict(read_json(annotation_path), image_root, check_files)


def merge_indexes(indexes):
    """
    Union of several indexes with disjoint image ids and agreeing class
    tables, e.g. a source and a target dataset.
    """
    indexes = list(indexes)
    if not indexes:
        raise AnnotationError("nothing to merge")
    class_table = OrderedDict()
    images, annotations, paths, pixels = [], [], {}, {}
    seen = set()
    for index in indexes:
        for class_id, name in index.class_table.items():
            if class_table.setdefault(class_id, name) != name:
                raise AnnotationError(
                    "class {} is named both {!r} and {!r}".format(
                        class_id, class_table[class_id], name
                    ),
                    class_id=class_id,
                )
        for record in index.images:
            if record.image_id in seen:
                raise AnnotationError(
                    "image id {} appears in more than one index".format(
                        record.image_id
                    ),
                    image_id=record.image_id,
                )
            seen.add(record.image_id)
            images.append(record)
            if record.image_id in index._pixels:
                pixels[record.image_id] = index._pixels[record.image_id]
            else:
                paths[record.image_id] = index.path(record.image_id)
        annotations.extend(index.annotations)
    return DatasetIndex(images, annotations, class_table, "", paths=paths, pixels=pixels)


class SplitConfig:
    """
    Disjoint, non-empty base and novel class id sets.
    """

    def __init__(self, base_class_ids, novel_class_ids, name=None):
        try:
            self.base_class_ids = frozenset(int(c) for c in base_class_ids)
            self.novel_class_ids = frozenset(int(c) for c in novel_class_ids)
        except (TypeError, ValueError):
            raise SplitError("class ids must be integers")
        if not self.base_class_ids or not self.novel_class_ids:
            raise SplitError("base and novel class sets must both be non-empty")
        overlap = self.base_class_ids & self.novel_class_ids
        if overlap:
            raise SplitError(
                "classes {} are both base and novel".format(sorted(overlap))
            )
        self.name = name

    @property
    def class_ids(self):
        return self.base_class_ids | self.novel_class_ids

    def validate(self, class_table):
        unknown = sorted(self.class_ids - set(class_table))
        if unknown:
            raise SplitError("split references unknown class ids {}".format(unknown))
        return self

    def to_dict(self):
        data = {
            "base_class_ids": sorted(self.base_class_ids),
            "novel_class_ids": sorted(self.novel_class_ids),
        }
        if self.name:
            data["name"] = self.name
        return data

    def __repr__(self):
        return "SplitConfig(base={}, novel={})".format(
            sorted(self.base_class_ids), sorted(self.novel_class_ids)
        )


SPLIT_KEYS = ("name", "comment", "base_class_ids", "novel_class_ids", "class_names")


def load_split(path):
    data = read_json(path)
    if not isinstance(data, dict):
        raise SplitError("split file {} must hold a JSON object".format(path))
    for key in data:
        if key not in SPLIT_KEYS:
            raise SplitError("unknown split key `{}` in {}".format(key, path), key=key)
    for key in ("base_class_ids", "novel_class_ids"):
        if key not in data:
            raise SplitError("split file {} lacks `{}`".format(path, key), key=key)
    return SplitConfig(data["base_class_ids"], data["novel_class_ids"], data.get("name"))


class DatasetView:
    """
    Images holding at least one annotation of the given classes (and of
    the given domain), exposing only those annotations.
    """

    def __init__(self, index, class_ids, domain=None):
        if domain is not None and domain not in DOMAINS:
            raise ConfigError("unknown domain {!r}".format(domain), value=domain)
        self.index = index
        self.class_ids = frozenset(class_ids)
        self.domain = domain
        self._anns = OrderedDict()
        for record in index.images:
            if domain is not None and record.domain != domain:
                continue
            anns = tuple(
                a
                for a in index.annotations_for(record.image_id)
                if a.class_id in self.class_ids
            )
            if anns:
                self._anns[record.image_id] = anns
        self._tables = {}

    @property
    def image_ids(self):
        return tuple(self._anns)

    @property
    def annotations(self):
        return tuple(a for anns in self._anns.values() for a in anns)

    @property
    def present_classes(self):
        return sorted({a.class_id for anns in self._anns.values() for a in anns})

    def annotations_for(self, image_id):
        return self._anns.get(image_id, ())

    def domain_of(self, image_id):
        return self.index.record(image_id).domain

    def image(self, image_id):
        return self.index.image(image_id)

    def instances(self, class_id, domain=None):
        return tuple(
            a
            for image_id, anns in self._anns.items()
            if domain is None or self.domain_of(image_id) == domain
            for a in anns
            if a.class_id == class_id
        )

    def restrict_domain(self, domain):
        return DatasetView(self.index, self.class_ids, domain)

    def __len__(self):
        return len(self._anns)

    def __repr__(self):
        return "<DatasetView classes={} domain={} images={}>".format(
            sorted(self.class_ids), self.domain, len(self._anns)
        )


def partition(index, split):
    """
    (base_view, novel_view) over the index.  Images holding both base and
    novel objects appear in both views with filtered annotations.
    """
    split.validate(index.class_table)
    return (
        DatasetView(index, split.base_class_ids),
        DatasetView(index, split.novel_class_ids),
    )


class MDTSPolicy:
    """
    Where episode queries and supports come from.

    ``query_target_prob``: chance of drawing the query from the target domain

    ``support_mix_mode``: source_only, target_only, single_random_domain
    (one domain for all supports of an episode) or mixed (each support on
    its own)

    ``few_shot_target_budget``: distinct target images usable per class
    """

    def __init__(
        self,
        query_target_prob=0.0,
        support_mix_mode="source_only",
        few_shot_target_budget=0,
    ):
        if not 0 <= query_target_prob <= 1:
            raise ConfigError(
                "probability must be in [0, 1]",
                key="mdts.query_target_prob",
                value=query_target_prob,
            )
        if support_mix_mode not in SUPPORT_MIX_MODES:
            raise ConfigError(
                "support mix mode must be one of {}".format(SUPPORT_MIX_MODES),
                key="mdts.support_mix_mode",
                value=support_mix_mode,
            )
        if int(few_shot_target_budget) != few_shot_target_budget or few_shot_target_budget < 0:
            raise ConfigError(
                "budget must be a non-negative integer",
                key="mdts.few_shot_target_budget",
                value=few_shot_target_budget,
            )
        self.query_target_prob = float(query_target_prob)
        self.support_mix_mode = support_mix_mode
        self.few_shot_target_budget = int(few_shot_target_budget)

    @classmethod
    def from_config(cls, section):
        return cls(
            section["query_target_prob"],
            section["support_mix_mode"],
            section["few_shot_target_budget"],
        )

    def to_dict(self):
        return {
            "query_target_prob": self.query_target_prob,
            "support_mix_mode": self.support_mix_mode,
            "few_shot_target_budget": self.few_shot_target_budget,
        }

    def __repr__(self):
        return (
            "MDTSPolicy({query_target_prob}, {support_mix_mode}, "
            "{few_shot_target_budget})".format(**self.to_dict())
        )


class _EpisodeTables:
    """
    Per view and budget lookup tables: which images may serve as queries,
    which classes each query may use as positive, and the support pools.
    Target images count against the budget of a class by image id, the
    lowest ids being the ones admitted.
    """

    def __init__(self, view, budget):
        classes = view.present_classes
        allowed = {}
        for class_id in classes:
            images = [
                image_id
                for image_id in view.image_ids
                if view.domain_of(image_id) == "target"
                and any(a.class_id == class_id for a in view.annotations_for(image_id))
            ]
            allowed[class_id] = frozenset(images[:budget])
        self.pools = {}
        self.per_image = {}
        for class_id in classes:
            for domain in DOMAINS:
                pool = tuple(
                    a
                    for a in view.instances(class_id, domain)
                    if domain == "source" or a.image_id in allowed[class_id]
                )
                counts = {}
                for a in pool:
                    counts[a.image_id] = counts.get(a.image_id, 0) + 1
                self.pools[(domain, class_id)] = pool
                self.per_image[(domain, class_id)] = counts
        self.queries = {domain: [] for domain in DOMAINS}
        self.query_classes = {}
        for image_id in view.image_ids:
            domain = view.domain_of(image_id)
            present = sorted({a.class_id for a in view.annotations_for(image_id)})
            if domain == "target":
                present = [c for c in present if image_id in allowed[c]]
            if present:
                self.queries[domain].append(image_id)
                self.query_classes[image_id] = present
        self.classes = classes

    def available(self, domain, class_id, exclude_image):
        pool = self.pools[(domain, class_id)]
        return len(pool) - self.per_image[(domain, class_id)].get(exclude_image, 0)


def _tables(view, budget):
    tables = view._tables.get(budget)
    if tables is None:
        tables = view._tables[budget] = _EpisodeTables(view, budget)
    return tables


def _take(pool, n, exclude_image, rng):
    if n == 0:
        return []
    out = []
    for i in rng.permutation(len(pool)):
        ann = pool[i]
        if ann.image_id != exclude_image:
            out.append(ann)
            if len(out) == n:
                break
    return out


def _draw_supports(tables, class_id, shots, mode, episode_domain, exclude_image, rng):
    if mode == "source_only":
        n_target = 0
    elif mode == "target_only":
        n_target = shots
    elif mode == "single_random_domain":
        n_target = shots if episode_domain == "target" else 0
    else:
        n_target = int((rng.random(shots) < 0.5).sum())
    n_source = shots - n_target
    avail_source = tables.available("source", class_id, exclude_image)
    avail_target = tables.available("target", class_id, exclude_image)
    if mode in ("single_random_domain", "mixed"):
        if n_target > avail_target:
            n_source += n_target - avail_target
            n_target = avail_target
        if n_source > avail_source:
            n_target += n_source - avail_source
            n_source = avail_source
    if n_source > avail_source or n_target > avail_target:
        raise SamplingError(
            "cannot assemble {} supports for class {} ({} source and {} target "
            "instances usable)".format(shots, class_id, avail_source, avail_target),
            class_ids=[class_id],
        )
    source = _take(tables.pools[("source", class_id)], n_source, exclude_image, rng)
    target = _take(tables.pools[("target", class_id)], n_target, exclude_image, rng)
    return tuple(SupportRef(a, "source") for a in source) + tuple(
        SupportRef(a, "target") for a in target
    )


def plan_episode(view, policy, shots, rng):
    """
    Choose query image, positive and negative class and the support
    instances of an episode, without touching pixels.
    """
    if shots < 1:
        raise SamplingError("an episode needs at least one shot")
    tables = _tables(view, policy.few_shot_target_budget)
    if len(tables.classes) < 2:
        raise SamplingError(
            "episodes need at least two classes, view has {}".format(tables.classes),
            class_ids=tables.classes,
        )
    domain = "target" if rng.random() < policy.query_target_prob else "source"
    if not tables.queries[domain]:
        domain = "source" if domain == "target" else "target"
        if not tables.queries[domain]:
            raise SamplingError("view has no usable query image")
    queries = tables.queries[domain]
    query_id = queries[rng.integers(len(queries))]
    candidates = tables.query_classes[query_id]
    positive = candidates[rng.integers(len(candidates))]
    negatives = [c for c in tables.classes if c != positive]
    negative = negatives[rng.integers(len(negatives))]
    episode_domain = None
    if policy.support_mix_mode == "single_random_domain":
        episode_domain = "target" if rng.random() < 0.5 else "source"
    mode = policy.support_mix_mode
    return EpisodePlan(
        query_id,
        domain,
        positive,
        negative,
        _draw_supports(tables, positive, shots, mode, episode_domain, query_id, rng),
        _draw_supports(tables, negative, shots, mode, episode_domain, query_id, rng),
    )


def crop_supports(view, refs, context_px, support_size):
    return tuple(
        Support(
            crop_support(
                view.image(ref.annotation.image_id),
                ref.annotation,
                context_px,
                support_size,
            ),
            ref.annotation,
            ref.domain,
        )
        for ref in refs
    )


def sample_episode(view, policy, shots, support_size, rng, context_px=2):
    plan = plan_episode(view, policy, shots, rng)
    query_annotations = tuple(
        a
        for a in view.annotations_for(plan.query_image_id)
        if a.class_id == plan.positive_class
    )
    return Episode(
        view.image(plan.query_image_id),
        query_annotations,
        plan.query_image_id,
        plan.query_domain,
        plan.positive_class,
        plan.negative_class,
        crop_supports(view, plan.positive_supports, context_px, support_size),
        crop_supports(view, plan.negative_supports, context_px, support_size),
    )


class FewShotSet:
    """
    The frozen K-shot support instances per class used for meta-testing
    and reused at inference.
    """

    def __init__(self, view, shots, supports):
        self.view = view
        self.shots = shots
        self.supports = OrderedDict(sorted(supports.items()))

    @property
    def class_ids(self):
        return list(self.supports)

    def patches(self, class_id, context_px, support_size):
        return [
            s.image
            for s in crop_supports(
                self.view,
                [SupportRef(a, self.view.domain_of(a.image_id)) for a in self.supports[class_id]],
                context_px,
                support_size,
            )
        ]

    def to_dict(self):
        return {
            "shots": self.shots,
            "classes": {
                str(class_id): [
                    {"image_id": a.image_id, "ann_id": a.ann_id, "bbox": list(a.bbox)}
                    for a in anns
                ]
                for class_id, anns in self.supports.items()
            },
        }


def enumerate_fewshot(view, shots, rng, domain="source"):
    """
    Seeded selection of exactly `shots` instances per class: a permutation
    is drawn for every class in class id order and its prefix kept, so a
    smaller K selects a prefix of a larger one.
    """
    if shots < 1:
        raise SamplingError("few-shot sets need at least one shot")
    supports = OrderedDict()
    deficient = []
    for class_id in sorted(view.class_ids):
        pool = view.instances(class_id, domain)
        order = rng.permutation(len(pool))
        if len(pool) < shots:
            deficient.append(class_id)
            continue
        supports[class_id] = tuple(pool[i] for i in order[:shots])
    if deficient:
        raise SamplingError(
            "classes {} have fewer than {} {} instances".format(deficient, shots, domain),
            class_ids=deficient,
        )
    return FewShotSet(view, shots, supports)
