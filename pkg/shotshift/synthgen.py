"""
Synthetic shape scenes with a controllable domain gap.

A scene is a background plus a few filled shapes (one class per shape
kind).  A DomainSpec decides how the scene is rendered: background kind
and colors, then post-effects applied in the order color shift,
illumination gradient, blur, noise.  Geometry never depends on the
post-effects, so annotations are exact shape extents.

Each image gets its own random stream seeded from (seed ^ image index,
digest of the DomainSpec): images are independent of thread count, two
identical specs render identical datasets and different specs give
unpaired scene draws.
"""
from __future__ import division

import colorsys
import hashlib
import json
import os

from concurrent.futures import ThreadPoolExecutor
from math import ceil, cos, radians, sin

import numpy as np
from PIL import Image, ImageDraw

from shotshift.constants import SHAPES
from shotshift.episodic import Annotation, DatasetIndex, ImageRecord
from shotshift.exceptions import ConfigError, PlacementError, SplitError
from shotshift.imaging import ImageRGB, add_gaussian_noise, gaussian_blur, resize_array
from shotshift.metrics import iou
from shotshift.storage import write_json
from shotshift.util import as_rgb, rgb_2_hex

BACKGROUNDS = ("flat", "checker", "noise")

MAX_REJECTIONS = 1000


class DomainSpec:
    def __init__(
        self,
        background="flat",
        colors=("#B4B4B4",),
        cell=8,
        color_shift=(0, 0, 0),
        noise_sigma=0.0,
        illumination=(0.0, 0.0),
        blur_sigma=0.0,
    ):
        if background not in BACKGROUNDS:
            raise ConfigError(
                "background must be one of {}".format(BACKGROUNDS), value=background
            )
        self.colors = tuple(as_rgb(c) for c in colors)
        if len(self.colors) < (1 if background == "flat" else 2):
            raise ConfigError("{} background needs more colors".format(background))
        if int(cell) < 1:
            raise ConfigError("cell size must be positive", value=cell)
        shift = tuple(int(v) for v in color_shift)
        if len(shift) != 3 or any(abs(v) > 255 for v in shift):
            raise ConfigError("color shift needs 3 offsets in [-255, 255]", value=color_shift)
        angle, strength = (float(v) for v in illumination)
        if not 0 <= strength < 1:
            raise ConfigError("illumination strength must be in [0, 1)", value=strength)
        if noise_sigma < 0 or blur_sigma < 0:
            raise ConfigError("noise and blur sigma must be non-negative")
        self.background = background
        self.cell = int(cell)
        self.color_shift = shift
        self.noise_sigma = float(noise_sigma)
        self.illumination = (angle, strength)
        self.blur_sigma = float(blur_sigma)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError("bad domain spec: {}".format(e))

    def to_dict(self):
        return {
            "background": self.background,
            "colors": [rgb_2_hex(*c) for c in self.colors],
            "cell": self.cell,
            "color_shift": list(self.color_shift),
            "noise_sigma": self.noise_sigma,
            "illumination": list(self.illumination),
            "blur_sigma": self.blur_sigma,
        }

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return int(hashlib.sha256(text.encode("utf-8")).hexdigest()[:16], 16)

    def __eq__(self, other):
        return isinstance(other, DomainSpec) and self.to_dict() == other.to_dict()

    __hash__ = None

    def __repr__(self):
        return "DomainSpec({})".format(self.to_dict())


class SceneSpec:
    def __init__(
        self,
        canvas=(64, 64),
        objects=(1, 3),
        class_ids=None,
        size_range=(14, 24),
        overlap_limit=0.1,
    ):
        width, height = (int(v) for v in canvas)
        lo, hi = (int(v) for v in objects)
        smin, smax = (int(v) for v in size_range)
        if width < 8 or height < 8:
            raise ConfigError("canvas must be at least 8x8", key="synthgen.canvas", value=canvas)
        if not 0 <= lo <= hi:
            raise ConfigError("invalid object count range", key="synthgen.objects", value=objects)
        if not 4 <= smin <= smax <= min(width, height):
            raise ConfigError(
                "object sizes must fit the canvas", key="synthgen.size_range", value=size_range
            )
        if not 0 <= overlap_limit <= 1:
            raise ConfigError(
                "overlap limit must be in [0, 1]",
                key="synthgen.overlap_limit",
                value=overlap_limit,
            )
        self.class_ids = tuple(class_ids or range(1, len(SHAPES) + 1))
        for class_id in self.class_ids:
            if not 1 <= class_id <= len(SHAPES):
                raise ConfigError("no shape for class id {}".format(class_id))
        self.width, self.height = width, height
        self.objects = (lo, hi)
        self.size_range = (smin, smax)
        self.overlap_limit = float(overlap_limit)

    @property
    def class_table(self):
        return {class_id: SHAPES[class_id - 1] for class_id in self.class_ids}


def render_background(domain, width, height, rng):
    """
    float (height, width, 3) background of the domain.
    """
    colors = np.array(domain.colors, dtype=np.float64)
    if domain.background == "flat":
        out = np.empty((height, width, 3))
        out[...] = colors[0]
        return out
    if domain.background == "checker":
        ys, xs = np.mgrid[0:height, 0:width]
        parity = ((ys // domain.cell) + (xs // domain.cell)) % 2
        return colors[parity]
    grid = rng.random((height // domain.cell + 2, width // domain.cell + 2, 1))
    t = resize_array(grid, height, width)
    return colors[0] * (1.0 - t) + colors[1] * t


def shape_mask(kind, size):
    """
    Boolean (size, size) mask of a shape drawn with Pillow.
    """
    mask = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(mask)
    last = size - 1
    half = last / 2
    if kind == "disc":
        draw.ellipse([0, 0, last, last], fill=255)
    elif kind == "square":
        draw.rectangle([0, 0, last, last], fill=255)
    elif kind == "triangle":
        draw.polygon([(half, 0), (last, last), (0, last)], fill=255)
    elif kind == "ring":
        draw.ellipse([0, 0, last, last], outline=255, width=max(2, size // 5))
    elif kind == "cross":
        third = size / 3
        draw.rectangle([0, third, last, last - third], fill=255)
        draw.rectangle([third, 0, last - third, last], fill=255)
    elif kind == "diamond":
        draw.polygon([(half, 0), (last, half), (half, last), (0, half)], fill=255)
    else:
        raise ConfigError("unknown shape {!r}".format(kind))
    return np.array(mask) > 0


def _fill_color(rng):
    r, g, b = colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0))
    return np.array([r, g, b]) * 255.0


def _illuminate(arr, angle, strength):
    height, width = arr.shape[:2]
    ys, xs = np.mgrid[0:height, 0:width]
    u = (xs / max(width - 1, 1) - 0.5) * cos(radians(angle)) + (
        ys / max(height - 1, 1) - 0.5
    ) * sin(radians(angle))
    return arr * np.maximum(1.0 + 2.0 * strength * u, 0.0)[..., None]


def apply_domain_effects(img, domain, rng):
    """
    Post-effects in order: color shift, illumination, blur, noise.
    """
    arr = img.data.astype(np.float64)
    if any(domain.color_shift):
        arr = arr + np.array(domain.color_shift, dtype=np.float64)
    angle, strength = domain.illumination
    if strength > 0:
        arr = _illuminate(arr, angle, strength)
    img = ImageRGB(np.clip(np.rint(arr), 0, 255).astype(np.uint8))
    if domain.blur_sigma > 0:
        img = gaussian_blur(img, domain.blur_sigma, 2 * int(ceil(3 * domain.blur_sigma)) + 1)
    if domain.noise_sigma > 0:
        img = add_gaussian_noise(img, domain.noise_sigma, rng)
    return img


def generate_scene(scene, domain, rng, image_id=0):
    """
    Render one scene.  Returns (ImageRGB, annotations).
    """
    canvas = render_background(domain, scene.width, scene.height, rng)
    anns = []
    count = int(rng.integers(scene.objects[0], scene.objects[1] + 1))
    smin, smax = scene.size_range
    for k in range(count):
        class_id = scene.class_ids[rng.integers(len(scene.class_ids))]
        for _ in range(MAX_REJECTIONS):
            size = int(rng.integers(smin, smax + 1))
            x = int(rng.integers(0, scene.width - size + 1))
            y = int(rng.integers(0, scene.height - size + 1))
            mask = shape_mask(SHAPES[class_id - 1], size)
            rows = np.flatnonzero(mask.any(axis=1))
            cols = np.flatnonzero(mask.any(axis=0))
            bbox = (
                float(x + cols[0]),
                float(y + rows[0]),
                float(cols[-1] - cols[0] + 1),
                float(rows[-1] - rows[0] + 1),
            )
            if all(iou(bbox, a.bbox) <= scene.overlap_limit for a in anns):
                break
        else:
            raise PlacementError(
                "could not place object {} after {} attempts, use smaller objects "
                "or fewer per scene".format(k + 1, MAX_REJECTIONS)
            )
        region = canvas[y : y + size, x : x + size]
        region[mask] = _fill_color(rng)
        anns.append(Annotation(bbox, int(class_id), image_id, k))
    img = ImageRGB(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    return apply_domain_effects(img, domain, rng), anns


def _scene_rng(seed, index, digest):
    return np.random.default_rng(np.random.SeedSequence([seed ^ index, digest]))


def generate_dataset(
    n_images, scene, source_domain, target_domain, split, out_dir, seed, threads=1, log=None
):
    """
    Write images/<domain>/NNNNNN.png, source.json, target.json and
    split.json under out_dir.  Target image ids follow the source ones.
    Returns the paths of the two annotation files.
    """
    if split.class_ids != set(scene.class_ids):
        raise SplitError(
            "split covers classes {}, scenes use {}".format(
                sorted(split.class_ids), sorted(scene.class_ids)
            )
        )
    class_table = scene.class_table
    paths = []
    next_ann = 1
    for name, domain, offset in (
        ("source", source_domain, 0),
        ("target", target_domain, n_images),
    ):
        digest = domain.digest()
        folder = os.path.join(out_dir, "images", name)
        if not os.path.isdir(folder):
            os.makedirs(folder)

        def render(index, domain=domain, digest=digest):
            return generate_scene(scene, domain, _scene_rng(seed, index, digest))

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                scenes = list(executor.map(render, range(n_images)))
        else:
            scenes = [render(index) for index in range(n_images)]
        records = []
        annotations = []
        for index, (img, anns) in enumerate(scenes):
            image_id = offset + index + 1
            file_name = "images/{}/{:06d}.png".format(name, index)
            img.save(os.path.join(out_dir, file_name))
            records.append(ImageRecord(image_id, file_name, scene.width, scene.height, name))
            for ann in anns:
                annotations.append(ann._replace(image_id=image_id, ann_id=next_ann))
                next_ann += 1
        index = DatasetIndex(records, annotations, class_table, out_dir)
        path = index.save(os.path.join(out_dir, "{}.json".format(name)))
        paths.append(path)
        if log:
            log(
                "synthgen: {} {} images, {} objects".format(
                    len(records), name, len(annotations)
                )
            )
    split_data = split.to_dict()
    split_data["class_names"] = {str(k): v for k, v in class_table.items()}
    write_json(os.path.join(out_dir, "split.json"), split_data)
    return tuple(paths)


def background_pool(n, width, height, rng):
    """
    Procedural clutter images (random flat, checker or noise backgrounds
    in random colors) for background augmentation.
    """
    pool = []
    for _ in range(n):
        kind = BACKGROUNDS[rng.integers(len(BACKGROUNDS))]
        colors = [rgb_2_hex(*rng.integers(0, 256, size=3)) for _ in range(2)]
        domain = DomainSpec(kind, colors, cell=int(rng.integers(2, 12)))
        arr = render_background(domain, width, height, rng)
        pool.append(ImageRGB(np.clip(np.rint(arr), 0, 255).astype(np.uint8)))
    return pool
