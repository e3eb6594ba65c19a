"""
Raster type and the pixel-level domain randomization augmentations.

Every operation takes an ImageRGB and returns a new one of the same size;
randomness always comes from a numpy Generator handed in by the caller, so
a fixed seed gives bit-identical output.  Quantization back to 8 bits is
done once per operation with round-half-to-even and clamping to [0, 255].
"""
from __future__ import division

from collections import namedtuple
from math import ceil, floor

import numpy as np
from PIL import Image

from shotshift.constants import LUMA_WEIGHTS
from shotshift.exceptions import ConfigError, ImageError

STAGE_ORDER = ("jitter", "blur", "noise", "background")

_LUMA = np.array(LUMA_WEIGHTS, dtype=np.float64)


class ImageRGB:
    """
    8-bit three channel raster stored row-major with interleaved RGB
    samples, i.e. a (height, width, 3) uint8 array.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ImageError("expected a (height, width, 3) raster, got {}".format(data.shape))
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageError("raster must be at least 1x1")
        if data.dtype != np.uint8:
            if data.dtype.kind not in "iu":
                raise ImageError("raster samples must be integers, got {}".format(data.dtype))
            if data.size and (data.min() < 0 or data.max() > 255):
                raise ImageError("raster samples must lie in [0, 255]")
        self.data = np.ascontiguousarray(data, dtype=np.uint8)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @classmethod
    def blank(cls, width, height, color=(0, 0, 0)):
        data = np.empty((height, width, 3), dtype=np.uint8)
        data[...] = np.asarray(color, dtype=np.uint8)
        return cls(data)

    @classmethod
    def load(cls, path):
        """
        Read a PNG (or anything Pillow reads) as 8-bit RGB.
        """
        try:
            with Image.open(path) as im:
                return cls(np.array(im.convert("RGB")))
        except (IOError, OSError) as e:
            raise ImageError("cannot read image {}: {}".format(path, e))

    def save(self, path):
        Image.fromarray(self.data, "RGB").save(path, format="PNG")

    def copy(self):
        return ImageRGB(self.data.copy())

    def tobytes(self):
        return self.data.tobytes()

    def __eq__(self, other):
        if not isinstance(other, ImageRGB):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(
            self.data, other.data
        )

    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result

    __hash__ = None

    def __repr__(self):
        return "<ImageRGB {}x{}>".format(self.width, self.height)


def _quantize(arr):
    return ImageRGB(np.clip(np.rint(arr), 0, 255).astype(np.uint8))


def _floats(img):
    return img.data.astype(np.float64)


class JitterParams:
    """
    Ranges for color jittering.  Each call draws a brightness delta in
    [-b, b] (fraction of full scale), contrast and saturation factors in
    [1-c, 1+c] and [1-s, 1+s], and a hue rotation in [-h, h] degrees.
    """

    def __init__(self, brightness=0.4, contrast=0.4, saturation=0.4, hue=18.0):
        for name, value in (
            ("brightness", brightness),
            ("contrast", contrast),
            ("saturation", saturation),
        ):
            if not 0 <= value < 1:
                raise ConfigError(
                    "{} range must be in [0, 1)".format(name),
                    key="augmentation.{}".format(name),
                    value=value,
                )
        if not 0 <= hue < 180:
            raise ConfigError(
                "hue range must be in [0, 180)", key="augmentation.hue", value=hue
            )
        self.brightness = float(brightness)
        self.contrast = float(contrast)
        self.saturation = float(saturation)
        self.hue = float(hue)

    def draw(self, rng):
        """
        Draw (brightness_delta, contrast_factor, saturation_factor,
        hue_delta).  All four values are always drawn.
        """
        return (
            rng.uniform(-self.brightness, self.brightness),
            rng.uniform(1 - self.contrast, 1 + self.contrast),
            rng.uniform(1 - self.saturation, 1 + self.saturation),
            rng.uniform(-self.hue, self.hue),
        )

    def __repr__(self):
        return "JitterParams(b={}, c={}, s={}, h={})".format(
            self.brightness, self.contrast, self.saturation, self.hue
        )


def adjust_brightness(img, delta):
    """
    Additive brightness: every sample moves by delta * 255.
    """
    if delta == 0:
        return img.copy()
    return _quantize(_floats(img) + delta * 255.0)


def adjust_contrast(img, factor):
    """
    Scale every sample around the mean luma of the whole image.
    """
    if factor == 1:
        return img.copy()
    x = _floats(img)
    mean = float((x @ _LUMA).mean())
    return _quantize(mean + factor * (x - mean))


def adjust_saturation(img, factor):
    """
    Interpolate each pixel toward its own luma; factor 0 gives grayscale.
    """
    if factor == 1:
        return img.copy()
    x = _floats(img)
    luma = (x @ _LUMA)[..., None]
    return _quantize(luma + factor * (x - luma))


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return h, s, maxc


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def adjust_hue(img, degrees):
    """
    Rotate hue by the given number of degrees in HSV space.
    """
    if degrees % 360 == 0:
        return img.copy()
    h, s, v = _rgb_to_hsv(_floats(img) / 255.0)
    h = (h + degrees / 360.0) % 1.0
    return _quantize(_hsv_to_rgb(h, s, v) * 255.0)


def color_jitter(img, params, rng):
    """
    Apply brightness, contrast, saturation and hue adjustments in that
    order with factors drawn uniformly from the ranges in params.
    """
    delta, contrast, saturation, hue = params.draw(rng)
    img = adjust_brightness(img, delta)
    img = adjust_contrast(img, contrast)
    img = adjust_saturation(img, saturation)
    return adjust_hue(img, hue)


def gaussian_kernel(sigma, kernel_size):
    """
    Normalized 1-D Gaussian weights for an odd kernel size.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ImageError("kernel size must be odd and positive, got {}".format(kernel_size))
    if not sigma > 0:
        raise ImageError("blur sigma must be positive, got {}".format(sigma))
    radius = kernel_size // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(x ** 2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _convolve_axis(arr, weights, axis):
    radius = len(weights) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    for i, w in enumerate(weights):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img, sigma, kernel_size, rng=None):
    """
    Separable Gaussian blur per channel with edge replicate padding.
    The blur is deterministic; rng is accepted so every stage shares one
    call shape and is never drawn from.
    """
    weights = gaussian_kernel(sigma, kernel_size)
    if kernel_size == 1:
        return img.copy()
    x = _convolve_axis(_floats(img), weights, 0)
    x = _convolve_axis(x, weights, 1)
    return _quantize(x)


def add_gaussian_noise(img, sigma, rng):
    """
    Add i.i.d. zero mean Gaussian noise, sigma in 8-bit units.
    """
    if sigma < 0:
        raise ImageError("noise sigma must be non-negative, got {}".format(sigma))
    if sigma == 0:
        return img.copy()
    noise = rng.normal(0.0, sigma, size=img.data.shape)
    return _quantize(_floats(img) + noise)


def _axis_coords(n_in, n_out):
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_array(arr, height, width):
    """
    Bilinear resize of a float (h, w, c) array with half-pixel centers.
    """
    y0, y1, fy = _axis_coords(arr.shape[0], height)
    x0, x1, fx = _axis_coords(arr.shape[1], width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    rows = arr[y0] * (1.0 - fy) + arr[y1] * fy
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def resize_bilinear(img, width, height):
    if width < 1 or height < 1:
        raise ImageError("cannot resize to {}x{}".format(width, height))
    if (width, height) == (img.width, img.height):
        return img.copy()
    return _quantize(resize_array(_floats(img), height, width))


def _bbox(box):
    bbox = getattr(box, "bbox", box)
    x, y, w, h = (float(v) for v in bbox)
    return x, y, w, h


def _check_inside(bbox, width, height, eps=1e-9):
    x, y, w, h = bbox
    if x < -eps or y < -eps or x + w > width + eps or y + h > height + eps:
        raise ImageError(
            "box {} lies outside the {}x{} image".format(bbox, width, height)
        )


def _pixel_span(start, stop, limit):
    return max(int(floor(start)), 0), min(int(ceil(stop)), limit)


def paste_on_background(img, boxes, background, rng=None):
    """
    Resize background to the image size and copy the pixels of every box
    from img onto it at the same coordinates.  Box labels stay valid.
    The background is chosen by the caller, so rng is never drawn from.
    """
    spans = []
    for box in boxes:
        bbox = _bbox(box)
        _check_inside(bbox, img.width, img.height)
        x, y, w, h = bbox
        spans.append(
            (_pixel_span(x, x + w, img.width), _pixel_span(y, y + h, img.height))
        )
    out = resize_bilinear(background, img.width, img.height).data.copy()
    for (x0, x1), (y0, y1) in spans:
        out[y0:y1, x0:x1] = img.data[y0:y1, x0:x1]
    return ImageRGB(out)


def support_window(box, context_px, width, height):
    """
    Pixel window (x0, y0, x1, y1) of a box grown by context_px on every
    side and clipped to the image.
    """
    x, y, w, h = _bbox(box)
    if w <= 0 or h <= 0:
        raise ImageError("cannot crop a zero-area box {}".format((x, y, w, h)))
    _check_inside((x, y, w, h), width, height)
    x0, x1 = _pixel_span(x - context_px, x + w + context_px, width)
    y0, y1 = _pixel_span(y - context_px, y + h + context_px, height)
    return x0, y0, x1, y1


def pad_to_square(arr):
    """
    Center an (h, w, 3) array on a zero square whose side is max(h, w).
    """
    h, w = arr.shape[:2]
    side = max(h, w)
    out = np.zeros((side, side) + arr.shape[2:], dtype=arr.dtype)
    oy = (side - h) // 2
    ox = (side - w) // 2
    out[oy : oy + h, ox : ox + w] = arr
    return out


def crop_support(img, box, context_px, out_size):
    """
    Crop a box with context, zero-pad to a square and resize it to
    out_size x out_size.
    """
    if out_size < 1:
        raise ImageError("support size must be positive, got {}".format(out_size))
    x0, y0, x1, y1 = support_window(box, context_px, img.width, img.height)
    square = pad_to_square(img.data[y0:y1, x0:x1])
    if square.shape[0] == out_size:
        return ImageRGB(square)
    return _quantize(resize_array(square.astype(np.float64), out_size, out_size))


Stage = namedtuple("Stage", "name prob params")


def _prob(value, key):
    if not 0 <= value <= 1:
        raise ConfigError("probability must be in [0, 1]", key=key, value=value)
    return float(value)


def _range(value, key, minimum=0.0, strict=False):
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError("expected a [low, high] pair", key=key, value=value)
    if lo > hi or lo < minimum or (strict and lo <= minimum):
        raise ConfigError("invalid range", key=key, value=value)
    return lo, hi


class AugmentationPipeline:
    """
    Ordered augmentation stages (jitter, blur, noise, background), each
    firing independently with its own probability.
    """

    def __init__(self, stages, rng_seed=0):
        names = [stage.name for stage in stages]
        if names != [n for n in STAGE_ORDER if n in names]:
            raise ConfigError("stages must follow the order {}".format(STAGE_ORDER))
        if not 0 <= int(rng_seed) < 2 ** 64:
            raise ConfigError("pipeline seed must fit 64 unsigned bits", value=rng_seed)
        self.stages = tuple(stages)
        self.rng_seed = int(rng_seed)

    @classmethod
    def from_config(cls, section, rng_seed=0):
        key = "augmentation.{}".format
        kernels = tuple(int(k) for k in section["blur_kernel_sizes"])
        if not kernels or any(k < 1 or k % 2 == 0 for k in kernels):
            raise ConfigError(
                "blur kernel sizes must be odd and positive",
                key=key("blur_kernel_sizes"),
                value=section["blur_kernel_sizes"],
            )
        stages = [
            Stage(
                "jitter",
                _prob(section["jitter_prob"], key("jitter_prob")),
                JitterParams(
                    section["brightness"],
                    section["contrast"],
                    section["saturation"],
                    section["hue"],
                ),
            ),
            Stage(
                "blur",
                _prob(section["blur_prob"], key("blur_prob")),
                {
                    "kernel_sizes": kernels,
                    "sigma": _range(section["blur_sigma"], key("blur_sigma"), strict=True),
                },
            ),
            Stage(
                "noise",
                _prob(section["noise_prob"], key("noise_prob")),
                {"sigma": _range(section["noise_sigma"], key("noise_sigma"))},
            ),
            Stage(
                "background",
                _prob(section["background_prob"], key("background_prob")),
                {},
            ),
        ]
        return cls(stages, rng_seed)

    def rng(self):
        return np.random.default_rng(self.rng_seed)

    def with_stages(self, names):
        """
        Copy of the pipeline where only the named stages may fire.
        """
        return AugmentationPipeline(
            [s if s.name in names else s._replace(prob=0.0) for s in self.stages],
            self.rng_seed,
        )

    def disabled(self):
        return self.with_stages(())

    def __repr__(self):
        return "<AugmentationPipeline {}>".format(
            ", ".join("{}={}".format(s.name, s.prob) for s in self.stages)
        )


def apply_pipeline(img, anns, pipeline, rng, backgrounds=(), query=True):
    """
    Run every stage of the pipeline on img.  A Bernoulli draw is made for
    each stage whether or not it fires.  The background stage only acts on
    query images and needs a non-empty background pool.

    Returns (image, annotations); all stages preserve geometry so the
    annotations come back unchanged.
    """
    for stage in pipeline.stages:
        if not rng.random() < stage.prob:
            continue
        if stage.name == "jitter":
            img = color_jitter(img, stage.params, rng)
        elif stage.name == "blur":
            kernels = stage.params["kernel_sizes"]
            kernel_size = int(kernels[rng.integers(len(kernels))])
            sigma = rng.uniform(*stage.params["sigma"])
            img = gaussian_blur(img, sigma, kernel_size, rng)
        elif stage.name == "noise":
            img = add_gaussian_noise(img, rng.uniform(*stage.params["sigma"]), rng)
        elif stage.name == "background":
            if query and len(backgrounds):
                background = backgrounds[rng.integers(len(backgrounds))]
                img = paste_on_background(img, anns, background, rng)
    return img, list(anns)
