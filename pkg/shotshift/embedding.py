"""
Feature extraction, class embeddings, feature-level Gaussian augmentation
and the contrastive foreground / class-embedding (CFCE) loss.

The extractor is an affine projection of a mean-subtracted support patch
followed by L2 normalization.  Every loss here comes with its analytic
gradient; check_cfce_gradients and check_extractor_gradients compare them
against central finite differences.
"""
from __future__ import division

from collections import namedtuple, OrderedDict

import numpy as np

from shotshift.constants import PHASES, TRAINABLE_TENSORS, ZERO_NORM_EPS
from shotshift.exceptions import ConfigError, DataError, ImageError, ZeroNormError

ClassEmbedding = namedtuple("ClassEmbedding", "mean std shots")

FeatureCache = namedtuple("FeatureCache", "inputs norms features")


class ExtractorParams:
    """
    projection: (D, P) matrix, bias: (D,) vector, P = patch_size**2 * 3.
    ``trainable`` maps tensor name to whether sgd_step may update it.
    """

    def __init__(self, projection, bias, trainable=None):
        projection = np.array(projection, dtype=np.float64)
        bias = np.array(bias, dtype=np.float64)
        if projection.ndim != 2 or bias.shape != (projection.shape[0],):
            raise DataError(
                "projection {} and bias {} shapes disagree".format(
                    projection.shape, bias.shape
                )
            )
        if projection.shape[1] % 3:
            raise DataError("projection input size must be 3 * patch pixels")
        if not (np.isfinite(projection).all() and np.isfinite(bias).all()):
            raise DataError("extractor parameters are not finite")
        self.projection = projection
        self.bias = bias
        self.trainable = OrderedDict((name, True) for name in TRAINABLE_TENSORS)
        for name, flag in (trainable or {}).items():
            if name not in self.trainable:
                raise ConfigError("unknown tensor {!r}".format(name), value=name)
            self.trainable[name] = bool(flag)

    @classmethod
    def initialize(cls, dim, patch_size, rng, scale=1.0):
        inputs = patch_size * patch_size * 3
        projection = rng.normal(0.0, scale / np.sqrt(inputs), size=(dim, inputs))
        return cls(projection, np.zeros(dim))

    @property
    def dim(self):
        return self.projection.shape[0]

    @property
    def input_dim(self):
        return self.projection.shape[1]

    @property
    def patch_size(self):
        return int(round(np.sqrt(self.input_dim // 3)))

    def tensors(self):
        return OrderedDict([("projection", self.projection), ("bias", self.bias)])

    def with_trainable(self, names):
        return ExtractorParams(
            self.projection,
            self.bias,
            {name: name in names for name in TRAINABLE_TENSORS},
        )

    def copy(self):
        return ExtractorParams(self.projection, self.bias, self.trainable)

    def to_dict(self):
        return {
            "projection": self.projection.tolist(),
            "bias": self.bias.tolist(),
            "trainable": dict(self.trainable),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["projection"], data["bias"], data.get("trainable"))

    def __eq__(self, other):
        if not isinstance(other, ExtractorParams):
            return NotImplemented
        return (
            self.projection.shape == other.projection.shape
            and np.array_equal(self.projection, other.projection)
            and np.array_equal(self.bias, other.bias)
        )

    __hash__ = None

    def __repr__(self):
        return "<ExtractorParams D={} P={}>".format(self.dim, self.input_dim)


class CfceConfig:
    def __init__(self, margin=0.2, loss_weight=1.0, enabled_phases=("meta_test",)):
        if not margin > 0:
            raise ConfigError("margin must be positive", key="cfce.margin", value=margin)
        if loss_weight < 0:
            raise ConfigError(
                "loss weight must be non-negative",
                key="cfce.loss_weight",
                value=loss_weight,
            )
        for phase in enabled_phases:
            if phase not in PHASES:
                raise ConfigError(
                    "unknown phase {!r}, expected one of {}".format(phase, PHASES),
                    key="cfce.enabled_phases",
                    value=phase,
                )
        self.margin = float(margin)
        self.loss_weight = float(loss_weight)
        self.enabled_phases = frozenset(enabled_phases)

    @classmethod
    def from_config(cls, section):
        return cls(section["margin"], section["loss_weight"], section["enabled_phases"])

    def enabled(self, phase):
        return phase in self.enabled_phases and self.loss_weight > 0

    def __repr__(self):
        return "CfceConfig(m={}, w={}, phases={})".format(
            self.margin, self.loss_weight, sorted(self.enabled_phases)
        )


def patch_vector(patch):
    x = patch.data.astype(np.float64) / 255.0
    x -= x.mean()
    return x.ravel()


def forward_features(patches, params):
    """
    Features of a batch of patches as an (N, D) array plus the cache
    backward_features needs.
    """
    size = params.patch_size
    for patch in patches:
        if patch.width != size or patch.height != size:
            raise ImageError(
                "extractor expects {0}x{0} patches, got {1}x{2}".format(
                    size, patch.width, patch.height
                )
            )
    if not len(patches):
        empty = np.zeros((0, params.dim))
        return empty, FeatureCache(np.zeros((0, params.input_dim)), np.zeros(0), empty)
    inputs = np.stack([patch_vector(p) for p in patches])
    # one product per row so a feature never depends on its batch
    raw = np.stack([params.projection @ x for x in inputs]) + params.bias
    norms = np.array([np.sqrt(np.dot(r, r)) for r in raw])
    if (norms <= ZERO_NORM_EPS).any():
        raise ZeroNormError("zero-norm feature")
    features = raw / norms[:, None]
    return features, FeatureCache(inputs, norms, features)


def backward_features(cache, grad_features):
    """
    Gradients of projection and bias from gradients w.r.t. the normalized
    features.
    """
    f = cache.features
    g = np.asarray(grad_features, dtype=np.float64)
    g_raw = (g - f * (f * g).sum(axis=1, keepdims=True)) / cache.norms[:, None]
    return OrderedDict(
        [("projection", g_raw.T @ cache.inputs), ("bias", g_raw.sum(axis=0))]
    )


def extract_features(patch, params):
    features, _ = forward_features([patch], params)
    return features[0]


def class_embedding(supports):
    """
    Elementwise mean and population standard deviation of K features.
    Dimensions where all supports agree get exactly their value as mean
    and an exact zero spread.
    """
    try:
        x = np.array([np.asarray(s, dtype=np.float64) for s in supports])
    except ValueError:
        raise DataError("support features must share one dimension")
    if x.ndim != 2 or len(x) == 0:
        raise DataError("class embedding needs at least one support feature")
    mean = x.mean(axis=0)
    std = np.sqrt(((x - mean) ** 2).mean(axis=0))
    constant = np.ptp(x, axis=0) == 0
    mean[constant] = x[0, constant]
    std[constant] = 0.0
    return ClassEmbedding(mean, std, len(x))


def sample_embedding(ce, rng, return_noise=False):
    noise = rng.standard_normal(len(ce.mean))
    sample = ce.mean + ce.std * noise
    if return_noise:
        return sample, noise
    return sample


def class_embedding_backward(supports, ce, grad, noise=None):
    """
    Gradient w.r.t. each support feature of a loss that used ce.mean (or,
    with noise, the sample mean + std * noise).
    """
    x = np.asarray(supports, dtype=np.float64)
    k = len(x)
    out = np.repeat((grad / k)[None, :], k, axis=0)
    if noise is not None and (ce.std > 0).any():
        spread = ce.std > 0
        safe = np.where(spread, ce.std, 1.0)
        scale = np.where(spread, grad * noise / (k * safe), 0.0)
        out = out + (x - ce.mean) * scale
    return out


def _norm(v):
    n = float(np.sqrt(np.dot(v, v)))
    if n <= ZERO_NORM_EPS:
        raise ZeroNormError("zero-norm vector")
    return n


def cosine_sim(v1, v2):
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise DataError("dimension mismatch {} vs {}".format(v1.shape, v2.shape))
    return float(np.dot(v1, v2) / (_norm(v1) * _norm(v2)))


def _rows(vectors):
    z = np.asarray(vectors, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or len(z) == 0:
        raise DataError("need at least one query feature")
    return z


def row_cosines(z, c):
    """
    Cosine of every row of z with c, plus the norms used.
    """
    c = np.asarray(c, dtype=np.float64)
    if z.shape[1] != c.shape[0]:
        raise DataError(
            "dimension mismatch: features {} vs embedding {}".format(z.shape[1], c.shape[0])
        )
    nz = np.sqrt((z * z).sum(axis=1))
    if (nz <= ZERO_NORM_EPS).any():
        raise ZeroNormError("zero-norm vector")
    nc = _norm(c)
    return (z @ c) / (nz * nc), nz, nc


def cosine_grads(z, c, cos, nz, nc):
    """
    d cos(z_j, c) / d z_j per row and d cos(z_j, c) / d c per row.
    """
    dz = c[None, :] / (nz * nc)[:, None] - cos[:, None] * z / (nz * nz)[:, None]
    dc = z / (nz * nc)[:, None] - cos[:, None] * c[None, :] / (nc * nc)
    return dz, dc


def _check_margin(margin):
    if not margin > 0:
        raise ConfigError("margin must be positive", key="cfce.margin", value=margin)


def cfce_loss(query_fg, c_pos, c_neg, margin):
    """
    Mean over foreground proposal features z of
    max(cos(z, c_neg) - cos(z, c_pos) + margin, 0).
    """
    _check_margin(margin)
    z = _rows(query_fg)
    cos_pos, _, _ = row_cosines(z, c_pos)
    cos_neg, _, _ = row_cosines(z, c_neg)
    return float(np.maximum(cos_neg - cos_pos + margin, 0.0).mean())


def cfce_grad(query_fg, c_pos, c_neg, margin):
    """
    (d/dz for every row, d/dc_pos, d/dc_neg) of cfce_loss.  A term whose
    hinge argument is not strictly positive contributes nothing.
    """
    _check_margin(margin)
    z = _rows(query_fg)
    c_pos = np.asarray(c_pos, dtype=np.float64)
    c_neg = np.asarray(c_neg, dtype=np.float64)
    cos_pos, nz, np_ = row_cosines(z, c_pos)
    cos_neg, _, nn = row_cosines(z, c_neg)
    weight = ((cos_neg - cos_pos + margin) > 0) / len(z)
    dz_pos, dc_pos = cosine_grads(z, c_pos, cos_pos, nz, np_)
    dz_neg, dc_neg = cosine_grads(z, c_neg, cos_neg, nz, nn)
    w = weight[:, None]
    return (
        w * (dz_neg - dz_pos),
        -(w * dc_pos).sum(axis=0),
        (w * dc_neg).sum(axis=0),
    )


def sgd_step(params, grads, lr, clip=None):
    """
    One plain SGD update of the trainable tensors, after scaling all of
    their gradients together to a global norm of at most clip.
    """
    tensors = params.tensors()
    for name, grad in grads.items():
        if name not in tensors:
            raise DataError("gradient for unknown tensor {!r}".format(name))
        if np.shape(grad) != tensors[name].shape:
            raise DataError(
                "gradient shape {} does not match {} {}".format(
                    np.shape(grad), name, tensors[name].shape
                )
            )
    active = [n for n in tensors if params.trainable[n] and n in grads]
    scale = 1.0
    if clip:
        total = np.sqrt(sum(float((np.asarray(grads[n]) ** 2).sum()) for n in active))
        if total > clip:
            scale = clip / total
    updated = OrderedDict()
    for name, tensor in tensors.items():
        if name in active:
            updated[name] = tensor - lr * scale * np.asarray(grads[name])
        else:
            updated[name] = tensor
    return ExtractorParams(updated["projection"], updated["bias"], params.trainable)


def relative_error(analytic, numeric):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numerical_gradient(fn, x, step=1e-6):
    """
    Central finite differences of scalar fn at array x.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = fn(x)
        flat[i] = keep - step
        down = fn(x)
        flat[i] = keep
        out[i] = (up - down) / (2 * step)
    return grad


def _cfce_instance(rng, dim, max_proposals, margin, boundary):
    while True:
        n = int(rng.integers(1, max_proposals + 1))
        z = rng.standard_normal((n, dim))
        c_pos = rng.standard_normal(dim)
        c_neg = rng.standard_normal(dim)
        cos_pos, _, _ = row_cosines(z, c_pos)
        cos_neg, _, _ = row_cosines(z, c_neg)
        if (np.abs(cos_neg - cos_pos + margin) >= boundary).all():
            return z, c_pos, c_neg


def check_cfce_gradients(
    instances=100, dim=8, max_proposals=4, margin=0.2, seed=0, step=1e-6, boundary=1e-3
):
    """
    Largest relative error between cfce_grad and central differences over
    random instances kept at least `boundary` away from every hinge kink.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        z, c_pos, c_neg = _cfce_instance(rng, dim, max_proposals, margin, boundary)
        g_z, g_pos, g_neg = cfce_grad(z, c_pos, c_neg, margin)
        numeric = (
            numerical_gradient(lambda v: cfce_loss(v, c_pos, c_neg, margin), z, step),
            numerical_gradient(lambda v: cfce_loss(z, v, c_neg, margin), c_pos, step),
            numerical_gradient(lambda v: cfce_loss(z, c_pos, v, margin), c_neg, step),
        )
        for analytic, approx in zip((g_z, g_pos, g_neg), numeric):
            worst = max(worst, relative_error(analytic, approx))
    return worst


def _random_patches(rng, n, size):
    from shotshift.imaging import ImageRGB

    return [
        ImageRGB(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8))
        for _ in range(n)
    ]


def check_extractor_gradients(
    instances=3, dim=6, patch_size=4, shots=2, proposals=3, margin=0.2, seed=0, step=1e-6
):
    """
    Same comparison for the CFCE loss taken all the way back to the
    projection and bias, through the class embedding means.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < instances:
        params = ExtractorParams.initialize(dim, patch_size, rng)
        params = ExtractorParams(params.projection, rng.normal(0, 0.1, dim))
        query = _random_patches(rng, proposals, patch_size)
        pos = _random_patches(rng, shots, patch_size)
        neg = _random_patches(rng, shots, patch_size)

        def loss(projection, bias):
            p = ExtractorParams(projection, bias)
            fq, _ = forward_features(query, p)
            fp, _ = forward_features(pos, p)
            fn, _ = forward_features(neg, p)
            return cfce_loss(fq, fp.mean(axis=0), fn.mean(axis=0), margin)

        fq, cache_q = forward_features(query, params)
        fp, cache_p = forward_features(pos, params)
        fn, cache_n = forward_features(neg, params)
        ce_pos = class_embedding(fp)
        ce_neg = class_embedding(fn)
        cos_pos, _, _ = row_cosines(fq, ce_pos.mean)
        cos_neg, _, _ = row_cosines(fq, ce_neg.mean)
        if (np.abs(cos_neg - cos_pos + margin) < 1e-3).any():
            continue
        g_z, g_pos, g_neg = cfce_grad(fq, ce_pos.mean, ce_neg.mean, margin)
        total = OrderedDict((n, 0.0) for n in TRAINABLE_TENSORS)
        for cache, g in (
            (cache_q, g_z),
            (cache_p, class_embedding_backward(fp, ce_pos, g_pos)),
            (cache_n, class_embedding_backward(fn, ce_neg, g_neg)),
        ):
            for name, value in backward_features(cache, g).items():
                total[name] = total[name] + value
        numeric_projection = numerical_gradient(
            lambda w: loss(w, params.bias), params.projection, step
        )
        numeric_bias = numerical_gradient(
            lambda b: loss(params.projection, b), params.bias, step
        )
        worst = max(
            worst,
            relative_error(total["projection"], numeric_projection),
            relative_error(total["bias"], numeric_bias),
        )
        done += 1
    return worst
