"""
Toy proposal scoring detector and its two training phases.

Proposals are boxes whose support-style crops go through the extractor;
a proposal scores cos(feature, class embedding) for every class.  Boxes
are never regressed.  meta_train learns the extractor episodically on
base classes, meta_test fine-tunes it on the frozen novel few-shot sets
and infer scores a sliding window grid.

Every phase splits its seed into independent streams (sampling,
augmentation, feature-level noise) so that switching one of them off
leaves the draws of the others untouched.
"""
from __future__ import division

from collections import namedtuple, OrderedDict

import numpy as np

from shotshift.constants import TRAINABLE_TENSORS
from shotshift.embedding import (
    backward_features,
    class_embedding,
    class_embedding_backward,
    cfce_grad,
    cfce_loss,
    cosine_grads,
    forward_features,
    row_cosines,
    sample_embedding,
    sgd_step,
    ExtractorParams,
)
from shotshift.episodic import sample_episode
from shotshift.exceptions import ConfigError, DataError, SamplingError, ZeroNormError
from shotshift.imaging import apply_pipeline, crop_support
from shotshift.metrics import iou

FOREGROUND = "foreground"
BACKGROUND = "background"

Proposal = namedtuple("Proposal", "bbox feature label matched_gt")
Proposal.__new__.__defaults__ = (None, None)

Detection = namedtuple("Detection", "bbox score class_id image_id")
Detection.__new__.__defaults__ = (None,)

StepResult = namedtuple("StepResult", "loss grads foreground")


def _positive(value, key, integer=False, allow_zero=False):
    if integer and int(value) != value:
        raise ConfigError("expected an integer", key=key, value=value)
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError("must be positive", key=key, value=value)
    return int(value) if integer else float(value)


class TrainConfig:
    """
    Everything the training loops and inference read: the meta_train,
    meta_test, detector and embedding config sections plus the component
    objects (augmentation pipeline, MDTS policy, CFCE config) and a seed.
    """

    def __init__(
        self,
        meta_train,
        meta_test,
        detector,
        embedding,
        pipeline,
        policy,
        cfce,
        seed=0,
        backgrounds=(),
    ):
        self.meta_train = dict(meta_train)
        self.meta_test = dict(meta_test)
        self.detector = dict(detector)
        self.embedding = dict(embedding)
        self.pipeline = pipeline
        self.policy = policy
        self.cfce = cfce
        self.seed = int(seed)
        self.backgrounds = tuple(backgrounds)
        self.validate()

    def validate(self):
        mt, ms, det, emb = self.meta_train, self.meta_test, self.detector, self.embedding
        _positive(mt["episodes"], "meta_train.episodes", integer=True, allow_zero=True)
        _positive(mt["lr"], "meta_train.lr")
        _positive(mt["lr_decay"], "meta_train.lr_decay")
        _positive(mt["batch_size"], "meta_train.batch_size", integer=True)
        _positive(mt["clip"], "meta_train.clip", allow_zero=True)
        for s in mt["lr_steps"]:
            if not 0 < s < 1:
                raise ConfigError(
                    "lr steps are fractions of the schedule",
                    key="meta_train.lr_steps",
                    value=s,
                )
        _positive(ms["iterations"], "meta_test.iterations", integer=True, allow_zero=True)
        _positive(ms["lr"], "meta_test.lr")
        _positive(ms["shots"], "meta_test.shots", integer=True)
        for name in ms["trainable"]:
            if name not in TRAINABLE_TENSORS:
                raise ConfigError(
                    "unknown tensor, expected one of {}".format(TRAINABLE_TENSORS),
                    key="meta_test.trainable",
                    value=name,
                )
        for key in ("score_threshold",):
            if not -1.5 <= det[key] <= 1.5:
                raise ConfigError("out of range", key="detector." + key, value=det[key])
        for key in ("nms_iou", "fg_iou", "bg_iou"):
            if not 0 <= det[key] <= 1:
                raise ConfigError("must be in [0, 1]", key="detector." + key, value=det[key])
        if det["bg_iou"] > det["fg_iou"]:
            raise ConfigError(
                "bg_iou may not exceed fg_iou", key="detector.bg_iou", value=det["bg_iou"]
            )
        _positive(det["jitter_copies"], "detector.jitter_copies", True, True)
        _positive(det["random_boxes"], "detector.random_boxes", True, True)
        _positive(det["max_detections"], "detector.max_detections", True)
        _positive(det["stride_ratio"], "detector.stride_ratio")
        _positive(det["cls_margin"], "detector.cls_margin")
        if not 0 <= det["jitter_magnitude"] < 1:
            raise ConfigError(
                "must be in [0, 1)",
                key="detector.jitter_magnitude",
                value=det["jitter_magnitude"],
            )
        if not det["scales"] or any(s < 1 for s in det["scales"]):
            raise ConfigError(
                "need positive window sizes", key="detector.scales", value=det["scales"]
            )
        _positive(emb["dim"], "embedding.dim", integer=True)
        _positive(emb["patch_size"], "embedding.patch_size", integer=True)
        _positive(emb["context_px"], "embedding.context_px", True, True)
        _positive(emb["init_scale"], "embedding.init_scale")
        _positive(emb["inference_samples"], "embedding.inference_samples", True, True)

    @property
    def shots(self):
        return self.meta_test["shots"]

    def replace(self, **changes):
        """
        Copy with some attributes swapped, e.g. for experiment arms.
        """
        values = dict(
            meta_train=self.meta_train,
            meta_test=self.meta_test,
            detector=self.detector,
            embedding=self.embedding,
            pipeline=self.pipeline,
            policy=self.policy,
            cfce=self.cfce,
            seed=self.seed,
            backgrounds=self.backgrounds,
        )
        values.update(changes)
        return TrainConfig(**values)

    def learning_rate(self, step, total):
        lr = self.meta_train["lr"]
        for fraction in self.meta_train["lr_steps"]:
            if step >= fraction * total:
                lr *= self.meta_train["lr_decay"]
        return lr


def _streams(seed, phase):
    """
    sampling, augmentation, feature noise and init streams of a phase.
    """
    sequence = np.random.SeedSequence([seed, phase])
    return [np.random.default_rng(s) for s in sequence.spawn(4)]


def _clip_box(x, y, w, h, width, height):
    x0, y0 = max(x, 0.0), max(y, 0.0)
    x1, y1 = min(x + w, float(width)), min(y + h, float(height))
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def _label(box, gt, fg_iou, bg_iou):
    best = 0.0
    matched = None
    for g in gt:
        overlap = iou(box, g.bbox)
        if overlap > best:
            best = overlap
            matched = g.ann_id
    if best >= fg_iou:
        return FOREGROUND, matched
    if best < bg_iou:
        return BACKGROUND, None
    return None, None


def train_boxes(img, gt, cfg, rng):
    """
    Labeled training boxes: every GT box, its jittered copies and random
    boxes, labeled by best IoU with the GT (in between is discarded).
    """
    det = cfg.detector
    magnitude = det["jitter_magnitude"]
    lo, hi = min(det["scales"]), max(det["scales"])
    candidates = []
    for g in gt:
        x, y, w, h = g.bbox
        candidates.append(tuple(g.bbox))
        for _ in range(det["jitter_copies"]):
            dx, dy, sw, sh = rng.uniform(-magnitude, magnitude, size=4)
            nw, nh = w * (1 + sw), h * (1 + sh)
            cx, cy = x + w / 2 + dx * w, y + h / 2 + dy * h
            box = _clip_box(cx - nw / 2, cy - nh / 2, nw, nh, img.width, img.height)
            if box is not None:
                candidates.append(box)
    for _ in range(det["random_boxes"]):
        w = min(rng.uniform(lo, hi), img.width)
        h = min(rng.uniform(lo, hi), img.height)
        x = rng.uniform(0, img.width - w)
        y = rng.uniform(0, img.height - h)
        candidates.append((x, y, w, h))
    boxes = []
    for box in candidates:
        label, matched = _label(box, gt, det["fg_iou"], det["bg_iou"])
        if label is not None:
            boxes.append((box, label, matched))
    return boxes


def grid_boxes(width, height, cfg):
    """
    Square sliding windows for every configured scale, stride =
    round(scale * stride_ratio).
    """
    boxes = []
    for scale in cfg.detector["scales"]:
        if scale > width or scale > height:
            continue
        stride = max(1, int(round(scale * cfg.detector["stride_ratio"])))
        for y in range(0, height - scale + 1, stride):
            for x in range(0, width - scale + 1, stride):
                boxes.append((float(x), float(y), float(scale), float(scale)))
    return boxes


def _crops(img, boxes, cfg):
    return [
        crop_support(img, box, cfg.embedding["context_px"], cfg.embedding["patch_size"])
        for box in boxes
    ]


def _flat(patch):
    return patch.data.min() == patch.data.max()


def _textured_supports(patches, role):
    kept = [p for p in patches if not _flat(p)]
    if not kept:
        raise ZeroNormError("zero-norm feature: every {} support is one flat colour".format(role))
    return kept


def _textured(img, labeled, cfg):
    """
    Labeled boxes and their crops, leaving out boxes whose crop is one
    flat value: mean subtraction turns those into the zero vector.
    """
    kept = []
    for item, crop in zip(labeled, _crops(img, [b for b, _, _ in labeled], cfg)):
        if not _flat(crop):
            kept.append((item, crop))
    return [item for item, _ in kept], [crop for _, crop in kept]


def generate_proposals(img, gt, mode, cfg, rng, params):
    """
    Proposals with features.  In train mode they are labeled against gt;
    in infer mode they form the deterministic window grid and rng is not
    used.  Boxes over a single flat colour give no proposal.
    """
    if mode == "train":
        labeled = train_boxes(img, gt, cfg, rng)
    elif mode == "infer":
        labeled = [(box, None, None) for box in grid_boxes(img.width, img.height, cfg)]
    else:
        raise ConfigError("proposal mode must be train or infer", value=mode)
    labeled, crops = _textured(img, labeled, cfg)
    if not labeled:
        return []
    features, _ = forward_features(crops, params)
    return [
        Proposal(box, feature, label, matched)
        for (box, label, matched), feature in zip(labeled, features)
    ]


def score_proposals(proposals, embedding, score_threshold=-1.0, class_id=None, image_id=None):
    """
    Detections scored by cosine with the class embedding; those below the
    threshold are dropped.
    """
    if not proposals:
        return []
    features = np.array([p.feature for p in proposals], dtype=np.float64)
    scores, _, _ = row_cosines(features, embedding)
    return [
        Detection(p.bbox, float(s), class_id, image_id)
        for p, s in zip(proposals, scores)
        if s >= score_threshold
    ]


def nms(dets, iou_thresh):
    """
    Greedy same-class suppression of boxes with IoU > iou_thresh against
    an already kept box, visiting by (score desc, x asc, y asc).
    """
    if not 0 <= iou_thresh <= 1:
        raise ConfigError("NMS threshold must be in [0, 1]", value=iou_thresh)
    kept = []
    for det in sorted(dets, key=lambda d: (-d.score, d.bbox[0], d.bbox[1])):
        if any(
            k.class_id == det.class_id and iou(k.bbox, det.bbox) > iou_thresh
            for k in kept
        ):
            continue
        kept.append(det)
    return kept


def classification_loss(features, embedding, targets, margin):
    """
    Mean of max(0, margin - t * cos(f, c)) over proposals with targets
    t in {+1, -1}.  Returns (loss, d/dfeatures, d/dembedding).
    """
    features = np.asarray(features, dtype=np.float64)
    embedding = np.asarray(embedding, dtype=np.float64)
    if len(features) == 0:
        return 0.0, np.zeros((0, len(embedding))), np.zeros_like(embedding)
    targets = np.asarray(targets, dtype=np.float64)
    cos, nz, nc = row_cosines(features, embedding)
    hinge = margin - targets * cos
    active = (hinge > 0) / len(features)
    dz, dc = cosine_grads(features, embedding, cos, nz, nc)
    weight = (-targets * active)[:, None]
    return (
        float(np.maximum(hinge, 0.0).mean()),
        weight * dz,
        (weight * dc).sum(axis=0),
    )


def _episode_step(query, gts, pos_patches, neg_patches, params, cfg, phase, rngs, feature_aug):
    """
    Loss and extractor gradients of one two-way episode.
    """
    sample_rng, feature_rng = rngs
    pos_patches = _textured_supports(pos_patches, "positive")
    neg_patches = _textured_supports(neg_patches, "negative")
    f_pos, cache_pos = forward_features(pos_patches, params)
    f_neg, cache_neg = forward_features(neg_patches, params)
    ce_pos = class_embedding(f_pos)
    ce_neg = class_embedding(f_neg)
    noise_pos = noise_neg = None
    if feature_aug:
        c_pos, noise_pos = sample_embedding(ce_pos, feature_rng, return_noise=True)
        c_neg, noise_neg = sample_embedding(ce_neg, feature_rng, return_noise=True)
    else:
        c_pos, c_neg = ce_pos.mean, ce_neg.mean

    labeled, crops = _textured(query, train_boxes(query, gts, cfg, sample_rng), cfg)
    grads = OrderedDict(
        (name, np.zeros_like(tensor)) for name, tensor in params.tensors().items()
    )
    if not labeled:
        return StepResult(0.0, grads, 0)
    f_q, cache_q = forward_features(crops, params)
    fg = np.array([label == FOREGROUND for _, label, _ in labeled])
    margin = cfg.detector["cls_margin"]

    # fg proposals are positives for c_pos and, like background, negatives for c_neg
    loss_pos, g_q, g_pos = classification_loss(f_q, c_pos, np.where(fg, 1.0, -1.0), margin)
    g_neg = np.zeros_like(c_neg)
    loss = loss_pos
    if fg.any():
        loss_neg, g_q_neg, g_neg = classification_loss(
            f_q[fg], c_neg, -np.ones(int(fg.sum())), margin
        )
        loss += loss_neg
        g_q[fg] += g_q_neg
        if cfg.cfce.enabled(phase):
            weight = cfg.cfce.loss_weight
            loss += weight * cfce_loss(f_q[fg], c_pos, c_neg, cfg.cfce.margin)
            gz, gp, gn = cfce_grad(f_q[fg], c_pos, c_neg, cfg.cfce.margin)
            g_q[fg] += weight * gz
            g_pos = g_pos + weight * gp
            g_neg = g_neg + weight * gn

    for cache, g in (
        (cache_q, g_q),
        (cache_pos, class_embedding_backward(f_pos, ce_pos, g_pos, noise_pos)),
        (cache_neg, class_embedding_backward(f_neg, ce_neg, g_neg, noise_neg)),
    ):
        for name, value in backward_features(cache, g).items():
            grads[name] = grads[name] + value
    return StepResult(loss, grads, int(fg.sum()))


def _with_context(error, where):
    error.args = ("{}: {}".format(where, error),) + error.args[1:]
    return error


def initial_params(cfg):
    init_rng = _streams(cfg.seed, 0)[3]
    emb = cfg.embedding
    return ExtractorParams.initialize(emb["dim"], emb["patch_size"], init_rng, emb["init_scale"])


def meta_train(base_view, cfg, params=None, log=None):
    """
    Episodic training on the base classes.  Returns (params, loss trace).
    """
    sample_rng, aug_rng, feature_rng, _ = _streams(cfg.seed, 0)
    if params is None:
        params = initial_params(cfg)
    episodes = cfg.meta_train["episodes"]
    batch = cfg.meta_train["batch_size"]
    emb = cfg.embedding
    augment = cfg.meta_train["augment"]
    trace = []
    pending = []
    for step in range(episodes):
        try:
            episode = sample_episode(
                base_view,
                cfg.policy,
                cfg.shots,
                emb["patch_size"],
                sample_rng,
                emb["context_px"],
            )
            query, gts = episode.query, episode.query_annotations
            pos = [s.image for s in episode.positive_supports]
            neg = [s.image for s in episode.negative_supports]
            if augment:
                query, gts = apply_pipeline(
                    query, gts, cfg.pipeline, aug_rng, cfg.backgrounds, query=True
                )
                pos = [apply_pipeline(p, (), cfg.pipeline, aug_rng, query=False)[0] for p in pos]
                neg = [apply_pipeline(p, (), cfg.pipeline, aug_rng, query=False)[0] for p in neg]
            result = _episode_step(
                query, gts, pos, neg, params, cfg, "meta_train", (sample_rng, feature_rng), False
            )
        except DataError as e:
            raise _with_context(e, "meta-train episode {}".format(step))
        trace.append(result.loss)
        pending.append(result.grads)
        if len(pending) == batch or step == episodes - 1:
            grads = OrderedDict(
                (name, sum(g[name] for g in pending) / len(pending))
                for name in TRAINABLE_TENSORS
            )
            params = sgd_step(
                params,
                grads,
                cfg.learning_rate(step, episodes),
                cfg.meta_train["clip"] or None,
            )
            pending = []
        if log:
            log("meta-train episode {} loss {:.5f}".format(step, result.loss), "debug")
    if log and trace:
        log(
            "meta-train: {} episodes, mean loss first/last 50: {:.4f}/{:.4f}".format(
                episodes, np.mean(trace[:50]), np.mean(trace[-50:])
            )
        )
    return params, trace


def meta_test(fewshot, params, cfg, log=None):
    """
    Fine-tune on the frozen few-shot sets.  Each iteration picks a
    positive class, one of its support images as query and another class
    as negative.  Only tensors named in meta_test.trainable change.
    Returns (params, loss trace).
    """
    sample_rng, aug_rng, feature_rng, _ = _streams(cfg.seed, 1)
    params = params.with_trainable(cfg.meta_test["trainable"])
    classes = fewshot.class_ids
    if len(classes) < 2:
        raise SamplingError(
            "meta-testing needs at least two novel classes", class_ids=classes
        )
    emb = cfg.embedding
    patches = OrderedDict(
        (c, fewshot.patches(c, emb["context_px"], emb["patch_size"])) for c in classes
    )
    augment = cfg.meta_test["augment"]
    feature_aug = cfg.meta_test["feature_augmentation"]
    view = fewshot.view
    trace = []
    for step in range(cfg.meta_test["iterations"]):
        positive = classes[sample_rng.integers(len(classes))]
        others = [c for c in classes if c != positive]
        negative = others[sample_rng.integers(len(others))]
        anchor = fewshot.supports[positive][sample_rng.integers(fewshot.shots)]
        try:
            query = view.image(anchor.image_id)
            gts = [a for a in view.annotations_for(anchor.image_id) if a.class_id == positive]
            pos, neg = patches[positive], patches[negative]
            if augment:
                query, gts = apply_pipeline(
                    query, gts, cfg.pipeline, aug_rng, cfg.backgrounds, query=True
                )
                pos = [apply_pipeline(p, (), cfg.pipeline, aug_rng, query=False)[0] for p in pos]
                neg = [apply_pipeline(p, (), cfg.pipeline, aug_rng, query=False)[0] for p in neg]
            result = _episode_step(
                query,
                gts,
                pos,
                neg,
                params,
                cfg,
                "meta_test",
                (sample_rng, feature_rng),
                feature_aug,
            )
        except DataError as e:
            raise _with_context(e, "meta-test iteration {}".format(step))
        params = sgd_step(params, result.grads, cfg.meta_test["lr"], cfg.meta_train["clip"] or None)
        trace.append(result.loss)
        if log:
            log("meta-test iteration {} loss {:.5f}".format(step, result.loss), "debug")
    if log and trace:
        log(
            "meta-test: {} iterations, final loss {:.4f}".format(len(trace), trace[-1])
        )
    return params, trace


def fewshot_embeddings(fewshot, params, cfg):
    """
    ClassEmbedding of every few-shot class under the given params.
    """
    emb = cfg.embedding
    out = OrderedDict()
    for class_id in fewshot.class_ids:
        features, _ = forward_features(
            fewshot.patches(class_id, emb["context_px"], emb["patch_size"]), params
        )
        out[class_id] = class_embedding(features)
    return out


def inference_vectors(embeddings, cfg, rng):
    """
    Scoring vector per class: the mean of inference_samples sampled
    embeddings, or the plain mean with mean_only (or zero samples).
    """
    samples = cfg.embedding["inference_samples"]
    out = OrderedDict()
    for class_id, ce in embeddings.items():
        if cfg.embedding["mean_only"] or samples == 0:
            out[class_id] = ce.mean
        else:
            out[class_id] = np.mean([sample_embedding(ce, rng) for _ in range(samples)], axis=0)
    return out


def build_class_embeddings(fewshot, params, cfg, rng):
    return inference_vectors(fewshot_embeddings(fewshot, params, cfg), cfg, rng)


def infer(img, class_embeddings, params, cfg, image_id=None):
    """
    Grid proposals scored against every class, NMS per class, merged and
    sorted by score, capped at max_detections.
    """
    if not class_embeddings:
        return []
    for class_id, vector in class_embeddings.items():
        if len(vector) != params.dim:
            raise DataError(
                "embedding of class {} has dimension {}, extractor gives {}".format(
                    class_id, len(vector), params.dim
                )
            )
    proposals = generate_proposals(img, (), "infer", cfg, None, params)
    det = cfg.detector
    merged = []
    for class_id in sorted(class_embeddings):
        scored = score_proposals(
            proposals, class_embeddings[class_id], det["score_threshold"], class_id, image_id
        )
        merged.extend(nms(scored, det["nms_iou"]))
    merged.sort(key=lambda d: (-d.score, d.class_id, d.bbox[0], d.bbox[1]))
    return merged[: det["max_detections"]]


def detections_to_json(dets):
    return [
        {
            "image_id": d.image_id,
            "category_id": d.class_id,
            "bbox": [float(v) for v in d.bbox],
            "score": float(d.score),
        }
        for d in dets
    ]


def detections_from_json(items):
    """
    Group a detection results list by image id.
    """
    by_image = OrderedDict()
    for i, item in enumerate(items):
        try:
            det = Detection(
                tuple(float(v) for v in item["bbox"]),
                float(item["score"]),
                int(item["category_id"]),
                int(item["image_id"]),
            )
        except (KeyError, TypeError, ValueError):
            raise DataError("detection {} is malformed: {!r}".format(i, item))
        if len(det.bbox) != 4:
            raise DataError("detection {} has a malformed box".format(i))
        by_image.setdefault(det.image_id, []).append(det)
    return by_image
