# This file contains various useful constants for shotshift

from collections import OrderedDict

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4

CHECKPOINT_FORMAT = "shotshift-checkpoint/1"

MANIFEST_FORMAT = "shotshift-manifest/1"

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

DOMAINS = ("source", "target")

SUPPORT_MIX_MODES = ("source_only", "target_only", "single_random_domain", "mixed")

PHASES = ("meta_train", "meta_test")

TRAINABLE_TENSORS = ("projection", "bias")

# Rec.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# 0.50, 0.55, ... 0.95 and 0.00, 0.01, ... 1.00 as correctly rounded ratios
IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))
RECALL_POINTS = tuple(i / 100 for i in range(101))

ZERO_NORM_EPS = 1e-12

# synthetic shape classes, class id = position + 1
SHAPES = ("disc", "square", "triangle", "ring", "cross", "diamond")

# Experiment arms, one per compared training recipe.
# meta_train_domains: what the base task sees; mdts: episode policy;
# *_augment: pixel-level randomization; cfce / feature_augmentation:
# meta-testing additions.
BENCH_ARMS = OrderedDict(
    [
        (
            "Source",
            {
                "meta_train_domains": ["source"],
                "mdts": None,
                "meta_train_augment": False,
                "meta_test_augment": False,
                "cfce": False,
                "feature_augmentation": False,
                "meta_test_domain": "source",
            },
        ),
        (
            "MDTS-Aug",
            {
                "meta_train_domains": ["source"],
                "mdts": None,
                "meta_train_augment": True,
                "meta_test_augment": True,
                "cfce": False,
                "feature_augmentation": False,
                "meta_test_domain": "source",
            },
        ),
        (
            "MDTS",
            {
                "meta_train_domains": ["source", "target"],
                "mdts": {
                    "query_target_prob": 0.5,
                    "support_mix_mode": "mixed",
                    "few_shot_target_budget": 5,
                },
                "meta_train_augment": False,
                "meta_test_augment": False,
                "cfce": False,
                "feature_augmentation": False,
                "meta_test_domain": "source",
            },
        ),
        (
            "MDTS-Aug+CFCE",
            {
                "meta_train_domains": ["source", "target"],
                "mdts": {
                    "query_target_prob": 0.5,
                    "support_mix_mode": "mixed",
                    "few_shot_target_budget": 5,
                },
                "meta_train_augment": True,
                "meta_test_augment": True,
                "cfce": True,
                "feature_augmentation": True,
                "meta_test_domain": "source",
            },
        ),
        (
            "Target",
            {
                "meta_train_domains": ["target"],
                "mdts": {
                    "query_target_prob": 1.0,
                    "support_mix_mode": "target_only",
                    "few_shot_target_budget": 1000000,
                },
                "meta_train_augment": False,
                "meta_test_augment": False,
                "cfce": False,
                "feature_augmentation": False,
                "meta_test_domain": "source",
            },
        ),
        (
            "Oracle",
            {
                "meta_train_domains": ["target"],
                "mdts": {
                    "query_target_prob": 1.0,
                    "support_mix_mode": "target_only",
                    "few_shot_target_budget": 1000000,
                },
                "meta_train_augment": False,
                "meta_test_augment": False,
                "cfce": False,
                "feature_augmentation": False,
                "meta_test_domain": "target",
            },
        ),
    ]
)

DEFAULT_ARMS = ["Source", "MDTS-Aug", "MDTS", "MDTS-Aug+CFCE"]

# Incremental meta-testing study, each row adds to the previous one.
ABLATION_ROWS = OrderedDict(
    [
        ("A", {"stages": [], "feature_augmentation": False, "cfce": False}),
        ("B", {"stages": ["jitter"], "feature_augmentation": False, "cfce": False}),
        (
            "C",
            {"stages": ["jitter", "blur"], "feature_augmentation": False, "cfce": False},
        ),
        (
            "D",
            {
                "stages": ["jitter", "blur", "noise"],
                "feature_augmentation": False,
                "cfce": False,
            },
        ),
        (
            "E",
            {
                "stages": ["jitter", "blur", "noise", "background"],
                "feature_augmentation": False,
                "cfce": False,
            },
        ),
        (
            "F",
            {
                "stages": ["jitter", "blur", "noise", "background"],
                "feature_augmentation": True,
                "cfce": False,
            },
        ),
        (
            "G",
            {
                "stages": ["jitter", "blur", "noise", "background"],
                "feature_augmentation": True,
                "cfce": True,
            },
        ),
    ]
)

SOURCE_DOMAIN = {
    "background": "flat",
    "colors": ["#B4B4B4"],
    "cell": 8,
    "color_shift": [0, 0, 0],
    "noise_sigma": 0.0,
    "illumination": [0.0, 0.0],
    "blur_sigma": 0.0,
}

GAP_PRESETS = OrderedDict(
    [
        ("none", dict(SOURCE_DOMAIN)),
        (
            "mild",
            {
                "background": "flat",
                "colors": ["#8C8C8C"],
                "cell": 8,
                "color_shift": [10, -5, -5],
                "noise_sigma": 2.0,
                "illumination": [45.0, 0.1],
                "blur_sigma": 0.4,
            },
        ),
        (
            "default",
            {
                "background": "checker",
                "colors": ["#282828", "#3C3C3C"],
                "cell": 8,
                "color_shift": [30, -20, -10],
                "noise_sigma": 6.0,
                "illumination": [0.0, 0.0],
                "blur_sigma": 0.8,
            },
        ),
        (
            "harsh",
            {
                "background": "noise",
                "colors": ["#101010", "#505050"],
                "cell": 8,
                "color_shift": [45, -30, -20],
                "noise_sigma": 10.0,
                "illumination": [135.0, 0.4],
                "blur_sigma": 1.2,
            },
        ),
    ]
)

# Defaults for every configuration key.  A config file may only contain
# keys present here and every value must have the same type.
DEFAULT_CONFIG = OrderedDict(
    [
        ("seed", 0),
        ("threads", 1),
        (
            "dataset",
            {
                "train_annotations": [],
                "test_annotations": [],
                "image_root": "",
                "split": "configs/shapes_split.json",
            },
        ),
        (
            "synthgen",
            {
                "n_images": 200,
                "test_images": 100,
                "canvas": [64, 64],
                "objects": [1, 3],
                "size_range": [14, 24],
                "overlap_limit": 0.1,
                "gap_preset": "default",
            },
        ),
        (
            "mdts",
            {
                "query_target_prob": 0.0,
                "support_mix_mode": "source_only",
                "few_shot_target_budget": 0,
            },
        ),
        (
            "augmentation",
            {
                "jitter_prob": 0.5,
                "brightness": 0.4,
                "contrast": 0.4,
                "saturation": 0.4,
                "hue": 18.0,
                "blur_prob": 0.5,
                "blur_kernel_sizes": [3, 5, 7],
                "blur_sigma": [0.1, 2.0],
                "noise_prob": 0.5,
                "noise_sigma": [1.0, 8.0],
                "background_prob": 0.5,
                "background_pool": 32,
            },
        ),
        (
            "cfce",
            {"margin": 0.2, "loss_weight": 1.0, "enabled_phases": ["meta_test"]},
        ),
        (
            "embedding",
            {
                "dim": 64,
                "patch_size": 32,
                "context_px": 2,
                "init_scale": 1.0,
                "inference_samples": 8,
                "mean_only": False,
            },
        ),
        (
            "meta_train",
            {
                "episodes": 2000,
                "lr": 0.01,
                "lr_decay": 0.1,
                "lr_steps": [0.6],
                "batch_size": 4,
                "clip": 5.0,
                "augment": False,
            },
        ),
        (
            "meta_test",
            {
                "iterations": 500,
                "lr": 0.001,
                "shots": 5,
                "augment": False,
                "feature_augmentation": False,
                "trainable": ["projection", "bias"],
            },
        ),
        (
            "detector",
            {
                "score_threshold": 0.0,
                "nms_iou": 0.5,
                "fg_iou": 0.5,
                "bg_iou": 0.3,
                "jitter_copies": 4,
                "jitter_magnitude": 0.1,
                "random_boxes": 8,
                "scales": [16, 24, 32],
                "stride_ratio": 0.5,
                "max_detections": 100,
                "cls_margin": 0.5,
            },
        ),
        ("metrics", {"max_detections": 100}),
        (
            "bench",
            {
                "seeds": [0, 1, 2, 3, 4],
                "arms": list(DEFAULT_ARMS),
                "suite": "arms",
            },
        ),
    ]
)
