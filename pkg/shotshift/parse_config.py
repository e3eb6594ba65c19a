# -*- coding: utf-8 -*-
"""
Run configuration: TOML (or JSON) files merged over DEFAULT_CONFIG.

Only keys present in the defaults are accepted and every value must have
the type of its default; the component objects are then built once so a
bad value is reported at load time rather than deep inside a run.
"""
import copy
import json
import os

from difflib import get_close_matches

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from shotshift.constants import BENCH_ARMS, DEFAULT_CONFIG, GAP_PRESETS, SOURCE_DOMAIN
from shotshift.exceptions import ConfigError


def _type_name(value):
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "list"
    return "table"


def _convert(default, value, key):
    """
    Check value against the type of its default.  Integers are accepted
    where a float is expected; booleans never pass as numbers.
    """
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
        if ok and default:
            value = [_convert(default[0], item, key) for item in value]
    else:
        ok = True
    if not ok:
        raise ConfigError(
            "expected a {}, got {!r}".format(_type_name(default), value),
            key=key,
            value=value,
        )
    return value


def merge_config(defaults, data, prefix=""):
    """
    Deep merge data over a copy of defaults, rejecting unknown keys.
    """
    if not isinstance(data, dict):
        raise ConfigError("expected a table", key=prefix.rstrip(".") or None)
    merged = copy.deepcopy(defaults)
    for key, value in data.items():
        dotted = prefix + key
        if key not in defaults:
            hint = get_close_matches(key, list(defaults), n=1)
            msg = "unknown key"
            if hint:
                msg += ", did you mean `{}`?".format(prefix + hint[0])
            raise ConfigError(msg, key=dotted, value=value)
        if isinstance(defaults[key], dict):
            merged[key] = merge_config(defaults[key], value, dotted + ".")
        else:
            merged[key] = _convert(defaults[key], value, dotted)
    return merged


def read_config_file(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except IOError as e:
        raise ConfigError("cannot read config {}: {}".format(path, e.strerror or e))
    if path.endswith(".toml"):
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
            raise ConfigError("invalid TOML: {}".format(e))
    try:
        return json.loads(raw.decode("utf-8"))
    except ValueError as e:
        raise ConfigError("invalid JSON: {}".format(e))


class RunConfig:
    """
    Validated configuration.  Sections are reachable as items
    (``config["meta_train"]["lr"]``); component objects come from the
    builder methods.
    """

    def __init__(self, data=None, path=None):
        self.data = merge_config(DEFAULT_CONFIG, data or {})
        self.path = path
        self.validate()

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def threads(self):
        return self.data["threads"]

    def with_overrides(self, **overrides):
        """
        Copy with top level or dotted keys replaced, e.g.
        with_overrides(seed=3, **{"meta_test.shots": 10}).
        """
        data = copy.deepcopy(self.data)
        for dotted, value in overrides.items():
            if value is None:
                continue
            target = data
            parts = dotted.split(".")
            for part in parts[:-1]:
                target = target[part]
            target[parts[-1]] = value
        return RunConfig(data, self.path)

    def to_dict(self):
        return copy.deepcopy(self.data)

    def validate(self):
        if self.seed < 0:
            raise ConfigError("seed must be non-negative", key="seed", value=self.seed)
        if self.threads < 1:
            raise ConfigError("need at least one thread", key="threads", value=self.threads)
        bench = self.data["bench"]
        for arm in bench["arms"]:
            if arm not in BENCH_ARMS:
                raise ConfigError(
                    "unknown arm, expected one of {}".format(list(BENCH_ARMS)),
                    key="bench.arms",
                    value=arm,
                )
        if bench["suite"] not in ("arms", "ablation"):
            raise ConfigError(
                "suite must be arms or ablation", key="bench.suite", value=bench["suite"]
            )
        if any(s < 0 for s in bench["seeds"]):
            raise ConfigError("seeds must be non-negative", key="bench.seeds")
        if self.data["metrics"]["max_detections"] < 1:
            raise ConfigError("must be positive", key="metrics.max_detections")
        gap = self.data["synthgen"]["gap_preset"]
        if gap not in GAP_PRESETS:
            raise ConfigError(
                "unknown gap preset, expected one of {}".format(list(GAP_PRESETS)),
                key="synthgen.gap_preset",
                value=gap,
            )
        if self.data["augmentation"]["background_pool"] < 0:
            raise ConfigError("must be non-negative", key="augmentation.background_pool")
        self.train_config()
        self.scene_spec()
        self.domain_specs()

    def pipeline(self, seed=None):
        from shotshift.imaging import AugmentationPipeline

        return AugmentationPipeline.from_config(
            self.data["augmentation"], self.seed if seed is None else seed
        )

    def policy(self):
        from shotshift.episodic import MDTSPolicy

        return MDTSPolicy.from_config(self.data["mdts"])

    def cfce(self):
        from shotshift.embedding import CfceConfig

        return CfceConfig.from_config(self.data["cfce"])

    def train_config(self, backgrounds=()):
        from shotshift.detector import TrainConfig

        return TrainConfig(
            self.data["meta_train"],
            self.data["meta_test"],
            self.data["detector"],
            self.data["embedding"],
            self.pipeline(),
            self.policy(),
            self.cfce(),
            self.seed,
            backgrounds,
        )

    def scene_spec(self):
        from shotshift.synthgen import SceneSpec

        section = self.data["synthgen"]
        return SceneSpec(
            canvas=section["canvas"],
            objects=section["objects"],
            size_range=section["size_range"],
            overlap_limit=section["overlap_limit"],
        )

    def domain_specs(self, preset=None):
        """
        (source, target) DomainSpec for a gap preset, by default the
        configured one.
        """
        from shotshift.synthgen import DomainSpec

        preset = preset or self.data["synthgen"]["gap_preset"]
        if preset not in GAP_PRESETS:
            raise ConfigError(
                "unknown gap preset {!r}".format(preset), key="synthgen.gap_preset"
            )
        return DomainSpec.from_dict(SOURCE_DOMAIN), DomainSpec.from_dict(GAP_PRESETS[preset])

    def resolve(self, path):
        """
        Paths in a config file are relative to that file; shipped files
        under configs/ are found from a source checkout as well.
        """
        if not path or os.path.isabs(path):
            return path
        candidates = []
        if self.path:
            candidates.append(os.path.join(os.path.dirname(os.path.abspath(self.path)), path))
        candidates.append(os.path.abspath(path))
        candidates.append(
            os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), path)
        )
        for candidate in candidates:
            if os.path.exists(candidate):
                return candidate
        return candidates[0]


def process_config(config_path=None, overrides=None):
    """
    Load config_path (None for the defaults), apply overrides and validate.
    """
    data = {}
    if config_path:
        data = read_config_file(config_path)
    try:
        config = RunConfig(data, config_path)
        if overrides:
            config = config.with_overrides(**overrides)
    except ConfigError as e:
        if config_path and not getattr(e, "config_path", None):
            e.config_path = config_path
        raise
    return config
