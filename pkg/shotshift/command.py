from __future__ import division

import os

from collections import OrderedDict

import numpy as np

from shotshift.constants import (
    ABLATION_ROWS,
    BENCH_ARMS,
    EXIT_OK,
)
from shotshift.detector import (
    build_class_embeddings,
    detections_from_json,
    detections_to_json,
    fewshot_embeddings,
    infer,
    inference_vectors,
    meta_test,
    meta_train,
)
from shotshift.embedding import (
    CfceConfig,
    check_cfce_gradients,
    check_extractor_gradients,
)
from shotshift.episodic import (
    Annotation,
    MDTSPolicy,
    enumerate_fewshot,
    load_dataset,
    load_split,
    merge_indexes,
    partition,
)
from shotshift.exceptions import CheckFailure, CheckpointError, ConfigError
from shotshift.helpers import format_table, print_line
from shotshift.imaging import ImageRGB, apply_pipeline
from shotshift.metrics import evaluate
from shotshift.profiling import profile
from shotshift.storage import load_checkpoint, read_json, save_checkpoint, write_json
from shotshift.synthgen import background_pool, generate_dataset

# random stream tags, one per consumer, so adding draws to one never
# shifts another
STREAM_BACKGROUNDS = 2
STREAM_FEWSHOT = 3
STREAM_INFERENCE = 4


def _rng(seed, stream):
    return np.random.default_rng([seed, stream])


def _dataset_seed(seed, part):
    """
    Scene seed of the train (0) or test (1) part of a benchmark seed.
    Hashed so that seed ^ image index never collides across parts or seeds.
    """
    return int(np.random.SeedSequence([seed, part]).generate_state(1)[0])


class CommandRunner:
    """
    Encapsulates the subcommands that are available to run.
    """

    def __init__(self, harness):
        self.debug = harness.config["debug"]
        self.harness = harness
        self.config = harness.run_config

    def log(self, msg, level="info"):
        self.harness.log(msg, level)

    def run_command(self, options):
        handler = getattr(self, options.command.replace("-", "_"))
        return handler(options)

    # helpers

    def _out(self, options, *parts):
        path = os.path.join(options.out, *parts)
        folder = os.path.dirname(path)
        if folder and not os.path.isdir(folder):
            os.makedirs(folder)
        return path

    def _annotation_paths(self, options, key):
        paths = options.annotations or [
            self.config.resolve(p) for p in self.config["dataset"][key]
        ]
        if not paths:
            raise ConfigError(
                "no annotation files given, use --annotations", key="dataset." + key
            )
        return paths

    def _index(self, options, key="train_annotations"):
        root = self.config["dataset"]["image_root"] or None
        indexes = [load_dataset(p, root) for p in self._annotation_paths(options, key)]
        if len(indexes) == 1:
            return indexes[0]
        return merge_indexes(indexes)

    def _split(self):
        return load_split(self.config.resolve(self.config["dataset"]["split"]))

    def _backgrounds(self, width=None, height=None, seed=None):
        count = self.config["augmentation"]["background_pool"]
        canvas = self.config["synthgen"]["canvas"]
        seed = self.config.seed if seed is None else seed
        return background_pool(
            count,
            width or canvas[0],
            height or canvas[1],
            _rng(seed, STREAM_BACKGROUNDS),
        )

    def _train_config(self):
        return self.config.train_config(self._backgrounds())

    # subcommands

    @profile
    def synthgen(self, options):
        """
        Write a source and a target dataset with the configured gap.
        """
        section = self.config["synthgen"]
        n = section["n_images"] if options.n is None else options.n
        if n < 0:
            raise ConfigError("image count must be non-negative", value=n)
        source, target = self.config.domain_specs(options.gap_preset)
        paths = generate_dataset(
            n,
            self.config.scene_spec(),
            source,
            target,
            self._split(),
            options.out,
            self.config.seed,
            self.config.threads,
            self.log,
        )
        split = os.path.join(options.out, "split.json")
        self.harness.write_manifest(
            list(paths) + [split],
            {"gap_preset": options.gap_preset or section["gap_preset"], "n_images": n},
        )
        print_line("wrote {} and {}".format(*paths))
        return EXIT_OK

    @profile
    def meta_train(self, options):
        base_view, _ = partition(self._index(options), self._split())
        params = None
        if options.checkpoint:
            params = load_checkpoint(options.checkpoint).params
        tc = self._train_config()
        self.log("meta-train: {} base images, policy {}".format(len(base_view), tc.policy))
        params, trace = meta_train(base_view, tc, params, self.log)
        checkpoint = save_checkpoint(
            self._out(options, "checkpoints", "meta_train.json"),
            params,
            "meta_train",
            self.config.to_dict(),
        )
        losses = write_json(self._out(options, "loss_meta_train.json"), trace)
        self.harness.write_manifest([checkpoint, losses])
        print_line("wrote {}".format(checkpoint))
        return EXIT_OK

    @profile
    def meta_test(self, options):
        """
        Fine-tune on source domain few-shots of the novel classes.  Only
        source images are ever read, whatever the annotation files hold.
        """
        _, novel_view = partition(self._index(options), self._split())
        view = novel_view.restrict_domain("source")
        tc = self._train_config()
        fewshot = enumerate_fewshot(view, tc.shots, _rng(self.config.seed, STREAM_FEWSHOT))
        params, trace = meta_test(fewshot, load_checkpoint(options.checkpoint).params, tc, self.log)
        checkpoint = save_checkpoint(
            self._out(options, "checkpoints", "meta_test.json"),
            params,
            "meta_test",
            self.config.to_dict(),
            fewshot,
            fewshot_embeddings(fewshot, params, tc),
        )
        losses = write_json(self._out(options, "loss_meta_test.json"), trace)
        self.harness.write_manifest([checkpoint, losses])
        print_line("wrote {}".format(checkpoint))
        return EXIT_OK

    @profile
    def infer(self, options):
        checkpoint = load_checkpoint(options.checkpoint)
        if checkpoint.embeddings is None:
            raise CheckpointError(
                "{} holds no class embeddings, run meta-test first".format(options.checkpoint)
            )
        tc = self._train_config()
        vectors = inference_vectors(
            checkpoint.embeddings, tc, _rng(self.config.seed, STREAM_INFERENCE)
        )
        index = self._index(options, "test_annotations")
        detections = []
        for record in index.images:
            if options.domain != "all" and record.domain != options.domain:
                continue
            detections.extend(
                infer(index.image(record.image_id), vectors, checkpoint.params, tc, record.image_id)
            )
        path = write_json(self._out(options, "detections.json"), detections_to_json(detections))
        self.harness.write_manifest([path])
        print_line("wrote {} detections to {}".format(len(detections), path))
        return EXIT_OK

    @profile
    def eval(self, options):
        index = self._index(options, "test_annotations")
        classes = options.classes
        if not classes:
            classes = sorted(self._split().validate(index.class_table).novel_class_ids)
        ground_truth = OrderedDict(
            (image_id, list(index.annotations_for(image_id))) for image_id in index.image_ids
        )
        detections = detections_from_json(read_json(options.detections))
        unknown = sorted(set(detections) - set(ground_truth))
        if unknown:
            self.log("eval: ignoring detections on unknown images {}".format(unknown), "warning")
        detections = OrderedDict((k, v) for k, v in detections.items() if k in ground_truth)
        report = evaluate(
            detections, ground_truth, classes, self.config["metrics"]["max_detections"]
        )
        path = write_json(self._out(options, "metrics.json"), report.to_dict())
        self.harness.write_manifest([path])
        print_line(report.format(index.class_table))
        return EXIT_OK

    @profile
    def gradcheck(self, options):
        seed = self.config.seed
        cfce_error = check_cfce_gradients(
            options.instances, options.dim, margin=self.config["cfce"]["margin"], seed=seed
        )
        extractor_error = check_extractor_gradients(seed=seed)
        worst = max(cfce_error, extractor_error)
        result = {
            "cfce": cfce_error,
            "extractor": extractor_error,
            "max_relative_error": worst,
            "tolerance": options.tolerance,
        }
        path = write_json(self._out(options, "gradcheck.json"), result)
        self.harness.write_manifest([path])
        print_line("cfce max relative error: {:.3e}".format(cfce_error))
        print_line("extractor max relative error: {:.3e}".format(extractor_error))
        print_line("max relative error: {:.3e}".format(worst))
        if worst >= options.tolerance:
            raise CheckFailure(
                "gradient check failed: {:.3e} >= {:.1e}".format(worst, options.tolerance),
                value=worst,
                tolerance=options.tolerance,
            )
        return EXIT_OK

    @profile
    def augment_preview(self, options):
        if options.n < 1:
            raise ConfigError("need at least one variant", value=options.n)
        img = ImageRGB.load(options.image)
        boxes = [Annotation(box, 0, 0, i) for i, box in enumerate(options.boxes)]
        pipeline = self.config.pipeline()
        rng = pipeline.rng()
        backgrounds = self._backgrounds(img.width, img.height)
        paths = [self._out(options, "preview", "original.png")]
        img.save(paths[0])
        for i in range(options.n):
            variant, _ = apply_pipeline(img, boxes, pipeline, rng, backgrounds, query=bool(boxes))
            paths.append(self._out(options, "preview", "variant_{:02d}.png".format(i)))
            variant.save(paths[-1])
        self.harness.write_manifest(paths)
        print_line("wrote {} variants to {}".format(options.n, os.path.dirname(paths[0])))
        return EXIT_OK

    @profile
    def bench(self, options):
        """
        synthgen, meta-train, meta-test, infer and eval for every arm and
        seed, then a comparison table.
        """
        section = self.config["bench"]
        seeds = options.seeds if options.seeds is not None else section["seeds"]
        suite = options.suite or section["suite"]
        arms = options.arms or section["arms"]
        for arm in arms:
            if arm not in BENCH_ARMS:
                raise ConfigError(
                    "unknown arm, expected one of {}".format(list(BENCH_ARMS)), value=arm
                )
        preset = options.gap_preset or self.config["synthgen"]["gap_preset"]
        rows = arms if suite == "arms" else list(ABLATION_ROWS)
        results = OrderedDict((row, OrderedDict()) for row in rows)
        for seed in seeds:
            data = self._bench_data(options, seed, preset)
            if suite == "arms":
                for arm in arms:
                    self.log("bench: seed {} arm {}".format(seed, arm))
                    results[arm][str(seed)] = self._run_arm(BENCH_ARMS[arm], seed, data)
            else:
                for row, result in self._run_ablation(seed, data).items():
                    results[row][str(seed)] = result
        summary = _summarize(results)
        checks = _directional_checks(summary, results) if suite == "arms" else {}
        metrics = {
            "suite": suite,
            "gap_preset": preset,
            "seeds": list(seeds),
            "results": results,
            "summary": summary,
            "checks": checks,
        }
        path = write_json(self._out(options, "metrics.json"), metrics)
        self.harness.write_manifest([path], {"suite": suite, "gap_preset": preset})
        print_line(_bench_table(summary))
        for name, check in checks.items():
            print_line("{}: {}".format(name, "pass" if check["passed"] else "FAIL"))
        failed = [name for name, check in checks.items() if not check["passed"]]
        if failed and options.strict:
            raise CheckFailure("directional checks failed: {}".format(", ".join(failed)))
        return EXIT_OK

    def _bench_data(self, options, seed, preset):
        section = self.config["synthgen"]
        scene = self.config.scene_spec()
        source, target = self.config.domain_specs(preset)
        split = self._split()
        root = os.path.join(options.out, "data", "seed_{}".format(seed))
        data = {"split": split}
        for part, n in ((0, section["n_images"]), (1, section["test_images"])):
            name = ("train", "test")[part]
            paths = generate_dataset(
                n,
                scene,
                source,
                target,
                split,
                os.path.join(root, name),
                _dataset_seed(seed, part),
                self.config.threads,
                self.log,
            )
            data[name] = [load_dataset(p) for p in paths]
        data["backgrounds"] = self._backgrounds(seed=seed)
        return data

    def _arm_config(self, arm, seed, backgrounds):
        tc = self.config.train_config(backgrounds).replace(seed=seed)
        policy = MDTSPolicy(**arm["mdts"]) if arm["mdts"] else MDTSPolicy()
        phases = []
        if arm["cfce"]:
            phases = sorted(tc.cfce.enabled_phases) or ["meta_test"]
        cfce = CfceConfig(tc.cfce.margin, tc.cfce.loss_weight, phases)
        return tc.replace(
            meta_train=dict(tc.meta_train, augment=arm["meta_train_augment"]),
            meta_test=dict(
                tc.meta_test,
                augment=arm["meta_test_augment"],
                feature_augmentation=arm["feature_augmentation"],
            ),
            policy=policy,
            cfce=cfce,
        )

    def _train_view(self, domains, data):
        source, target = data["train"]
        if domains == ["source"]:
            index = source
        elif domains == ["target"]:
            index = target
        else:
            index = merge_indexes([source, target])
        return partition(index, data["split"])[0]

    def _fewshot(self, domain, seed, shots, data):
        index = data["train"][0 if domain == "source" else 1]
        novel = partition(index, data["split"])[1].restrict_domain(domain)
        return enumerate_fewshot(novel, shots, _rng(seed, STREAM_FEWSHOT), domain)

    def _evaluate_model(self, fewshot, params, tc, seed, data):
        vectors = build_class_embeddings(fewshot, params, tc, _rng(seed, STREAM_INFERENCE))
        classes = sorted(data["split"].novel_class_ids)
        out = OrderedDict()
        for domain, index in zip(("source", "target"), data["test"]):
            view = partition(index, data["split"])[1]
            detections = OrderedDict(
                (image_id, infer(index.image(image_id), vectors, params, tc, image_id))
                for image_id in view.image_ids
            )
            ground_truth = OrderedDict(
                (image_id, list(view.annotations_for(image_id))) for image_id in view.image_ids
            )
            report = evaluate(
                detections, ground_truth, classes, self.config["metrics"]["max_detections"]
            )
            out[domain] = report.to_dict()
        return out

    def _run_arm(self, arm, seed, data):
        tc = self._arm_config(arm, seed, data["backgrounds"])
        params, train_trace = meta_train(
            self._train_view(arm["meta_train_domains"], data), tc, log=self.log
        )
        fewshot = self._fewshot(arm["meta_test_domain"], seed, tc.shots, data)
        params, test_trace = meta_test(fewshot, params, tc, self.log)
        result = self._evaluate_model(fewshot, params, tc, seed, data)
        result["meta_train_final_loss"] = float(np.mean(train_trace[-50:])) if train_trace else None
        result["meta_test_loss_var"] = float(np.var(test_trace)) if test_trace else None
        return result

    def _run_ablation(self, seed, data):
        """
        One MDTS meta-trained model, then the incremental meta-testing rows.
        """
        arm = BENCH_ARMS["MDTS"]
        tc = self._arm_config(arm, seed, data["backgrounds"])
        base_params, _ = meta_train(
            self._train_view(arm["meta_train_domains"], data), tc, log=self.log
        )
        fewshot = self._fewshot("source", seed, tc.shots, data)
        out = OrderedDict()
        for name, row in ABLATION_ROWS.items():
            self.log("bench: seed {} ablation row {}".format(seed, name))
            cfce = CfceConfig(
                tc.cfce.margin, tc.cfce.loss_weight, ["meta_test"] if row["cfce"] else []
            )
            row_tc = tc.replace(
                pipeline=tc.pipeline.with_stages(row["stages"]),
                meta_test=dict(
                    tc.meta_test,
                    augment=bool(row["stages"]),
                    feature_augmentation=row["feature_augmentation"],
                ),
                cfce=cfce,
            )
            params, trace = meta_test(fewshot, base_params, row_tc, self.log)
            result = self._evaluate_model(fewshot, params, row_tc, seed, data)
            result["meta_test_loss_var"] = float(np.var(trace)) if trace else None
            out[name] = result
        return out


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _summarize(results):
    summary = OrderedDict()
    for row, per_seed in results.items():
        runs = list(per_seed.values())
        summary[row] = OrderedDict(
            [
                ("source_AP50", _mean(r["source"]["AP50"] for r in runs)),
                ("target_AP50", _mean(r["target"]["AP50"] for r in runs)),
                ("target_AP", _mean(r["target"]["AP"] for r in runs)),
                ("target_AR", _mean(r["target"]["AR"] for r in runs)),
                ("meta_test_loss_var", _mean(r["meta_test_loss_var"] for r in runs)),
            ]
        )
    return summary


def _directional_checks(summary, results):
    """
    The domain gap exists for the source-only arm, randomization narrows
    it, and the full method keeps the randomized arm's accuracy with a
    steadier meta-testing loss.
    """
    checks = OrderedDict()
    if "Source" in summary:
        s = summary["Source"]
        checks["gap"] = {
            "source_AP50": s["source_AP50"],
            "target_AP50": s["target_AP50"],
            "passed": s["target_AP50"] <= s["source_AP50"] - 0.10,
        }
    if "Source" in results and "MDTS-Aug" in results:
        seeds = list(results["Source"])
        wins = sum(
            1
            for seed in seeds
            if results["MDTS-Aug"][seed]["target"]["AP50"]
            > results["Source"][seed]["target"]["AP50"]
        )
        checks["randomization"] = {
            "wins": wins,
            "seeds": len(seeds),
            "passed": wins >= int(np.ceil(0.8 * len(seeds))),
        }
    if "MDTS-Aug" in summary and "MDTS-Aug+CFCE" in summary:
        aug, full = summary["MDTS-Aug"], summary["MDTS-Aug+CFCE"]
        checks["full_method"] = {
            "target_AP50": full["target_AP50"],
            "baseline_AP50": aug["target_AP50"],
            "loss_var": full["meta_test_loss_var"],
            "baseline_loss_var": aug["meta_test_loss_var"],
            "passed": full["target_AP50"] >= aug["target_AP50"] - 0.02
            and full["meta_test_loss_var"] <= aug["meta_test_loss_var"],
        }
    return checks


def _bench_table(summary):
    keys = ["source_AP50", "target_AP50", "target_AP", "target_AR", "meta_test_loss_var"]
    rows = [
        [name] + ["-" if values[k] is None else values[k] for k in keys]
        for name, values in summary.items()
    ]
    return format_table(["arm"] + keys, rows)


