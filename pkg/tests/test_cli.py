"""
Command line runs on tiny synthetic datasets.
"""
import json
import os

import pytest

from shotshift import run
from shotshift.argparsers import parse_cli_args
from shotshift.storage import load_checkpoint

TINY = """
seed = 0

[synthgen]
n_images = 30
test_images = 10
canvas = [32, 32]
objects = [2, 3]
size_range = [8, 12]

[augmentation]
background_pool = 2

[embedding]
dim = 6
patch_size = 4
context_px = 0
inference_samples = 2

[meta_train]
episodes = 4
batch_size = 2

[meta_test]
iterations = 3
shots = 2

[detector]
scales = [8, 16]
jitter_copies = 2
random_boxes = 4

[bench]
seeds = [0]
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return str(path)


def shotshift(tmp_path, *args):
    log_file = str(tmp_path / "shotshift.log")
    return run(list(args) + ["--log-file", log_file])


def read(path):
    with open(str(path)) as f:
        return json.load(f)


def test_parse_cli_args(capsys):
    options = parse_cli_args(["gradcheck", "--seed", "3"])
    assert options.command == "gradcheck"
    assert options.seed == 3
    assert options.out == "."
    assert options.tolerance == 1e-5

    options = parse_cli_args(
        ["augment-preview", "--image", "a.png", "--box", "1,2,3,4", "--box", "0,0,5,5"]
    )
    assert options.boxes == [(1.0, 2.0, 3.0, 4.0), (0.0, 0.0, 5.0, 5.0)]

    tests = [
        [],
        ["fly"],
        ["augment-preview", "--image", "a.png", "--box", "1,2,3"],
        ["meta-test"],
        ["bench", "--suite", "everything"],
    ]
    for argv in tests:
        print(argv)
        with pytest.raises(SystemExit) as e:
            parse_cli_args(argv)
        assert e.value.code == 2

    with pytest.raises(SystemExit) as e:
        parse_cli_args(["--version"])
    assert e.value.code == 0
    assert "shotshift version" in capsys.readouterr().out


def test_pipeline(tmp_path, tiny):
    data = tmp_path / "data"
    runs = tmp_path / "runs"
    assert shotshift(tmp_path, "synthgen", "-c", tiny, "-o", str(data)) == 0
    manifest = read(data / "manifest.json")
    assert manifest["command"] == "synthgen"
    assert manifest["format"] == "shotshift-manifest/1"
    assert manifest["artifacts"] == ["source.json", "split.json", "target.json"]
    assert manifest["config"]["synthgen"]["n_images"] == 30
    assert len(read(data / "source.json")["images"]) == 30

    source = str(data / "source.json")
    target = str(data / "target.json")
    argv = ["meta-train", "-c", tiny, "-o", str(runs), "--annotations", source]
    assert shotshift(tmp_path, *argv) == 0
    trained = str(runs / "checkpoints" / "meta_train.json")
    assert load_checkpoint(trained).phase == "meta_train"
    assert load_checkpoint(trained).embeddings is None
    assert len(read(runs / "loss_meta_train.json")) == 4

    # target images in the annotation list are never used for meta-testing
    assert (
        shotshift(
            tmp_path,
            "meta-test",
            "-c", tiny,
            "-o", str(runs),
            "--annotations", source, target,
            "--checkpoint", trained,
        )
        == 0
    )
    tested = str(runs / "checkpoints" / "meta_test.json")
    checkpoint = load_checkpoint(tested)
    assert sorted(checkpoint.embeddings) == [5, 6]
    assert checkpoint.supports["shots"] == 2
    for anns in checkpoint.supports["classes"].values():
        assert all(a["image_id"] <= 30 for a in anns)
    assert len(read(runs / "loss_meta_test.json")) == 3

    args = ["infer", "-c", tiny, "-o", str(runs), "--annotations", target, "--checkpoint"]
    assert shotshift(tmp_path, *(args + [tested])) == 0
    detections = read(runs / "detections.json")
    assert detections
    assert {d["category_id"] for d in detections} <= {5, 6}
    assert all(31 <= d["image_id"] <= 60 for d in detections)

    # meta-train checkpoints hold no class embeddings
    assert shotshift(tmp_path, *(args + [trained])) == 3

    assert (
        shotshift(
            tmp_path,
            "eval",
            "-c", tiny,
            "-o", str(runs),
            "--annotations", target,
            "--detections", str(runs / "detections.json"),
        )
        == 0
    )
    metrics = read(runs / "metrics.json")
    assert sorted(metrics["per_class"]) == ["5", "6"]
    for key in ("AP", "AP50", "AP75", "AR"):
        assert 0.0 <= metrics[key] <= 1.0
    assert metrics["AP"] <= metrics["AP50"]
    assert read(runs / "manifest.json")["command"] == "eval"


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[meta_test]\nshot = 3\n")
    assert shotshift(tmp_path, "gradcheck", "-c", str(bad), "-o", str(tmp_path)) == 2
    err = capsys.readouterr().err
    assert "CONFIG ERROR" in err
    assert "did you mean `meta_test.shots`?" in err
    assert str(bad) in err

    assert shotshift(tmp_path, "gradcheck", "-c", str(tmp_path / "missing.toml")) == 2
    # no annotation files given or configured
    assert shotshift(tmp_path, "meta-train", "-o", str(tmp_path)) == 2


def test_gradcheck(tmp_path):
    assert shotshift(tmp_path, "gradcheck", "-o", str(tmp_path), "--instances", "20") == 0
    result = read(tmp_path / "gradcheck.json")
    assert result["max_relative_error"] < 1e-5
    assert result["max_relative_error"] == max(result["cfce"], result["extractor"])

    assert shotshift(tmp_path, "gradcheck", "-o", str(tmp_path), "--tolerance", "0") == 4


def test_augment_preview(tmp_path, tiny):
    from shotshift.imaging import ImageRGB

    image = str(tmp_path / "scene.png")
    ImageRGB.blank(32, 32, (200, 30, 30)).save(image)
    out = tmp_path / "preview"
    argv = ["augment-preview", "-c", tiny, "-o", str(out), "--image", image]
    argv += ["--box", "4,4,10,10", "--n", "3"]
    assert shotshift(tmp_path, *argv) == 0
    written = sorted(os.listdir(str(out / "preview")))
    assert written == ["original.png", "variant_00.png", "variant_01.png", "variant_02.png"]
    assert ImageRGB.load(str(out / "preview" / "original.png")) == ImageRGB.load(image)

    missing = ["augment-preview", "-o", str(out), "--image", str(tmp_path / "none.png")]
    assert shotshift(tmp_path, *missing) == 3


def test_log_file(tmp_path):
    log_file = tmp_path / "shotshift.log"
    assert shotshift(tmp_path, "gradcheck", "-o", str(tmp_path), "--instances", "5", "--debug") == 0
    text = log_file.read_text()
    assert "INFO shotshift" in text
    assert "gradcheck (config defaults, seed 0)" in text


@pytest.mark.bench
def test_bench_arms(tmp_path, tiny, capfd):
    out = tmp_path / "bench"
    argv = ["bench", "-c", tiny, "-o", str(out), "--arms", "Source", "MDTS-Aug"]
    assert shotshift(tmp_path, *argv) == 0
    metrics = read(out / "metrics.json")
    assert metrics["suite"] == "arms"
    assert metrics["gap_preset"] == "default"
    assert list(metrics["results"]) == ["Source", "MDTS-Aug"]
    for arm in ("Source", "MDTS-Aug"):
        result = metrics["results"][arm]["0"]
        assert 0.0 <= result["target"]["AP50"] <= 1.0
        assert result["meta_test_loss_var"] >= 0
    assert set(metrics["checks"]) == {"gap", "randomization"}
    assert "target_AP50" in capfd.readouterr().out


@pytest.mark.bench
def test_bench_ablation(tmp_path, tiny):
    out = tmp_path / "ablation"
    assert shotshift(tmp_path, "bench", "-c", tiny, "-o", str(out), "--suite", "ablation") == 0
    metrics = read(out / "metrics.json")
    assert list(metrics["summary"]) == ["A", "B", "C", "D", "E", "F", "G"]
    assert metrics["checks"] == {}


@pytest.mark.bench
def test_bench_is_deterministic(tmp_path, tiny):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert shotshift(tmp_path, "bench", "-c", tiny, "-o", str(out)) == 0
        outputs.append((out / "metrics.json").read_bytes())
    assert outputs[0] == outputs[1]


@pytest.mark.bench
def test_bench_without_gap(tmp_path, tiny):
    out = tmp_path / "control"
    argv = ["bench", "-c", tiny, "-o", str(out), "--gap-preset", "none", "--seeds", "0", "1"]
    assert shotshift(tmp_path, *argv) == 0
    metrics = read(out / "metrics.json")
    assert metrics["gap_preset"] == "none"
    # both domains render the same scenes, so every arm scores them alike
    for arm, per_seed in metrics["results"].items():
        for seed, result in per_seed.items():
            print(arm, seed)
            assert result["source"] == result["target"]
    assert metrics["checks"]["gap"]["passed"] is False


@pytest.mark.bench
def test_bench_directional_checks(tmp_path):
    out = tmp_path / "default"
    assert shotshift(tmp_path, "bench", "-o", str(out), "--strict") == 0
    metrics = read(out / "metrics.json")
    assert list(metrics["results"]) == ["Source", "MDTS-Aug", "MDTS", "MDTS-Aug+CFCE"]
    assert sorted(metrics["checks"]) == ["full_method", "gap", "randomization"]
    for name, check in metrics["checks"].items():
        print(name, check)
        assert check["passed"]
