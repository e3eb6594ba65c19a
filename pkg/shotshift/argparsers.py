import argparse

from platform import python_version

from shotshift.constants import GAP_PRESETS
from shotshift.version import version

SYNTHGEN_EPILOG = """
examples:
    # 200 source and 200 target training scenes with the default gap
    shotshift synthgen --out data/train

    # no domain gap at all (control run)
    shotshift synthgen --gap-preset none --n 50 --out data/control
"""
META_TRAIN_EPILOG = """
examples:
    # episodic training on the base classes of a source dataset
    shotshift meta-train --annotations data/train/source.json --out runs/src

    # mixed domain training, the policy comes from [mdts] in the config
    shotshift --config mdts.toml meta-train \\
        --annotations data/train/source.json data/train/target.json
"""
META_TEST_EPILOG = """
examples:
    # fine-tune on K source few-shots of the novel classes
    shotshift meta-test --annotations data/train/source.json \\
        --checkpoint runs/src/checkpoints/meta_train.json --out runs/src
"""
INFER_EPILOG = """
examples:
    # detect novel classes on target test images
    shotshift infer --annotations data/test/target.json \\
        --checkpoint runs/src/checkpoints/meta_test.json --out runs/src
"""
EVAL_EPILOG = """
examples:
    shotshift eval --annotations data/test/target.json \\
        --detections runs/src/detections.json --out runs/src
"""
GRADCHECK_EPILOG = """
examples:
    # compare analytic CFCE gradients with finite differences
    shotshift gradcheck
"""
AUGMENT_PREVIEW_EPILOG = """
examples:
    # write eight randomized variants of an image to preview/
    shotshift augment-preview --image scene.png --box 10,12,20,20 --out runs/preview
"""
BENCH_EPILOG = """
examples:
    # the four default arms over five seeds
    shotshift bench --out runs/bench

    # incremental meta-testing study on one MDTS model
    shotshift bench --suite ablation --seeds 0 --out runs/ablation
"""
EPILOGS = {
    "synthgen": SYNTHGEN_EPILOG,
    "meta-train": META_TRAIN_EPILOG,
    "meta-test": META_TEST_EPILOG,
    "infer": INFER_EPILOG,
    "eval": EVAL_EPILOG,
    "gradcheck": GRADCHECK_EPILOG,
    "augment-preview": AUGMENT_PREVIEW_EPILOG,
    "bench": BENCH_EPILOG,
}
SUBPARSERS = [
    ("synthgen", "generate a synthetic source/target dataset"),
    ("meta-train", "episodic training on base classes"),
    ("meta-test", "fine-tune on novel class few-shots"),
    ("infer", "detect novel classes"),
    ("eval", "compute AP/AR of detections"),
    ("gradcheck", "check analytic gradients"),
    ("augment-preview", "write augmented variants of an image"),
    ("bench", "run the experiment arms end to end"),
]
# (short, name, help, metavar, type)
COMMON_OPTIONS = [
    ("c", "config", "load config", "FILE", str),
    ("s", "seed", "override the config seed", "INT", int),
    ("o", "out", "write artifacts under DIR", "DIR", str),
    ("t", "threads", "worker threads for scene generation", "INT", int),
    ("l", "log-file", "enable logging to FILE", "FILE", str),
]
ANNOTATIONS_HELP = "annotation file(s), merged when several are given"


def _box(value):
    try:
        box = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected x,y,w,h")
    if len(box) != 4:
        raise argparse.ArgumentTypeError("expected x,y,w,h")
    return box


def build_parser():
    class Parser(argparse.ArgumentParser):
        # print usages and exit on errors
        def error(self, message):
            print("\x1b[1;31merror: \x1b[0m{}".format(message))
            self.print_help()
            self.exit(2)

        # hide choices on errors
        def _check_value(self, action, value):
            if action.choices is not None and value not in action.choices:
                raise argparse.ArgumentError(
                    action, "invalid choice: '{}'".format(value)
                )

    common = argparse.ArgumentParser(add_help=False)
    for short, name, msg, metavar, kind in COMMON_OPTIONS:
        common.add_argument(
            "-{}".format(short),
            "--{}".format(name),
            action="store",
            dest=name.replace("-", "_"),
            help=msg,
            metavar=metavar,
            type=kind,
        )
    common.add_argument(
        "-d",
        "--debug",
        action="store_true",
        help="log every episode and iteration",
    )
    common.add_argument(
        "--profile",
        action="store_true",
        help="dump cProfile statistics of the command into --out",
    )

    parser = Parser(
        prog="shotshift",
        description="Zero-shot domain adaptive few-shot detection harness",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument(
        "-v",
        "--version",
        action="store_true",
        dest="print_version",
        help="show shotshift version and exit",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    sps = {}
    for name, msg in SUBPARSERS:
        sps[name] = subparsers.add_parser(
            name,
            help=msg,
            epilog=EPILOGS[name],
            parents=[common],
            formatter_class=argparse.RawTextHelpFormatter,
        )

    sp = sps["synthgen"]
    sp.add_argument("--n", type=int, metavar="INT", help="images per domain")
    sp.add_argument(
        "--gap-preset", dest="gap_preset", choices=list(GAP_PRESETS), help="target domain"
    )

    for name in ("meta-train", "meta-test", "infer", "eval"):
        sps[name].add_argument(
            "--annotations", nargs="+", metavar="FILE", help=ANNOTATIONS_HELP
        )
    sps["meta-train"].add_argument(
        "--checkpoint", metavar="FILE", help="start from these parameters"
    )
    for name in ("meta-test", "infer"):
        sps[name].add_argument(
            "--checkpoint", metavar="FILE", required=True, help="trained parameters"
        )
    sps["infer"].add_argument(
        "--domain", choices=["source", "target", "all"], default="all", help="images to use"
    )

    sp = sps["eval"]
    sp.add_argument("--detections", metavar="FILE", required=True, help="detection results")
    sp.add_argument(
        "--classes", nargs="+", type=int, metavar="INT", help="class ids (default: novel)"
    )

    sp = sps["gradcheck"]
    sp.add_argument("--instances", type=int, default=100, metavar="INT", help="random instances")
    sp.add_argument("--dim", type=int, default=8, metavar="INT", help="feature dimension")
    sp.add_argument(
        "--tolerance", type=float, default=1e-5, metavar="FLOAT", help="max relative error"
    )

    sp = sps["augment-preview"]
    sp.add_argument("--image", metavar="FILE", required=True, help="PNG to augment")
    sp.add_argument(
        "--box",
        action="append",
        type=_box,
        dest="boxes",
        default=[],
        metavar="X,Y,W,H",
        help="object box kept on background paste, may repeat",
    )
    sp.add_argument("--n", type=int, default=8, metavar="INT", help="variants to write")

    sp = sps["bench"]
    sp.add_argument(
        "--gap-preset", dest="gap_preset", choices=list(GAP_PRESETS), help="target domain"
    )
    sp.add_argument("--suite", choices=["arms", "ablation"], help="what to run")
    sp.add_argument("--seeds", nargs="+", type=int, metavar="INT", help="benchmark seeds")
    sp.add_argument("--arms", nargs="+", metavar="NAME", help="experiment arms")
    sp.add_argument(
        "--strict",
        action="store_true",
        help="exit with status 4 when a directional check fails",
    )
    return parser


def parse_cli_args(argv=None):
    """
    Parse the command line arguments
    """
    parser = build_parser()
    options = parser.parse_args(argv)

    # make versions
    options.python_version = python_version()
    options.version = version
    if options.print_version:
        msg = "shotshift version {version} (python {python_version})"
        print(msg.format(**vars(options)))
        parser.exit()
    if not options.command:
        parser.error("a command is required")
    if not options.out:
        options.out = "."
    return options
