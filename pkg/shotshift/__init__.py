import sys

try:
    from setproctitle import setproctitle

    setproctitle("shotshift")
except ImportError:
    pass

try:
    # python3
    IOPipeError = BrokenPipeError
except NameError:
    # python2
    IOPipeError = IOError


def run(argv=None):
    """
    Run one command line and return its exit status: 0 on success, 2 for
    configuration errors, 3 for unusable data and 4 for a failed check.
    """
    from shotshift.argparsers import parse_cli_args
    from shotshift.core import Harness
    from shotshift.exceptions import ShotShiftException

    options = parse_cli_args(argv)

    harness = Harness(options, argv)
    try:
        harness.setup()
    except (IOPipeError, KeyboardInterrupt):
        return 0
    except ShotShiftException as e:
        harness.report_exception("Setup error")
        return e.exit_code
    except Exception:
        harness.report_exception("Setup error")
        return 1

    try:
        return harness.run()
    except (IOPipeError, KeyboardInterrupt):
        return 0
    except ShotShiftException as e:
        harness.report_exception("{} failed".format(options.command))
        return e.exit_code
    except Exception:
        harness.report_exception("{} failed".format(options.command))
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
