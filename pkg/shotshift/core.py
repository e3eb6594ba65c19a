from __future__ import print_function
from __future__ import division

import os
import sys
import time

from pprint import pformat
from syslog import syslog, LOG_DEBUG, LOG_ERR, LOG_INFO, LOG_WARNING
from traceback import extract_tb, format_tb

from shotshift import profiling
from shotshift.command import CommandRunner
from shotshift.constants import MANIFEST_FORMAT, TIME_FORMAT
from shotshift.exceptions import ConfigError
from shotshift.helpers import print_stderr
from shotshift.parse_config import process_config
from shotshift.storage import write_json

LOG_LEVELS = {
    "error": LOG_ERR,
    "warning": LOG_WARNING,
    "info": LOG_INFO,
    "debug": LOG_DEBUG,
}


class Common:
    """
    This class is used to hold core functionality so that it can be shared
    more easily.  This allow us to run the command runner independently of
    the harness.
    """

    def __init__(self, harness):
        self.harness = harness

    def report_exception(self, msg, level="error"):
        """
        Report details of an exception to the user.
        This should only be called within an except: block.  The exception
        type, message and the first place in our code it went through are
        reported; the full traceback is printed with --debug and written to
        the log file when there is one.

        NOTE: msg should not end in a '.' for consistency.
        """
        our_path = os.path.dirname(__file__)
        traceback = None
        filename, line_no = "?", "?"
        try:
            exc_type, exc_obj, tb = sys.exc_info()
            stack = extract_tb(tb)
            traceback = ["{}: {}\n".format(exc_type.__name__, exc_obj)] + format_tb(tb)
            # Find first relevant trace in the stack.
            for item in reversed(stack):
                if item[0].startswith(our_path):
                    filename = os.path.basename(item[0])
                    line_no = item[1]
                    break
            if isinstance(exc_obj, ConfigError):
                detail = exc_obj.one_line(getattr(exc_obj, "config_path", None))
            else:
                detail = "{}".format(exc_obj)
            msg = "{} ({}) {} line {}: {}".format(
                msg, exc_type.__name__, filename, line_no, detail
            )
        except:  # noqa e722
            # something went wrong report what we can.
            msg = "{}.".format(msg)
        finally:
            # delete tb!
            del tb
        self.harness.log(msg, level)
        print_stderr(msg)
        if traceback:
            if self.harness.config.get("debug"):
                print_stderr("".join(traceback))
            if self.harness.config.get("log_file"):
                self.harness.log("".join(["Traceback\n"] + traceback), level)


class Harness:
    """
    This is the shotshift harness: it loads the run configuration, owns
    logging and runs one subcommand.
    """

    def __init__(self, options, argv=None):
        self.config = vars(options)
        self.options = options
        self.argv = list(sys.argv[1:] if argv is None else argv)
        self.run_config = None
        self.common = Common(self)

    def setup(self):
        """
        Load the run configuration and prepare the output directory.
        """
        profiling.enable_profiling = self.options.profile
        overrides = {"seed": self.options.seed, "threads": self.options.threads}
        self.run_config = process_config(self.options.config, overrides)
        if not os.path.isdir(self.options.out):
            os.makedirs(self.options.out)
        self.log(
            "shotshift {} {} (config {}, seed {})".format(
                self.options.version,
                self.options.command,
                self.options.config or "defaults",
                self.run_config.seed,
            )
        )
        if self.config["debug"]:
            self.log("config:")
            self.log(self.run_config.to_dict())

    def run(self):
        return CommandRunner(self).run_command(self.options)

    def report_exception(self, msg, level="error"):
        self.common.report_exception(msg, level)

    def write_manifest(self, artifacts=(), extra=None):
        """
        Record everything needed to re-run the command next to its outputs.
        """
        out = self.options.out
        manifest = {
            "format": MANIFEST_FORMAT,
            "command": self.options.command,
            "argv": self.argv,
            "config_path": self.options.config,
            "config": self.run_config.to_dict(),
            "seed": self.run_config.seed,
            "version": self.options.version,
            "artifacts": sorted(os.path.relpath(a, out) for a in artifacts),
        }
        if extra:
            manifest.update(extra)
        return write_json(os.path.join(out, "manifest.json"), manifest)

    def log(self, msg, level="info"):
        """
        log this information to syslog or user provided logfile.
        """
        if level == "debug" and not self.config.get("debug"):
            return
        if not self.config.get("log_file"):
            # If level was given as a str then convert to actual level
            level = LOG_LEVELS.get(level, level)
            syslog(level, u"{}".format(msg))
        else:
            # Binary mode so fs encoding setting is not an issue
            with open(self.config["log_file"], "ab") as f:
                log_time = time.strftime(TIME_FORMAT)
                # nice formating of data structures using pretty print
                if isinstance(msg, (dict, list, set, tuple)):
                    msg = pformat(msg)
                    # if multiline then start the data output on a fresh line
                    # to aid readability.
                    if "\n" in msg:
                        msg = u"\n" + msg
                out = u"{} {} {}\n".format(log_time, level.upper(), msg)
                f.write(out.encode("utf-8"))
