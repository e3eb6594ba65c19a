import cProfile
import os

# Used in development, switched on by --profile
enable_profiling = False


def profile(command_fn):
    """
    Wrap a CommandRunner method so that, when profiling is enabled, its run
    is recorded and dumped as shotshift-<command>.profile in the output
    directory.
    """

    def wrapper_run(self, options):
        if not enable_profiling:
            return command_fn(self, options)
        profiler = cProfile.Profile()
        try:
            return profiler.runcall(command_fn, self, options)
        finally:
            out_dir = getattr(options, "out", None) or "."
            name = command_fn.__name__.replace("_", "-")
            profiler.dump_stats(
                os.path.join(out_dir, "shotshift-%s.profile" % name)
            )

    wrapper_run.__name__ = command_fn.__name__
    wrapper_run.__doc__ = command_fn.__doc__
    return wrapper_run
