class ShotShiftException(Exception):
    """
    Base shotshift exception class.  All custom shotshift exceptions derive
    from this class.

    ``exit_code``: the process exit status the command line uses for it
    """

    exit_code = 1


class ConfigError(ShotShiftException):
    """
    The run configuration is invalid.

    This exception provides some additional attributes

    ``key``: dotted path of the offending key, if known

    ``value``: the rejected value, if any
    """

    exit_code = 2

    def __init__(self, msg=None, key=None, value=None):
        ShotShiftException.__init__(self, msg)
        self.key = key
        self.value = value

    def one_line(self, config_path=None):
        notif = "CONFIG ERROR: {}".format(self)
        if self.key:
            notif += " (key `{}`)".format(self.key)
        if config_path:
            notif += " in file {}".format(config_path)
        return notif


class SplitError(ConfigError):
    """
    A base/novel split is not usable with the dataset at hand.
    """


class DataError(ShotShiftException):
    """
    Input data (images, annotations, checkpoints) cannot be used.
    """

    exit_code = 3


class ImageError(DataError):
    """
    A raster or a raster operation parameter is invalid.
    """


class AnnotationError(DataError):
    """
    An annotation file does not describe a consistent dataset.

    ``image_id``: id of the image involved, if any

    ``class_id``: id of the class involved, if any
    """

    def __init__(self, msg=None, image_id=None, class_id=None):
        DataError.__init__(self, msg)
        self.image_id = image_id
        self.class_id = class_id


class SamplingError(DataError):
    """
    An episode or a few-shot support set cannot be assembled.

    ``class_ids``: the classes that lack instances
    """

    def __init__(self, msg=None, class_ids=()):
        DataError.__init__(self, msg)
        self.class_ids = tuple(class_ids)


class ZeroNormError(DataError):
    """
    A feature vector has zero norm so its direction is undefined.
    """


class PlacementError(DataError):
    """
    The scene generator could not place the requested objects.
    """


class EvaluationError(DataError):
    """
    Detections cannot be evaluated against the ground truth.
    """


class CheckpointError(DataError):
    """
    A checkpoint file is missing, unreadable or of an unknown format.
    """


class CheckFailure(ShotShiftException):
    """
    A numerical self check (gradient check, benchmark criterion) failed.

    ``value``: the measured quantity

    ``tolerance``: the bound it exceeded
    """

    exit_code = 4

    def __init__(self, msg=None, value=None, tolerance=None):
        ShotShiftException.__init__(self, msg)
        self.value = value
        self.tolerance = tolerance
