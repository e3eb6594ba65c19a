# -*- coding: utf-8 -*-
from __future__ import division

import re

from shotshift.exceptions import ConfigError

RE_HEX = re.compile("^#([0-9a-fA-F]{3}|[0-9a-fA-F]{6})$")


def hex_2_rgb(color):
    """
    convert a hex color to an 8-bit (r, g, b) tuple.
    Short forms like '#FA0' are expanded.
    """
    if not RE_HEX.match(color):
        raise ConfigError("invalid color {!r}".format(color), value=color)
    if len(color) == 7:
        return tuple(int(color[i : i + 2], 16) for i in [1, 3, 5])
    return tuple(int(c, 16) * 17 for c in color[1:])


def rgb_2_hex(r, g, b):
    """
    convert an 8-bit rgb color to hex
    """
    return "#{:02X}{:02X}{:02X}".format(int(r), int(g), int(b))


def as_rgb(value):
    """
    Accept either a hex string or a 3 item sequence and return an 8-bit
    (r, g, b) tuple.
    """
    if isinstance(value, str):
        return hex_2_rgb(value)
    try:
        r, g, b = (int(x) for x in value)
    except (TypeError, ValueError):
        raise ConfigError("invalid color {!r}".format(value), value=value)
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise ConfigError("color channel out of range {!r}".format(value))
    return (r, g, b)
