from __future__ import print_function

import sys


def print_line(line):
    """
    Print given line to stdout.
    """
    sys.__stdout__.write("{}\n".format(line))
    sys.__stdout__.flush()


def print_stderr(line):
    """Print line to stderr
    """
    print(line, file=sys.stderr)


def format_table(header, rows):
    """
    Lay out rows of cells as a fixed width text table.
    Floats are shown with three decimals.
    """

    def cell(value):
        if isinstance(value, float):
            return "{:.3f}".format(value)
        return "{}".format(value)

    lines = [[cell(x) for x in header]] + [[cell(x) for x in row] for row in rows]
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    out = []
    for index, line in enumerate(lines):
        out.append("  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip())
        if index == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)
