#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import os
import sys

sys.path.insert(0, os.path.abspath(".."))

from shotshift.version import version as shotshift_version  # noqa e402

# -- General configuration ------------------------------------------------

extensions = ["sphinx.ext.autodoc", "sphinx.ext.todo"]

templates_path = ["_templates"]

source_suffix = ".rst"

master_doc = "index"

project = "shotshift"
copyright = "shotshift contributors"
author = "shotshift contributors"

version = shotshift_version
release = shotshift_version

language = None

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

pygments_style = "sphinx"

todo_include_todos = False

# -- Options for HTML output ----------------------------------------------

html_theme = "alabaster"

htmlhelp_basename = "shotshiftdoc"
