"""
shotshift
"""

from setuptools import find_packages, setup
import os
import sys

module_path = os.path.join(os.path.dirname(os.path.realpath(__file__)), "shotshift")
sys.path.insert(0, module_path)
from version import version  # noqa e402

sys.path.remove(module_path)


# Utility function to read the README file.
# Used for the long_description.
def read(fname):
    return open(os.path.join(os.path.dirname(__file__), fname)).read()


# extra requirements
req_proctitle = ["setproctitle"]
req_all = req_proctitle

setup(
    name="shotshift",
    version=version,
    description="shotshift: a zero-shot domain adaptive few-shot detection harness",
    long_description=read("README.rst"),
    extras_require={"all": req_all, "proctitle": req_proctitle},
    license="BSD",
    platforms="any",
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    python_requires=">=3.6",
    install_requires=[
        "numpy >= 1.17",
        "Pillow >= 6.0",
        'tomli >= 1.1; python_version < "3.11"',
    ],
    entry_points={"console_scripts": ["shotshift = shotshift:main"]},
    classifiers=[
        "License :: OSI Approved :: BSD License",
        "Operating System :: POSIX :: Linux",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.6",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
)
