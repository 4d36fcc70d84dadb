"""Grapevine bud patch classification pipeline.

Low-level SIFT features, bag-of-features encoding and a soft-margin SVM,
plus the corpus tooling, evaluation protocol and scanning-window runner
built around them.
"""

__version__ = "0.1.0"
