"""Numerics for pairs of metrics on hyperbolic groups: codings, Green and
Hilbert metrics, thermodynamic constants and ball-counting statistics."""

__version__ = "0.1.0"

from .group import Alphabet, FreeGroup  # noqa: E402
from .coding import AutomaticStructure, build_free_group_coding, validate_strongly_markov  # noqa: E402
from .metrics import word_metric, scale_metric  # noqa: E402
from .green import FiniteMeasure, green_metric  # noqa: E402
from .hilbert import hilbert_length, schottky_rep  # noqa: E402
from .potentials import busemann_potential  # noqa: E402
from .symbolic import analyze_pair, distortion_constants, manhattan_curve  # noqa: E402
from .counting import enumerate_ball, clt_report, rough_similarity_test  # noqa: E402

__all__ = [
    "Alphabet", "FreeGroup", "AutomaticStructure", "build_free_group_coding",
    "validate_strongly_markov", "word_metric", "scale_metric", "FiniteMeasure", "green_metric",
    "hilbert_length", "schottky_rep", "busemann_potential", "analyze_pair",
    "distortion_constants", "manhattan_curve", "enumerate_ball", "clt_report",
    "rough_similarity_test",
]
