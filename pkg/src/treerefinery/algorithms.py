"""Registry of refinement algorithms, shared by the CLI and the benchmark.

Every entry maps an algorithm id to a callable ``trees -> RefineOutcome``.
``lincr`` picks the best available engine; ``lincr-py`` pins the
pure-Python reference so the two can be benchmarked against each other.
"""

from . import build as build_module
from . import lincr as lincr_module
from . import oracle as oracle_module


def _lincr(trees):
    return lincr_module.lincr_refine(trees)


def _lincr_py(trees):
    return lincr_module.lincr_refine(trees, engine="py")


REFINERS = {
    "lincr": _lincr,
    "lincr-py": _lincr_py,
    "build": build_module.build_refine,
    "oracle": oracle_module.refine_oracle,
}
