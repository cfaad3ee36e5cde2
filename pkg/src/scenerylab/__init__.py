"""Simulation and estimation toolkit for random walks in random scenery."""
from __future__ import annotations

import warnings

import numba

# the bundled TBB is too old for numba; OpenMP gives the same results
numba.config.THREADING_LAYER = "omp"
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

__version__ = "0.1.0"

from .walk import LocalTimeField, StepLaw, Stream, WalkPath, accumulate, sample_path  # noqa: E402
from .scenery import SceneryLaw  # noqa: E402
from .results import EstimateResult  # noqa: E402

__all__ = ["LocalTimeField", "StepLaw", "Stream", "WalkPath", "accumulate", "sample_path",
           "SceneryLaw", "EstimateResult", "__version__"]
