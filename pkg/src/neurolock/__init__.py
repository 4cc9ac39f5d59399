"""Cancellable EEG-template toolkit.

Signal ingestion, phase-synchronization graph features, a key-driven
non-invertible template transform with encrypted-domain matching, and the
evaluation/attack harness around it.
"""

__version__ = "0.1.0"

from . import (attacks, baseline_features, connectivity, dsp, errors,
               graph_features, ingest, matching_eval, pipeline, sl_eval,
               system, transform)

__all__ = [
    "attacks", "baseline_features", "connectivity", "dsp", "errors",
    "graph_features", "ingest", "matching_eval", "pipeline", "sl_eval",
    "system", "transform", "__version__",
]
