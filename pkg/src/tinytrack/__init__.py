"""Fully attentional Siamese tracking on a small numpy autodiff engine.

Set ``TINYTRACK_THREADS`` before the first import to cap the BLAS thread pool
(it only takes effect if numpy has not been imported yet).
"""
import os as _os

_threads = _os.environ.get("TINYTRACK_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _threads

from .boxes import BBox, giou, iou  # noqa: E402
from .config import ConfigError, RunConfig, gradcheck_config, toy_config  # noqa: E402
from .model import TrackerNet  # noqa: E402

__all__ = ["BBox", "ConfigError", "RunConfig", "TrackerNet", "giou", "gradcheck_config", "iou",
           "toy_config"]
__version__ = "0.1.0"
