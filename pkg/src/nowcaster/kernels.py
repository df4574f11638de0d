"""Backend selection for the numerical kernels.

The compiled extension ``nowcaster._kernels`` is used when it imports; set
``NOWCASTER_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names the
active choice and both implementations stay reachable for parity testing.
"""
import os

from . import _kernels_py as python_backend  # noqa: F401  (re-exported)

try:
    if os.environ.get("NOWCASTER_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("compiled kernels disabled by NOWCASTER_PURE_PYTHON")
    from . import _kernels as compiled_backend
except ImportError:
    compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

lstm_layer_forward = _active.lstm_layer_forward
lstm_layer_backward = _active.lstm_layer_backward
arma_residuals = _active.arma_residuals
arma_css_minimize = _active.arma_css_minimize
kalman_filter = _active.kalman_filter
rts_smoother = _active.rts_smoother

KALMAN_OK = python_backend.OK
KALMAN_BAD_PRIOR = python_backend.BAD_PRIOR_VARIANCE
KALMAN_BAD_OBS = python_backend.BAD_OBS_VARIANCE
