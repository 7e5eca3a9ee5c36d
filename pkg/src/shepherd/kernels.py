"""Backend selection for the numeric kernels.

The compiled extension is preferred; set ``SHEPHERD_NO_EXT=1`` to force the
pure-Python implementation. ``BACKEND`` reports which one is active.
"""

from __future__ import annotations

import os

from shepherd import _kernels_py

if os.environ.get("SHEPHERD_NO_EXT"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from shepherd import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

discounted_returns = _impl.discounted_returns
discounted_returns_batch = _impl.discounted_returns_batch
mse_loss_grad = _impl.mse_loss_grad
gradient_descent = _impl.gradient_descent

BACKENDS = {"python": _kernels_py}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl
