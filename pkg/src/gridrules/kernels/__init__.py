"""MLP kernel backend selection.

Prefers the compiled Cython extension when it imported cleanly; falls
back to the pure-numpy implementation otherwise. Set
GRIDRULES_BACKEND=numpy (or =cython) to force a backend.
"""

import os

from . import numpy_backend

try:
    from . import _mlp as cython_backend
except ImportError:  # extension not built
    cython_backend = None

_forced = os.environ.get("GRIDRULES_BACKEND", "").lower()
if _forced == "numpy":
    backend = numpy_backend
elif _forced == "cython":
    if cython_backend is None:
        raise ImportError("GRIDRULES_BACKEND=cython but the compiled "
                          "extension is not available")
    backend = cython_backend
else:
    backend = cython_backend if cython_backend is not None else numpy_backend

BACKEND_NAME = backend.NAME
forward = backend.forward
gradients = backend.gradients
grad_step = backend.grad_step
