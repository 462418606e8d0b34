"""Backend selection for the row-accumulation kernels.

The compiled extension is preferred. Setting ``DR_GLM_PURE_PYTHON=1``
forces the numpy fallback, as does a missing or broken build.
"""

import os

from . import _pykernels

BINOMIAL = _pykernels.BINOMIAL
POISSON = _pykernels.POISSON
MULTINOMIAL = _pykernels.MULTINOMIAL

_compiled = None
if os.environ.get("DR_GLM_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

backend = _compiled if _compiled is not None else _pykernels
BACKEND_NAME = "cython" if _compiled is not None else "python"

gram = backend.gram
loglik = backend.loglik
glm_terms = backend.glm_terms


def available_backends():
    """Mapping of backend name to module, for tests and benchmarks."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    else:
        try:
            from . import _ckernels
            out["cython"] = _ckernels
        except ImportError:
            pass
    return out
