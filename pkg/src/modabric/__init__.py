"""modabric: multi-task product attribute prediction and hybrid recommendation.

Everything runs on a small numpy engine with hand-written gradients
(:mod:`modabric.compute`). Hot loops have optional compiled kernels; see
:data:`modabric.compute.kernels.BACKEND`.
"""
import os as _os

# BLAS pools read these once, at first numpy import.
_threads = _os.environ.get("MODABRIC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
