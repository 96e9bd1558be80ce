"""Kernel backend selection.

The hot inner loops (rowwise softmax, layer norm, GELU, cross-entropy and
the fused Adam update) exist twice: a Cython extension (``_fast``) and a
numpy reference (``reference``). The compiled backend is picked at import
when available; MASKTUNE_KERNELS=numpy|cython forces a choice. Matrix
products are BLAS-backed via numpy in both lanes and are not part of this
layer.

``use_backend`` rebinds the module-level functions, which is how the
benchmark and the parity tests drive both implementations in one process.
Switch backends only at startup; training runs assume a fixed backend.
"""

import os

from masktune.kernels import reference

_KERNEL_NAMES = (
    "softmax_fwd", "softmax_bwd",
    "layer_norm_fwd", "layer_norm_bwd",
    "gelu_fwd", "gelu_bwd",
    "cross_entropy_fwd", "cross_entropy_bwd",
    "adam_step",
)

_BACKENDS = {"numpy": reference}

try:
    from masktune.kernels import _fast
    _BACKENDS["cython"] = _fast
except ImportError:
    _fast = None

BACKEND = ""


def available_backends():
    return tuple(sorted(_BACKENDS))


def use_backend(name):
    """Select a kernel backend by name ('numpy' or 'cython')."""
    global BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; "
                         f"available: {available_backends()}")
    impl = _BACKENDS[name]
    for fn in _KERNEL_NAMES:
        globals()[fn] = getattr(impl, fn)
    BACKEND = name


_requested = os.environ.get("MASKTUNE_KERNELS", "auto")
if _requested == "auto":
    use_backend("cython" if "cython" in _BACKENDS else "numpy")
else:
    use_backend(_requested)
