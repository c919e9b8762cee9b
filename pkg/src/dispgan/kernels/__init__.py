"""Kernel backend selection.

The hot inner loops (activations, batch standardization, fused Adam/EMA
updates, pairwise distances) exist twice: as a compiled Cython extension
(``_native``) and as a pure-numpy fallback (``_numpy``).  The compiled
backend is used when it imported cleanly; set ``DISPGAN_KERNELS=python``
or ``DISPGAN_KERNELS=native`` to force one side (``native`` raises if the
extension is missing).  ``benchmarks/bench_kernels.py`` compares the two.
"""
from __future__ import annotations

import os

from . import _numpy

_choice = os.environ.get("DISPGAN_KERNELS", "auto").lower()
if _choice not in ("auto", "python", "native"):
    raise ValueError(
        f"DISPGAN_KERNELS={_choice!r} not recognized (use auto, python or native)"
    )

_impl = None
if _choice in ("auto", "native"):
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "native":
            raise ImportError(
                "DISPGAN_KERNELS=native but the compiled kernel extension is "
                "not available; build it with `pip install -e .` or drop the "
                "override"
            )
        _impl = None
if _impl is None:
    _impl = _numpy

BACKEND = _impl.BACKEND_NAME

leaky_relu_fwd = _impl.leaky_relu_fwd
leaky_relu_bwd = _impl.leaky_relu_bwd
softplus_fwd = _impl.softplus_fwd
softplus_bwd = _impl.softplus_bwd
hinge_fwd = _impl.hinge_fwd
hinge_bwd = _impl.hinge_bwd
scale_shift_fwd = _impl.scale_shift_fwd
scale_shift_bwd = _impl.scale_shift_bwd
batchnorm_fwd = _impl.batchnorm_fwd
batchnorm_bwd = _impl.batchnorm_bwd
adam_update = _impl.adam_update
ema_update = _impl.ema_update
pairwise_sqdist = _impl.pairwise_sqdist

__all__ = [
    "BACKEND",
    "leaky_relu_fwd",
    "leaky_relu_bwd",
    "softplus_fwd",
    "softplus_bwd",
    "hinge_fwd",
    "hinge_bwd",
    "scale_shift_fwd",
    "scale_shift_bwd",
    "batchnorm_fwd",
    "batchnorm_bwd",
    "adam_update",
    "ema_update",
    "pairwise_sqdist",
]
