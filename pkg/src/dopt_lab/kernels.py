"""Backend selection for the batch kernels.

The compiled extension is used when it imports; set ``DOPT_LAB_PURE=1`` to
force the numpy fallback. Both backends produce identical results.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DOPT_LAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels


def simulate(p0_cdf, pi_cdf, p_cdf, uniforms, backend=None):
    impl = _pick_impl(backend)
    return impl.simulate(
        np.ascontiguousarray(p0_cdf, dtype=float),
        np.ascontiguousarray(pi_cdf, dtype=float),
        np.ascontiguousarray(p_cdf, dtype=float),
        np.ascontiguousarray(uniforms, dtype=float),
    )


def returns(states, actions, reward, ratio, baseline, baseline_bar, backend=None):
    impl = _pick_impl(backend)
    return impl.returns(
        np.ascontiguousarray(states, dtype=np.int64),
        np.ascontiguousarray(actions, dtype=np.int64),
        np.ascontiguousarray(reward, dtype=float),
        np.ascontiguousarray(ratio, dtype=float),
        np.ascontiguousarray(baseline, dtype=float),
        np.ascontiguousarray(baseline_bar, dtype=float),
    )


def _pick_impl(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")
