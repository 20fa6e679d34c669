"""Backend selection for the hot kernels.

The compiled extension is used when it imports and ``BURSTHDR_PURE_PYTHON``
is unset or ``0``; otherwise the NumPy fallback is used. Both expose
``block_match`` and ``warp_bilinear`` with identical results up to float
summation order.
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_force_python = os.environ.get("BURSTHDR_PURE_PYTHON", "0") not in ("", "0")

if _compiled is not None and not _force_python:
    _impl = _compiled
    BACKEND = "cython"
else:
    _impl = _kernels_py
    BACKEND = "python"


def get_backend(name: str | None = None):
    """Kernel module by name (``"cython"``/``"python"``); ``None`` is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def have_compiled() -> bool:
    return _compiled is not None


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i8(a, shape):
    if a is None:
        return np.zeros(shape, dtype=np.int8)
    return np.ascontiguousarray(a, dtype=bool).astype(np.int8)


def block_match(ref, tgt, wref, wtgt, ty0, tx0, tys, txs, init_dy, init_dx,
                radius, min_valid=0.25, flat_tol=1e-12, cref=None, ctgt=None, backend=None):
    """Tile SAD search; ``cref``/``ctgt`` flag clipped (lower-bound) samples."""
    impl = get_backend(backend)
    ref = _f64(ref)
    return impl.block_match(ref, _f64(tgt), _f64(wref), _f64(wtgt),
                            _i8(cref, ref.shape), _i8(ctgt, ref.shape),
                            _i64(ty0), _i64(tx0), _i64(tys), _i64(txs),
                            _i64(init_dy), _i64(init_dx),
                            int(radius), float(min_valid), float(flat_tol))


def warp_bilinear(planes, fx, fy, aux=None, backend=None):
    """Bilinear warp of ``(C, h, w)`` planes; ``aux`` is ``(A, h, w)`` or ``(h, w)``."""
    impl = get_backend(backend)
    planes = _f64(planes)
    if aux is None:
        aux = np.ones((1,) + planes.shape[1:])
    aux = np.asarray(aux)
    squeeze = aux.ndim == 2
    if squeeze:
        aux = aux[None]
    out, pad, amin = impl.warp_bilinear(planes, _f64(fx), _f64(fy), _f64(aux))
    return out, pad, (amin[0] if squeeze else amin)
