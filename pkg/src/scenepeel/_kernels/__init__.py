"""Hot raster kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; set SCENEPEEL_PURE=1
to force the fallback. Both backends are bit-compatible, which the test
suite asserts whenever the extension is present.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("SCENEPEEL_PURE"):
    _impl = _fallback
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

BACKEND: str = _impl.BACKEND


def jacobi_fill(u: np.ndarray, hole: np.ndarray, tol: float, max_iters: int) -> int:
    """Dispatch to the active backend; see the backend docstrings."""
    if u.dtype != np.float64 or not u.flags.c_contiguous:
        raise ValueError("u must be C-contiguous float64 (updated in place)")
    hole8 = np.ascontiguousarray(hole, dtype=np.uint8)
    return _impl.jacobi_fill(u, hole8, tol, max_iters)


def harmonic_fill(channel: np.ndarray, hole: np.ndarray, tol: float, max_iters: int) -> tuple[np.ndarray, int]:
    """Fill ``hole`` pixels of one channel by iterated 4-neighbor averaging.

    Hole pixels are seeded with the mean of the non-hole pixels bordering
    the hole (so every iterate stays within the boundary value range),
    then relaxed by the backend's Jacobi sweep. Returns (filled copy,
    sweeps run).
    """
    hole = np.asarray(hole, dtype=bool)
    if hole.all():
        raise ValueError("hole covers the entire canvas; nothing to anchor the fill")
    u = np.array(channel, dtype=np.float64, copy=True, order="C")
    if not hole.any():
        return u, 0
    border = _dilate4(hole) & ~hole
    # The hole never spans the full canvas, so some non-hole neighbor exists.
    u[hole] = u[border].mean()
    iters = _impl.jacobi_fill(u, np.ascontiguousarray(hole, dtype=np.uint8), tol, max_iters)
    return u, iters


def _dilate4(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def rle_encode(flat: np.ndarray) -> np.ndarray:
    return _impl.rle_encode(np.ascontiguousarray(flat, dtype=np.uint8))


def rle_decode(counts: np.ndarray, n: int) -> np.ndarray:
    return _impl.rle_decode(np.ascontiguousarray(counts, dtype=np.int64), n)
