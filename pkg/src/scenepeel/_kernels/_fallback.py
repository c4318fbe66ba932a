"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable (or disabled via
SCENEPEEL_PURE=1). Arithmetic is arranged to match the compiled kernels
operation-for-operation so both backends produce identical bits.
"""

import numpy as np

BACKEND = "fallback"


def jacobi_fill(u: np.ndarray, hole: np.ndarray, tol: float, max_iters: int) -> int:
    """Relax hole pixels of ``u`` toward the discrete harmonic solution.

    Each sweep sets every hole pixel to the mean of its in-canvas
    4-neighbors (simultaneous update; non-hole pixels stay fixed).
    Stops when the largest per-pixel change falls below ``tol`` or after
    ``max_iters`` sweeps. ``u`` is modified in place; returns the number
    of sweeps run.
    """
    hole_b = hole.view(bool) if hole.dtype == np.uint8 else hole
    if not hole_b.any():
        return 0
    h, w = u.shape
    cnt = np.zeros((h, w), dtype=np.float64)
    cnt[1:, :] += 1.0
    cnt[:-1, :] += 1.0
    cnt[:, 1:] += 1.0
    cnt[:, :-1] += 1.0
    for it in range(max_iters):
        # Neighbor sum accumulated in fixed order: up, down, left, right.
        acc = np.zeros((h, w), dtype=np.float64)
        acc[1:, :] += u[:-1, :]
        acc[:-1, :] += u[1:, :]
        acc[:, 1:] += u[:, :-1]
        acc[:, :-1] += u[:, 1:]
        new_vals = acc[hole_b] / cnt[hole_b]
        delta = np.abs(new_vals - u[hole_b]).max()
        u[hole_b] = new_vals
        if delta < tol:
            return it + 1
    return max_iters


def rle_encode(flat: np.ndarray) -> np.ndarray:
    """Run lengths of a flat 0/1 array, starting with the zero run.

    The first count is the length of the leading run of zeros (may be 0),
    after which values alternate. Matches the uncompressed COCO counts
    convention for whatever pixel order the caller flattened with.
    """
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    if flat.size == 0:
        return np.zeros(0, dtype=np.int64)
    breaks = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], breaks, [flat.size]))
    counts = np.diff(bounds).astype(np.int64)
    if flat[0] == 1:
        counts = np.concatenate(([np.int64(0)], counts))
    return counts


def rle_decode(counts: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`rle_encode`; returns a uint8 0/1 array of length ``n``."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise ValueError("negative run length")
    total = int(counts.sum())
    if total != n:
        raise ValueError(f"run lengths sum to {total}, expected {n}")
    values = np.zeros(counts.size, dtype=np.uint8)
    values[1::2] = 1
    return np.repeat(values, counts)
