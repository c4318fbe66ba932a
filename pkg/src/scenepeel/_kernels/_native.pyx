# Compiled implementations of the hot kernels. Must stay bit-compatible
# with _fallback.py: same neighbor accumulation order (up, down, left,
# right), same stopping rule, same RLE conventions.

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "native"


def jacobi_fill(cnp.float64_t[:, ::1] u, cnp.uint8_t[:, ::1] hole,
                double tol, int max_iters):
    """Relax hole pixels of ``u`` toward the discrete harmonic solution.

    Simultaneous (Jacobi) update of hole pixels to the mean of in-canvas
    4-neighbors; stops when the max per-pixel change drops below ``tol``
    or after ``max_iters`` sweeps. In-place; returns sweeps run.
    """
    cdef Py_ssize_t h = u.shape[0]
    cdef Py_ssize_t w = u.shape[1]
    cdef Py_ssize_t n_hole = 0
    cdef Py_ssize_t y, x, k
    for y in range(h):
        for x in range(w):
            if hole[y, x]:
                n_hole += 1
    if n_hole == 0:
        return 0

    cdef cnp.int64_t[::1] ys = np.empty(n_hole, dtype=np.int64)
    cdef cnp.int64_t[::1] xs = np.empty(n_hole, dtype=np.int64)
    k = 0
    for y in range(h):
        for x in range(w):
            if hole[y, x]:
                ys[k] = y
                xs[k] = x
                k += 1

    cdef cnp.float64_t[::1] new_vals = np.empty(n_hole, dtype=np.float64)
    cdef double acc, cnt, delta, d
    cdef int it
    for it in range(max_iters):
        delta = 0.0
        for k in range(n_hole):
            y = ys[k]
            x = xs[k]
            acc = 0.0
            cnt = 0.0
            if y > 0:
                acc += u[y - 1, x]
                cnt += 1.0
            if y < h - 1:
                acc += u[y + 1, x]
                cnt += 1.0
            if x > 0:
                acc += u[y, x - 1]
                cnt += 1.0
            if x < w - 1:
                acc += u[y, x + 1]
                cnt += 1.0
            new_vals[k] = acc / cnt
            d = new_vals[k] - u[y, x]
            if d < 0:
                d = -d
            if d > delta:
                delta = d
        for k in range(n_hole):
            u[ys[k], xs[k]] = new_vals[k]
        if delta < tol:
            return it + 1
    return max_iters


def rle_encode(cnp.uint8_t[::1] flat):
    """Run lengths of a flat 0/1 array, starting with the zero run."""
    cdef Py_ssize_t n = flat.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cdef list counts = []
    cdef cnp.uint8_t current = 0
    cdef cnp.int64_t run = 0
    cdef Py_ssize_t i
    for i in range(n):
        if flat[i] == current:
            run += 1
        else:
            counts.append(run)
            current = flat[i]
            run = 1
    counts.append(run)
    return np.asarray(counts, dtype=np.int64)


def rle_decode(cnp.int64_t[::1] counts, Py_ssize_t n):
    """Inverse of rle_encode; returns a uint8 0/1 array of length ``n``."""
    out = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] out_v = out
    cdef Py_ssize_t pos = 0
    cdef cnp.uint8_t value = 0
    cdef Py_ssize_t i, j
    cdef cnp.int64_t c
    for i in range(counts.shape[0]):
        c = counts[i]
        if c < 0:
            raise ValueError("negative run length")
        if pos + c > n:
            raise ValueError(f"run lengths sum past {n}")
        if value:
            for j in range(pos, pos + c):
                out_v[j] = 1
        pos += c
        value = 1 - value
    if pos != n:
        raise ValueError(f"run lengths sum to {pos}, expected {n}")
    return out
