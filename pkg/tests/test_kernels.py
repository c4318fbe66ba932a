"""Backend equivalence and behavior of the hot kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenepeel import _kernels
from scenepeel._kernels import _fallback

native = pytest.importorskip("scenepeel._kernels._native") if _kernels.BACKEND == "native" else None

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


def _random_mask(rng, h, w, p=0.3):
    return (rng.random((h, w)) < p).astype(np.uint8)


@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
@settings(max_examples=60, deadline=None)
def test_rle_round_trip(seed, h, w):
    rng = np.random.default_rng(seed)
    flat = _random_mask(rng, h, w).ravel()
    counts = _kernels.rle_encode(flat)
    back = _kernels.rle_decode(counts, flat.size)
    assert np.array_equal(back, flat)
    # counts alternate and start with the zero run
    assert counts.sum() == flat.size
    if flat[0] == 1:
        assert counts[0] == 0


def test_rle_hand_example():
    flat = np.array([0, 0, 1, 1, 1, 0, 1], dtype=np.uint8)
    assert _kernels.rle_encode(flat).tolist() == [2, 3, 1, 1]
    flat = np.array([1, 1, 0], dtype=np.uint8)
    assert _kernels.rle_encode(flat).tolist() == [0, 2, 1]
    assert _kernels.rle_encode(np.zeros(0, dtype=np.uint8)).tolist() == []


def test_rle_decode_rejects_bad_counts():
    with pytest.raises(ValueError):
        _kernels.rle_decode(np.array([3], dtype=np.int64), 5)
    with pytest.raises(ValueError):
        _kernels.rle_decode(np.array([-1, 6], dtype=np.int64), 5)


@pytest.mark.skipif(_kernels.BACKEND != "native", reason="compiled backend unavailable")
def test_backends_bit_identical_rle():
    rng = np.random.default_rng(0)
    for _ in range(25):
        flat = _random_mask(rng, rng.integers(1, 64), rng.integers(1, 64)).ravel()
        a = native.rle_encode(np.ascontiguousarray(flat))
        b = _fallback.rle_encode(flat)
        assert np.array_equal(a, b)
        assert np.array_equal(
            native.rle_decode(np.ascontiguousarray(a), flat.size),
            _fallback.rle_decode(a, flat.size),
        )


@pytest.mark.skipif(_kernels.BACKEND != "native", reason="compiled backend unavailable")
def test_backends_bit_identical_jacobi():
    rng = np.random.default_rng(1)
    for _ in range(10):
        h, w = int(rng.integers(6, 24)), int(rng.integers(6, 24))
        u0 = rng.random((h, w))
        hole = _random_mask(rng, h, w, p=0.35).astype(bool)
        hole[0, 0] = False  # keep at least one anchor
        ua = np.ascontiguousarray(u0.copy())
        ub = u0.copy()
        ia = native.jacobi_fill(ua, np.ascontiguousarray(hole, dtype=np.uint8), 1e-7, 500)
        ib = _fallback.jacobi_fill(ub, hole.astype(np.uint8), 1e-7, 500)
        assert ia == ib
        assert np.array_equal(ua, ub)


def test_harmonic_fill_constant_boundary():
    u = np.full((12, 12), 0.7)
    hole = np.zeros((12, 12), dtype=bool)
    hole[4:8, 4:8] = True
    u[hole] = 0.0
    filled, iters = _kernels.harmonic_fill(u, hole, 1e-9, 10_000)
    assert iters > 0
    assert np.allclose(filled[hole], 0.7, atol=1e-6)
    assert np.array_equal(filled[~hole], u[~hole])


def test_harmonic_fill_matches_direct_laplace_solve():
    # small grid: solve the Dirichlet system exactly and compare
    rng = np.random.default_rng(3)
    h, w = 7, 6
    u = rng.random((h, w))
    hole = np.zeros((h, w), dtype=bool)
    hole[2:5, 2:4] = True
    filled, _ = _kernels.harmonic_fill(u, hole, 1e-12, 100_000)

    idx = {p: k for k, p in enumerate(zip(*np.nonzero(hole)))}
    n = len(idx)
    A = np.zeros((n, n))
    b = np.zeros(n)
    for (y, x), k in idx.items():
        neighbors = [(y + dy, x + dx) for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1))
                     if 0 <= y + dy < h and 0 <= x + dx < w]
        A[k, k] = len(neighbors)
        for p in neighbors:
            if p in idx:
                A[k, idx[p]] -= 1
            else:
                b[k] += u[p]
    exact = np.linalg.solve(A, b)
    got = np.array([filled[p] for p in idx])
    assert np.allclose(got, exact, atol=1e-8)


def test_harmonic_fill_rejects_full_canvas_hole():
    u = np.zeros((5, 5))
    with pytest.raises(ValueError):
        _kernels.harmonic_fill(u, np.ones((5, 5), dtype=bool), 1e-6, 10)


def test_harmonic_fill_empty_hole_identity():
    u = np.random.default_rng(0).random((6, 6))
    filled, iters = _kernels.harmonic_fill(u, np.zeros((6, 6), dtype=bool), 1e-6, 10)
    assert iters == 0
    assert np.array_equal(filled, u)
