"""Dense linear solving for the geometric reconstruction attacks.

Gaussian elimination with scaled partial pivoting, written out rather than
delegated, because the attacks need a hard failure signal: when the chosen
probe geometry yields a system whose best pivot is negligible relative to its
row scale, the solver raises :class:`SingularSystemError` so the caller can
resample its probes instead of accepting an unreliable solution.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularSystemError
from .validation import as_vector

PIVOT_RTOL = 1e-12


def solve_linear_system(a, b, *, pivot_rtol: float = PIVOT_RTOL) -> np.ndarray:
    """Solve ``a @ x == b`` for square ``a``.

    Raises :class:`SingularSystemError` when any pivot, after scaled partial
    pivoting, falls at or below ``pivot_rtol`` times its row's scale.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError(f"coefficient matrix must be square and nonempty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("coefficient matrix contains non-finite values")
    n = a.shape[0]
    b = as_vector(b, name="right-hand side", dim=n).copy()

    scale = np.max(np.abs(a), axis=1)
    if np.any(scale == 0.0):
        raise SingularSystemError("singular system: zero row in coefficient matrix")

    for k in range(n - 1):
        p = k + int(np.argmax(np.abs(a[k:, k]) / scale[k:]))
        if abs(a[p, k]) <= pivot_rtol * scale[p]:
            raise SingularSystemError(f"singular system: no usable pivot in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
            scale[[k, p]] = scale[[p, k]]
        m = a[k + 1:, k] / a[k, k]
        a[k + 1:, k + 1:] -= np.outer(m, a[k, k + 1:])
        b[k + 1:] -= m * b[k]
    if abs(a[n - 1, n - 1]) <= pivot_rtol * scale[n - 1]:
        raise SingularSystemError(f"singular system: no usable pivot in column {n - 1}")

    x = np.empty(n, dtype=np.float64)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


def sphere_center(points, sq_distances=None, *, pivot_rtol: float = PIVOT_RTOL) -> np.ndarray:
    """Recover the center of a sphere from ``d + 1`` points on its surface.

    Each point ``q_i`` satisfies ``||q_i - c||^2 == s_i``. Subtracting the last
    point's equation from the others cancels both ``||c||^2`` and, when all
    distances are equal, the unknown radius, leaving the d-by-d linear system

        2 (q_last - q_i) . c  ==  (s_i - s_last) + ||q_last||^2 - ||q_i||^2.

    ``sq_distances`` supplies per-point squared distances; omit it when all
    points share one (unknown) radius.
    """
    pts = np.array(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {pts.shape}")
    n, d = pts.shape
    if n != d + 1:
        raise ValueError(f"need exactly {d + 1} points in dimension {d}, got {n}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")

    sq_norms = np.einsum("ij,ij->i", pts, pts)
    rhs = sq_norms[-1] - sq_norms[:-1]
    if sq_distances is not None:
        s = as_vector(sq_distances, name="sq_distances", dim=n)
        rhs = rhs + (s[:-1] - s[-1])
    coeffs = 2.0 * (pts[-1] - pts[:-1])
    return solve_linear_system(coeffs, rhs, pivot_rtol=pivot_rtol)
