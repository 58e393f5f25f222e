"""Small dense linear-algebra helpers shared across modules."""

import numpy as np


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetrize a square matrix (averages away round-off asymmetry)."""
    return 0.5 * (a + a.T)


def inv_sqrt_psd(a: np.ndarray, floor_rel: float = 1e-12) -> np.ndarray:
    """Symmetric inverse square root of a symmetric PSD matrix.

    Eigenvalues below ``floor_rel * max_eig`` are floored there so the result
    stays finite for nearly singular inputs.
    """
    vals, vecs = np.linalg.eigh(sym(a))
    floor = max(vals.max(), 0.0) * floor_rel
    if floor <= 0.0:
        floor = floor_rel
    vals = np.maximum(vals, floor)
    return (vecs / np.sqrt(vals)) @ vecs.T


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans of a and b.

    Inputs need not be orthonormal; each is orthonormalized first.
    """
    qa = np.linalg.qr(np.atleast_2d(a))[0]
    qb = np.linalg.qr(np.atleast_2d(b))[0]
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(np.sort(sv)[::-1], -1.0, 1.0))


def max_principal_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Largest principal angle between two column spans, in degrees."""
    return float(np.degrees(principal_angles(a, b).max()))


def orthonormal_completion(q: np.ndarray) -> np.ndarray:
    """Columns completing the orthonormal set ``q`` to a full basis of R^m."""
    m, k = q.shape
    if k >= m:
        return np.zeros((m, 0))
    # Project the identity onto the complement and keep an orthonormal basis.
    resid = np.eye(m) - q @ q.T
    u, s, _ = np.linalg.svd(resid)
    return u[:, : m - k]


def fix_column_signs(w: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-magnitude entry is positive.

    Makes eigenvector matrices reproducible across runs and BLAS builds.
    """
    w = np.asarray(w)
    idx = np.argmax(np.abs(w), axis=0)
    signs = np.sign(w[idx, np.arange(w.shape[1])])
    signs[signs == 0] = 1.0
    return w * signs
