"""Independent brute-force oracles: slow, loop-based, dense on purpose.

Everything here recomputes quantities by a different route than the
production code (explicit stencils, dense matrices, matrix powers, direct
solves), so agreement is meaningful.
"""
import numpy as np

from graphdenoise import DenoiserOperator, FeatureField, MetricFactor, filter_weight


def stencil_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise central/one-sided differences via explicit loops."""
    h, w = img.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            if w >= 2:
                if c == 0:
                    gx[r, c] = img[r, 1] - img[r, 0]
                elif c == w - 1:
                    gx[r, c] = img[r, w - 1] - img[r, w - 2]
                else:
                    gx[r, c] = (img[r, c + 1] - img[r, c - 1]) / 2.0
            if h >= 2:
                if r == 0:
                    gy[r, c] = img[1, c] - img[0, c]
                elif r == h - 1:
                    gy[r, c] = img[h - 1, c] - img[h - 2, c]
                else:
                    gy[r, c] = (img[r + 1, c] - img[r - 1, c]) / 2.0
    return gx, gy


def dense_filter_matrix(field: FeatureField, metric: MetricFactor, radius: int) -> np.ndarray:
    """Dense weight matrix: every pair checked against the Chebyshev window."""
    side = field.patch_side
    n = side * side
    dense = np.zeros((n, n))
    for i in range(n):
        ri, ci = divmod(i, side)
        for j in range(n):
            rj, cj = divmod(j, side)
            if max(abs(ri - rj), abs(ci - cj)) <= radius:
                dense[i, j] = filter_weight(field.features[i], field.features[j], metric)
    return dense


def dense_normalize(dense_b: np.ndarray) -> np.ndarray:
    s = dense_b.sum(axis=1)
    inv_sqrt = np.diag(1.0 / np.sqrt(s))
    return inv_sqrt @ dense_b @ inv_sqrt


def dense_truncated_inverse_matrix(
    psi_dense: np.ndarray, degree_K: int, s: float, coeffs: np.ndarray
) -> np.ndarray:
    """sum_k a_k / s^{k+1} (Psi - s I)^k accumulated from explicit powers."""
    n = psi_dense.shape[0]
    shifted = psi_dense - s * np.eye(n)
    result = np.zeros((n, n))
    term = np.eye(n)
    for k in range(degree_K + 1):
        result += coeffs[k] / s ** (k + 1) * term
        term = term @ shifted
    return result


def random_spd(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    """Symmetric matrix with eigenvalues drawn uniformly from [lo, hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(lo, hi, n)
    a = (q * lam) @ q.T
    return (a + a.T) / 2.0


def operator_with_spectrum(
    rng: np.random.Generator, n: int, lo: float, hi: float
) -> DenoiserOperator:
    return DenoiserOperator.from_dense(random_spd(rng, n, lo, hi))


def random_patch(seed: int, side: int) -> np.ndarray:
    return np.random.default_rng(seed).random(side * side)
