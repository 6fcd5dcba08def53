"""Dense float64 kernels shared by the rest of the package."""

import math

import numpy as np

from .errors import DimMismatch, EmptyMap, ZeroRow

ZERO_NORM = 1e-12


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimMismatch(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def l2_normalize_rows(m) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises ZeroRow when any row norm falls below 1e-12.
    """
    a = as_matrix(m)
    norms = row_norms(a)
    if np.any(norms < ZERO_NORM):
        bad = int(np.argmax(norms < ZERO_NORM))
        raise ZeroRow(f"row {bad} has norm {norms[bad]:.3g}")
    return a / norms[:, None]


def cosine_similarity_matrix(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] < 1:
        raise DimMismatch("feature dim must be >= 1")
    return l2_normalize_rows(a) @ l2_normalize_rows(b).T


def log1p_exp(x):
    """Numerically stable softplus, log(1 + exp(x)).

    Works on scalars and arrays; never overflows.
    """
    if np.ndim(x) == 0:
        x = float(x)
        if x > 0:
            return x + math.log1p(math.exp(-x))
        return math.log1p(math.exp(x))
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def channel_stats(f, eps: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel population mean and sqrt(variance + eps) of a C x H x W map."""
    a = np.asarray(f, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] * a.shape[2] < 1 or a.shape[0] < 1:
        raise EmptyMap(f"feature map must be C x H x W with H*W >= 1, got {a.shape}")
    flat = a.reshape(a.shape[0], -1)
    mean = flat.mean(axis=1)
    var = ((flat - mean[:, None]) ** 2).mean(axis=1)
    return mean, np.sqrt(var + eps)
