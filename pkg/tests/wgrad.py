"""Finite-difference check of encoder-weight gradients against the frozen-margin oracle."""

import numpy as np

from oracles import frozen_total, kink_entries
from sparcl_kit.batching import alignment_matrix
from sparcl_kit.losses import LossConfig
from sparcl_kit.trainer import EncoderParams, loss_and_grads


def _unit(Y):
    return Y / np.linalg.norm(Y, axis=1, keepdims=True)


def random_problem(seed, n=2, D=8, d=4):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3 * n, D))
    T = rng.standard_normal((3 * n, D))
    p = EncoderParams(rng.standard_normal((D, d)), rng.standard_normal((D, d)))
    return X, T, p


def similarity(p, X, T):
    return _unit(X @ p.W_img) @ _unit(T @ p.W_txt).T


def weight_grad_error(seed, cfg: LossConfig, n=2, h=1e-6, guard=1e-4):
    """Max relative error of dL/dW, or None when the sample sits within ``guard`` of a kink."""
    X, T, p = random_problem(seed, n)
    S_ref = similarity(p, X, T)
    if cfg.lam > 0 and np.any(kink_entries(S_ref.tolist(), n, cfg, guard)):
        return None
    M = alignment_matrix(n)
    _, g, _ = loss_and_grads(p, X, T, M, n, cfg)
    Ml = M.tolist()

    def f(q):
        return frozen_total(similarity(q, X, T).tolist(), S_ref.tolist(), Ml, n, cfg)

    worst = 0.0
    for name in ("W_img", "W_txt"):
        W = getattr(p, name)
        num = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            hi, lo = p.copy(), p.copy()
            getattr(hi, name)[idx] += h
            getattr(lo, name)[idx] -= h
            num[idx] = (f(hi) - f(lo)) / (2 * h)
        ana = getattr(g, name)
        worst = max(worst, float(np.max(np.abs(ana - num)) / max(np.max(np.abs(num)), 1e-12)))
    return worst
