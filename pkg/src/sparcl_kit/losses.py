"""Sigmoid contrastive loss and the stratified (adaptive) margin loss.

Every loss returns its value together with the gradient with respect to the
similarity matrix ``S`` (rows: images, columns: captions). The margin ``m`` is
treated as a constant in the backward pass.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .batching import margin_triples
from .errors import InvalidConfig, InvalidMode, ShapeMismatch
from .numkit import log1p_exp, sigmoid

MARGIN_MODES = ("none", "fixed", "adaptive", "adaptive_inverse")
TERM_NAMES = ("pos_hard", "hard_easy", "pos_real")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.01
    b: float = -30.0
    lam: float = 0.01
    alpha: float = 10.0
    m0: float = 0.005
    beta: float = -0.02
    gamma: float = 1.0
    margin_mode: str = "adaptive"

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidConfig("tau must be > 0")
        if not self.beta < 0 < self.m0:
            raise InvalidConfig("need beta < 0 < m0")
        if not self.lam >= 0:
            raise InvalidConfig("lam must be >= 0")
        if not self.alpha >= 0:
            raise InvalidConfig("alpha must be >= 0")
        if not self.gamma >= 0:
            raise InvalidConfig("gamma must be >= 0")
        if self.margin_mode not in MARGIN_MODES:
            raise InvalidMode(f"unknown margin mode {self.margin_mode!r}")

    def replace(self, **changes) -> "LossConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_square(S: np.ndarray, n: int | None = None) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(f"similarity matrix must be square, got {S.shape}")
    if n is not None and S.shape[0] != 3 * n:
        raise ShapeMismatch(f"expected {3 * n} x {3 * n} similarities for n={n}, got {S.shape}")
    return S


def sigmoid_contrastive_loss(S, M, tau: float, b: float) -> tuple[float, np.ndarray]:
    """Mean over rows of the summed per-pair logistic losses on labels ``M``."""
    S = np.asarray(S, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if S.shape != M.shape or S.ndim != 2:
        raise ShapeMismatch(f"S {S.shape} and M {M.shape} must be equal 2-D shapes")
    rows = S.shape[0]
    z = -M * (S / tau + b)
    loss = float(np.sum(log1p_exp(z))) / rows
    grad = (-M / tau) * sigmoid(z) / rows
    return loss, grad


def adaptive_margin(d, cfg: LossConfig):
    """Margin schedule: zero loss below ``beta``, larger margin for harder pairs, ``m0`` cap."""
    d = np.asarray(d, dtype=np.float64)
    m0, beta, gamma = cfg.m0, cfg.beta, cfg.gamma
    mid = ((m0 - d) / (m0 - beta) * gamma + 1.0) * m0
    m = np.where(d < beta, d, np.where(d <= m0, mid, m0))
    return float(m) if m.ndim == 0 else m


def inverse_adaptive_margin(d, cfg: LossConfig):
    """Mirror of adaptive_margin: the margin grows with d on [beta, m0], capped at (gamma+1)*m0."""
    d = np.asarray(d, dtype=np.float64)
    m0, beta, gamma = cfg.m0, cfg.beta, cfg.gamma
    mid = ((d - beta) / (m0 - beta) * gamma + 1.0) * m0
    m = np.where(d < beta, d, np.where(d <= m0, mid, (gamma + 1.0) * m0))
    return float(m) if m.ndim == 0 else m


def margin_for_mode(d, cfg: LossConfig):
    mode = cfg.margin_mode
    if mode == "fixed":
        if np.ndim(d) == 0:
            return cfg.m0
        return np.full(np.shape(d), cfg.m0)
    if mode == "adaptive":
        return adaptive_margin(d, cfg)
    if mode == "adaptive_inverse":
        return inverse_adaptive_margin(d, cfg)
    raise InvalidMode(f"margin mode {mode!r} has no margin")


def hinge_terms(S: np.ndarray, n: int, cfg: LossConfig):
    """Per-comparison hinge values for each of the three terms (image side).

    Yields ``(triples, hinge)`` with ``hinge = max(0, m - d)`` and
    ``d = S[a, j1] - S[a, j2]``; exact zeros whenever ``m == d``.
    """
    for t in margin_triples(n):
        d = S[t.anchor, t.j1] - S[t.anchor, t.j2]
        m = margin_for_mode(d, cfg)
        yield t, np.maximum(m - d, 0.0)


def margin_loss_image_side(S, n: int, cfg: LossConfig, with_parts: bool = False):
    S = _check_square(S, n)
    if cfg.margin_mode == "none":
        raise InvalidMode("margin loss requested with margin_mode='none'")
    rows = 3 * n
    term_scale = (1.0, 1.0, cfg.alpha)
    flat = np.zeros(rows * rows)
    parts = {}
    total = 0.0
    for name, scale, (t, h) in zip(TERM_NAMES, term_scale, hinge_terms(S, n, cfg)):
        value = scale * float(np.sum(t.weight * h)) / rows
        parts[name] = value
        total += value
        coef = np.where(h > 0, scale * t.weight / rows, 0.0)
        base = t.anchor * rows
        # d(m - S[a,j1] + S[a,j2]) with m held fixed
        flat += np.bincount(base + t.j2, weights=coef, minlength=rows * rows)
        flat -= np.bincount(base + t.j1, weights=coef, minlength=rows * rows)
    grad = flat.reshape(rows, rows)
    if with_parts:
        return total, grad, parts
    return total, grad


def margin_loss_text_side(S, n: int, cfg: LossConfig, with_parts: bool = False):
    """Caption-anchored margin loss: the image-side loss on the transposed matrix."""
    S = _check_square(S, n)
    out = margin_loss_image_side(S.T, n, cfg, with_parts=with_parts)
    if with_parts:
        return out[0], out[1].T, out[2]
    return out[0], out[1].T


def total_loss(S, M, n: int, cfg: LossConfig) -> tuple[float, np.ndarray, dict]:
    """Contrastive loss plus ``lam`` times the image- and text-side margin losses.

    ``parts`` holds ``loss_con``, ``loss_mar_img``, ``loss_mar_txt`` and the
    per-term breakdown of each side.
    """
    S = _check_square(S)
    if cfg.lam > 0 and cfg.margin_mode == "none":
        raise InvalidConfig("lam > 0 requires a margin mode other than 'none'")
    l_con, grad = sigmoid_contrastive_loss(S, M, cfg.tau, cfg.b)
    parts = {"loss_con": l_con, "loss_mar_img": 0.0, "loss_mar_txt": 0.0}
    total = l_con
    if cfg.lam > 0:
        _check_square(S, n)
        l_img, g_img, p_img = margin_loss_image_side(S, n, cfg, with_parts=True)
        l_txt, g_txt, p_txt = margin_loss_text_side(S, n, cfg, with_parts=True)
        parts["loss_mar_img"] = l_img
        parts["loss_mar_txt"] = l_txt
        parts.update({f"img_{k}": v for k, v in p_img.items()})
        parts.update({f"txt_{k}": v for k, v in p_txt.items()})
        total = l_con + cfg.lam * (l_img + l_txt)
        grad = grad + cfg.lam * (g_img + g_txt)
    parts["loss_total"] = total
    return total, grad, parts
