"""Toy dual-encoder training with AdamW and a cosine learning-rate schedule."""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import toyworld
from .batching import alignment_matrix, build_batch, build_real_batch
from .errors import (
    DimMismatch,
    DivergenceDetected,
    EmptyEvalSet,
    InvalidConfig,
    ShapeMismatch,
    SparclError,
    ZeroRow,
)
from .losses import LossConfig, total_loss
from .numkit import ZERO_NORM, row_norms
from .toyworld import EDIT_KINDS, World, WorldConfig

REFERENCE_BATCH_ROWS = 256
LOG_FIELDS = ("step", "lr", "loss_con", "loss_mar_img", "loss_mar_txt", "loss_total")
TRAIN_STREAM_BASE = 1000


def toy_loss_config() -> LossConfig:
    """Loss settings for from-scratch toy encoders.

    With the LossConfig defaults (tau=0.01, b=-30) the decision threshold sits
    at cosine 0.3, which one-slot hard negatives cannot reach here. tau=0.05,
    b=-17 moves it to cosine 0.85, and the margin window scales with tau.
    """
    return LossConfig(tau=0.05, b=-17.0, lam=10.0, alpha=10.0, m0=0.025, beta=-0.1, gamma=1.0, margin_mode="adaptive")


@dataclass
class EncoderParams:
    W_img: np.ndarray
    W_txt: np.ndarray

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.W_img.copy(), self.W_txt.copy())


@dataclass(frozen=True)
class TrainConfig:
    n_groups: int = 32
    total_steps: int = 2000
    base_lr: float = 0.01
    weight_decay: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    d_emb: int = 16
    use_synthetic: bool = True
    eval_per_kind: int = 500
    dataset_path: str | None = None
    loss: LossConfig = field(default_factory=toy_loss_config)
    world: WorldConfig = field(default_factory=WorldConfig)

    def __post_init__(self):
        if self.n_groups < 1:
            raise InvalidConfig("n_groups must be >= 1")
        if self.total_steps < 0:
            raise InvalidConfig("total_steps must be >= 0")
        if not self.base_lr > 0:
            raise InvalidConfig("base_lr must be > 0")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be >= 0")
        if self.d_emb < 2:
            raise InvalidConfig("d_emb must be >= 2")
        if self.eval_per_kind < 1:
            raise InvalidConfig("eval_per_kind must be >= 1")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")
        if not self.use_synthetic and self.loss.lam > 0:
            raise InvalidConfig("real-only training has no margin sets; set lam = 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MetricsLog:
    records: list[dict] = field(default_factory=list)
    accuracy: dict[str, float] = field(default_factory=dict)


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "AdamState":
        arrays = [params.W_img, params.W_txt]
        return cls(0, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


# -- encoders --------------------------------------------------------------


def init_params(cfg: TrainConfig) -> EncoderParams:
    rng = toyworld.make_rng(cfg.seed, toyworld.STREAM_INIT, 1)
    w = cfg.world
    return EncoderParams(
        W_img=rng.standard_normal((w.dim_img, cfg.d_emb)) / math.sqrt(w.dim_img),
        W_txt=rng.standard_normal((w.dim_txt, cfg.d_emb)) / math.sqrt(w.dim_txt),
    )


def _weights(params: EncoderParams, which: str) -> np.ndarray:
    if which == "image":
        return params.W_img
    if which == "text":
        return params.W_txt
    raise ValueError(f"which must be 'image' or 'text', not {which!r}")


def encode_with_cache(params: EncoderParams, X, which: str):
    X = np.asarray(X, dtype=np.float64)
    W = _weights(params, which)
    if X.ndim != 2 or X.shape[1] != W.shape[0]:
        raise DimMismatch(f"{which} inputs have shape {X.shape}, encoder expects {W.shape[0]} features")
    Y = X @ W
    norms = row_norms(Y)
    if np.any(norms < ZERO_NORM):
        raise ZeroRow(f"{which} embedding has a zero row")
    U = Y / norms[:, None]
    return U, (X, U, norms)


def encode(params: EncoderParams, X, which: str) -> np.ndarray:
    """Project raw features and normalise each row to unit length."""
    return encode_with_cache(params, X, which)[0]


def encode_backward(cache, dU: np.ndarray) -> np.ndarray:
    """dL/dW from dL/dU through the unit-normalisation Jacobian (I - u u^T)/|y|."""
    X, U, norms = cache
    radial = np.einsum("ij,ij->i", dU, U)
    dY = (dU - U * radial[:, None]) / norms[:, None]
    return X.T @ dY


def loss_and_grads(params: EncoderParams, images, captions, M, n: int, loss_cfg: LossConfig):
    U_img, c_img = encode_with_cache(params, images, "image")
    U_txt, c_txt = encode_with_cache(params, captions, "text")
    S = U_img @ U_txt.T
    value, dS, parts = total_loss(S, M, n, loss_cfg)
    grads = EncoderParams(
        W_img=encode_backward(c_img, dS @ U_txt),
        W_txt=encode_backward(c_txt, dS.T @ U_img),
    )
    return value, grads, parts


# -- optimisation ----------------------------------------------------------


def effective_lr(cfg: TrainConfig) -> float:
    rows = 3 * cfg.n_groups * 2
    return cfg.base_lr * rows / REFERENCE_BATCH_ROWS


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if cfg.total_steps == 0:
        return effective_lr(cfg)
    return 0.5 * effective_lr(cfg) * (1.0 + math.cos(math.pi * step / cfg.total_steps))


def adamw_step(
    params: EncoderParams,
    grads: EncoderParams,
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> tuple[EncoderParams, AdamState]:
    b1, b2, eps, wd = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(
        (params.W_img, params.W_txt), (grads.W_img, grads.W_txt), state.m, state.v
    ):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        p = p * (1.0 - lr * wd)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    return EncoderParams(*new_p), AdamState(t, new_m, new_v)


# -- data ------------------------------------------------------------------


class _GroupSource:
    def __init__(self, cfg: TrainConfig, world: World):
        self.cfg = cfg
        self.world = world
        self.fixed = None
        if cfg.dataset_path:
            _, self.fixed = toyworld.read_dataset(cfg.dataset_path)
            if self.fixed[0].img_r.shape[0] != cfg.world.dim_img:
                raise DimMismatch("dataset image dim does not match world config")

    def batch(self, step: int):
        n = self.cfg.n_groups
        idx = range(step * n, (step + 1) * n)
        if self.fixed is not None:
            groups = [self.fixed[i % len(self.fixed)] for i in idx]
        else:
            stream = TRAIN_STREAM_BASE + self.cfg.seed
            groups = [toyworld.group_at(self.world, stream, i) for i in idx]
        if self.cfg.use_synthetic:
            return build_batch(groups)
        return build_real_batch(groups)


def _real_only_labels(n: int) -> np.ndarray:
    return 2 * np.eye(n, dtype=np.int8) - 1


def train(cfg: TrainConfig) -> tuple[EncoderParams, MetricsLog]:
    """Run the reference single-threaded training loop."""
    world = World(cfg.world)
    params = init_params(cfg)
    log = MetricsLog()
    if cfg.total_steps == 0:
        return params, log
    source = _GroupSource(cfg, world)
    n = cfg.n_groups
    M = alignment_matrix(n) if cfg.use_synthetic else _real_only_labels(n)
    state = AdamState.zeros_like(params)
    for step in range(cfg.total_steps):
        batch = source.batch(step)
        value, grads, parts = loss_and_grads(params, batch.images, batch.captions, M, n, cfg.loss)
        if not math.isfinite(value):
            raise DivergenceDetected(step, value)
        lr = cosine_lr(step, cfg)
        log.records.append(
            {
                "step": step,
                "lr": lr,
                "loss_con": parts["loss_con"],
                "loss_mar_img": parts["loss_mar_img"],
                "loss_mar_txt": parts["loss_mar_txt"],
                "loss_total": value,
            }
        )
        params, state = adamw_step(params, grads, state, lr, cfg)
    return params, log


# -- evaluation ------------------------------------------------------------


def eval_cases(cfg: TrainConfig, world: World | None = None) -> list[toyworld.EvalCase]:
    """Held-out cases from the world's eval stream, identical for every run on a world."""
    world = world or World(cfg.world)
    cases = []
    for k, kind in enumerate(EDIT_KINDS):
        rng = toyworld.make_rng(cfg.world.seed, toyworld.STREAM_EVAL, k)
        cases.extend(toyworld.make_eval_set(rng, world, cfg.eval_per_kind, kind))
    return cases


def evaluate(params: EncoderParams, cases: list[toyworld.EvalCase]) -> dict[str, float]:
    """Fraction of cases whose positive caption scores strictly above the negative."""
    if not cases:
        raise EmptyEvalSet("evaluation needs at least one case")
    img = encode(params, np.stack([c.image for c in cases]), "image")
    pos = encode(params, np.stack([c.caption_pos for c in cases]), "text")
    neg = encode(params, np.stack([c.caption_neg for c in cases]), "text")
    correct = np.einsum("ij,ij->i", img, pos) > np.einsum("ij,ij->i", img, neg)
    kinds = np.array([c.edit_kind for c in cases])
    acc = {}
    for kind in EDIT_KINDS:
        mask = kinds == kind
        if mask.any():
            acc[kind] = float(correct[mask].mean())
    acc["overall"] = float(correct.mean())
    return acc


def train_and_evaluate(cfg: TrainConfig) -> tuple[EncoderParams, MetricsLog]:
    params, log = train(cfg)
    log.accuracy = evaluate(params, eval_cases(cfg))
    return params, log


# -- ablation --------------------------------------------------------------


def _run_cell(cfg: TrainConfig) -> dict:
    row = {"mode": cfg.loss.margin_mode, "seed": cfg.seed}
    try:
        _, log = train_and_evaluate(cfg)
    except SparclError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update({f"acc_{k}": v for k, v in log.accuracy.items()})
    row["final_loss"] = log.records[-1]["loss_total"] if log.records else float("nan")
    return row


def ablate(base_cfg: TrainConfig, modes: list[str], seeds: list[int], workers: int | None = None) -> list[dict]:
    """Train+evaluate every (mode, seed) cell; append one mean/std summary row per mode.

    Mode ``none`` is the no-margin baseline and forces ``lam = 0``.

    Cells sharing a seed see the same data stream. Errors are reported per
    cell under an ``error`` key rather than aborting the sweep.
    """
    if not modes or not seeds:
        raise InvalidConfig("ablation needs at least one mode and one seed")
    cells = []
    for mode in modes:
        for seed in seeds:
            try:
                loss = base_cfg.loss.replace(margin_mode=mode)
                if mode == "none":
                    loss = loss.replace(lam=0.0)
                cells.append(base_cfg.replace(seed=seed, loss=loss))
            except SparclError as exc:
                cells.append({"mode": mode, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    workers = workers if workers is not None else thread_budget()
    runnable = [c for c in cells if isinstance(c, TrainConfig)]
    if workers > 1 and len(runnable) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = iter(list(pool.map(_run_cell, runnable)))
    else:
        results = iter([_run_cell(c) for c in runnable])
    rows = [next(results) if isinstance(c, TrainConfig) else c for c in cells]

    for mode in modes:
        ok = [r for r in rows if r["mode"] == mode and "error" not in r]
        summary = {"mode": mode, "seed": "summary", "cells": len(ok)}
        for key in [f"acc_{k}" for k in (*EDIT_KINDS, "overall")]:
            vals = np.array([r[key] for r in ok])
            summary[f"{key}_mean"] = float(vals.mean()) if ok else float("nan")
            summary[f"{key}_std"] = float(vals.std(ddof=1)) if len(ok) > 1 else 0.0
        rows.append(summary)
    return rows


def thread_budget() -> int:
    try:
        return max(1, int(os.environ.get("SPARCL_KIT_THREADS", "1")))
    except ValueError:
        return 1
