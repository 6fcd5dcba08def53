"""Batch layout, match labels and the per-anchor comparison sets.

Rows are laid out in role blocks: ``[0, n)`` real, ``[n, 2n)`` synthetic
negative, ``[2n, 3n)`` synthetic positive. Row ``role * n + g`` belongs to
group ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimMismatch, IndexOutOfRange, InvalidCount
from .toyworld import SampleGroup

REAL, SYN_NEG, SYN_POS = 0, 1, 2
ROLES = ("real", "sn", "sp")

# rows: image role, cols: caption role, within one group
_GROUP_BLOCK = np.array([[1, -1, 1], [-1, 1, -1], [1, -1, 1]], dtype=np.int8)


@dataclass
class Batch:
    n: int
    images: np.ndarray
    captions: np.ndarray

    def role_group(self, row: int) -> tuple[int, int]:
        return role_group(row, self.n)


@dataclass(frozen=True)
class PairSets:
    P: tuple[int, ...]
    N_h: tuple[int, ...]
    N_e: tuple[int, ...]
    N_r: tuple[int, ...]


def role_group(row: int, n: int) -> tuple[int, int]:
    if not 0 <= row < 3 * n:
        raise IndexOutOfRange(f"row {row} outside [0, {3 * n})")
    return row // n, row % n


def build_batch(groups: list[SampleGroup]) -> Batch:
    n = len(groups)
    if n < 1:
        raise InvalidCount("a batch needs at least one group")
    try:
        images = np.stack(
            [g.img_r for g in groups] + [g.img_sn for g in groups] + [g.img_sp for g in groups]
        ).astype(np.float64)
        captions = np.stack(
            [g.cap_r for g in groups] + [g.cap_sn for g in groups] + [g.cap_sp for g in groups]
        ).astype(np.float64)
    except ValueError as exc:
        raise DimMismatch(f"inconsistent vector dims across groups: {exc}") from exc
    if images.ndim != 2 or captions.ndim != 2:
        raise DimMismatch("group fields must be 1-D vectors")
    return Batch(n=n, images=images, captions=captions)


def build_real_batch(groups: list[SampleGroup]) -> Batch:
    """Real pairs only (no synthetic rows); n x D matrices with diagonal matches."""
    n = len(groups)
    if n < 1:
        raise InvalidCount("a batch needs at least one group")
    images = np.stack([g.img_r for g in groups]).astype(np.float64)
    captions = np.stack([g.cap_r for g in groups]).astype(np.float64)
    return Batch(n=n, images=images, captions=captions)


def alignment_matrix(n: int) -> np.ndarray:
    """3n x 3n labels in {-1, +1}; +1 only for the five matching role pairs per group."""
    if n < 1:
        raise InvalidCount("n must be >= 1")
    m = -np.ones((3 * n, 3 * n), dtype=np.int8)
    g = np.arange(n)
    for ri in range(3):
        for rc in range(3):
            if _GROUP_BLOCK[ri, rc] > 0:
                m[ri * n + g, rc * n + g] = 1
    return m


def caption_sets_for_image(row: int, n: int) -> PairSets:
    role, g = role_group(row, n)
    same = {r: r * n + g for r in range(3)}
    if role == SYN_NEG:
        P = (same[SYN_NEG],)
        N_h = (same[REAL], same[SYN_POS])
    else:
        P = (same[REAL], same[SYN_POS])
        N_h = (same[SYN_NEG],)
    N_e = tuple(j for j in range(3 * n) if j % n != g)
    N_r = tuple(j for j in range(n) if j != g)
    return PairSets(P=tuple(sorted(P)), N_h=tuple(sorted(N_h)), N_e=N_e, N_r=N_r)


def image_sets_for_caption(row: int, n: int) -> PairSets:
    """Mirror of caption_sets_for_image with the roles of images and captions swapped.

    The block pattern is symmetric, so the index sets coincide with the
    image-side sets for the same row.
    """
    return caption_sets_for_image(row, n)


@dataclass(frozen=True)
class Triples:
    """Flat (anchor, j1, j2) comparisons for one term of the margin loss.

    ``weight`` already carries the 1/(|A||B|) normaliser; the term's global
    multiplier (1 or alpha) is applied by the loss.
    """

    anchor: np.ndarray
    j1: np.ndarray
    j2: np.ndarray
    weight: np.ndarray


@lru_cache(maxsize=32)
def margin_triples(n: int) -> tuple[Triples, Triples, Triples]:
    """Comparison triples for the P x N_h, N_h x N_e and P x N_r terms, anchors ascending."""
    out: list[list[tuple[int, int, int, float]]] = [[], [], []]
    for i in range(3 * n):
        s = caption_sets_for_image(i, n)
        for k, (A, B) in enumerate(((s.P, s.N_h), (s.N_h, s.N_e), (s.P, s.N_r))):
            if not A or not B:
                continue
            w = 1.0 / (len(A) * len(B))
            out[k].extend((i, a, b, w) for a in A for b in B)
    result = []
    for rows in out:
        arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
        t = Triples(
            anchor=arr[:, 0].astype(np.intp),
            j1=arr[:, 1].astype(np.intp),
            j2=arr[:, 2].astype(np.intp),
            weight=arr[:, 3].copy(),
        )
        for a in (t.anchor, t.j1, t.j2, t.weight):
            a.setflags(write=False)
        result.append(t)
    return tuple(result)
