"""A toy compositional domain.

A scene is four discrete slots (subject, object, attribute, relation). Images
and captions are fixed random linear renderings of the scene's one-hot code
plus gaussian noise, so a one-slot edit is a "subtle variation" and a
two-slot edit is an over-modified, easy negative.

Every group draws from its own counter-based stream keyed by
``(world seed, stream id, index)``, which makes datasets order-independent.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptHeader, ImpossibleEdit, InvalidConfig, InvalidCount

SLOTS = ("subject", "object", "attribute", "relation")
EDIT_KINDS = ("attribute", "relation", "object_swap")
GROUP_FIELDS = ("img_r", "cap_r", "img_sn", "cap_sn", "img_sp", "cap_sp")

DATASET_FORMAT = "sparcl-toyworld"
DATASET_VERSION = 1

# stream ids for make_rng; training streams use 1000 + train seed
STREAM_DATASET = 0
STREAM_EVAL = 1
STREAM_INIT = 2


@dataclass(frozen=True)
class WorldConfig:
    n_obj: int = 6
    n_att: int = 8
    n_rel: int = 8
    dim_img: int = 64
    dim_txt: int = 64
    sigma_img: float = 0.02
    sigma_txt: float = 0.02
    p_bad_pos: float = 0.1
    p_easy_neg: float = 0.1
    # amplitude of attribute/relation columns relative to object columns
    fine_scale: float = 0.1
    # amplitude of the role-specific (subject vs object) part of object columns
    role_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_obj", "n_att", "n_rel"):
            if getattr(self, name) < 2:
                raise InvalidConfig(f"{name} must be >= 2")
        s = self.semantic_dim
        for name in ("dim_img", "dim_txt"):
            if getattr(self, name) < s:
                raise InvalidConfig(f"{name} must be >= semantic dim {s}")
        for name in ("sigma_img", "sigma_txt", "fine_scale", "role_scale"):
            if not getattr(self, name) >= 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if not (self.fine_scale > 0 and self.role_scale > 0):
            raise InvalidConfig("fine_scale and role_scale must be > 0")
        for name in ("p_bad_pos", "p_easy_neg"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")

    @property
    def semantic_dim(self) -> int:
        return 2 * self.n_obj + self.n_att + self.n_rel

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Scene:
    subject_id: int
    object_id: int
    attribute_id: int
    relation_id: int

    def slots(self) -> tuple[int, int, int, int]:
        return (self.subject_id, self.object_id, self.attribute_id, self.relation_id)

    def hamming(self, other: "Scene") -> int:
        return sum(a != b for a, b in zip(self.slots(), other.slots()))


@dataclass
class SampleGroup:
    img_r: np.ndarray
    cap_r: np.ndarray
    img_sn: np.ndarray
    cap_sn: np.ndarray
    img_sp: np.ndarray
    cap_sp: np.ndarray
    # diagnostics only; the trainer never reads these
    diag_pos_corrupted: bool = False
    diag_neg_easy: bool = False


@dataclass
class EvalCase:
    image: np.ndarray
    caption_pos: np.ndarray
    caption_neg: np.ndarray
    edit_kind: str
    scene_pos: Scene | None = field(default=None, repr=False)
    scene_neg: Scene | None = field(default=None, repr=False)


def make_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Philox generator for the counter position (seed, stream, index)."""
    ss = np.random.SeedSequence([int(seed), int(stream), int(index)])
    return np.random.Generator(np.random.Philox(ss))


class World:
    """A WorldConfig plus the fixed rendering maps drawn from its seed."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg
        s = cfg.semantic_dim
        rng = make_rng(cfg.seed, STREAM_INIT, 0)
        self.G_img = _full_rank_map(rng, cfg.dim_img, cfg)
        self.G_txt = _full_rank_map(rng, cfg.dim_txt, cfg)

    def onehot(self, scene: Scene) -> np.ndarray:
        cfg = self.cfg
        v = np.zeros(cfg.semantic_dim)
        v[scene.subject_id] = 1.0
        v[cfg.n_obj + scene.object_id] = 1.0
        v[2 * cfg.n_obj + scene.attribute_id] = 1.0
        v[2 * cfg.n_obj + cfg.n_att + scene.relation_id] = 1.0
        return v


def _full_rank_map(rng: np.random.Generator, rows: int, cfg: WorldConfig) -> np.ndarray:
    """Random rendering map with unit-norm base directions.

    Subject and object columns for the same object share a dominant direction
    and differ only by ``role_scale`` (word order is a weak signal), while
    attribute and relation columns are scaled down by ``fine_scale``.
    Re-drawn until it has full column rank.
    """
    n_obj, n_fine = cfg.n_obj, cfg.n_att + cfg.n_rel

    def unit(k):
        g = rng.standard_normal((rows, k))
        return g / np.linalg.norm(g, axis=0)

    while True:
        shared = unit(n_obj)
        subj = shared + cfg.role_scale * unit(n_obj)
        obj = shared + cfg.role_scale * unit(n_obj)
        fine = cfg.fine_scale * unit(n_fine)
        g = np.concatenate([subj, obj, fine], axis=1)
        if np.linalg.matrix_rank(g) == cfg.semantic_dim:
            return g


def sample_scene(rng: np.random.Generator, cfg: WorldConfig) -> Scene:
    subj = int(rng.integers(cfg.n_obj))
    obj = int(rng.integers(cfg.n_obj - 1))
    if obj >= subj:
        obj += 1
    return Scene(subj, obj, int(rng.integers(cfg.n_att)), int(rng.integers(cfg.n_rel)))


def _vocab_sizes(cfg: WorldConfig) -> tuple[int, int, int, int]:
    return (cfg.n_obj, cfg.n_obj, cfg.n_att, cfg.n_rel)


def _editable_slots(cfg: WorldConfig) -> list[int]:
    # subject/object must change and stay distinct from each other: needs 3 objects
    sizes = _vocab_sizes(cfg)
    return [i for i in range(4) if sizes[i] >= (3 if i < 2 else 2)]


def perturb(scene: Scene, rng: np.random.Generator, n_edits: int, cfg: WorldConfig) -> Scene:
    """Change exactly ``n_edits`` distinct slots of ``scene`` to new values."""
    if n_edits < 1:
        raise ImpossibleEdit("n_edits must be >= 1")
    editable = _editable_slots(cfg)
    if n_edits > len(editable):
        raise ImpossibleEdit(
            f"cannot edit {n_edits} slots; only {len(editable)} are editable with these vocab sizes"
        )
    sizes = _vocab_sizes(cfg)
    slots = list(scene.slots())
    chosen = rng.permutation(len(editable))[:n_edits]
    for pick in sorted(int(c) for c in chosen):
        slot = editable[pick]
        banned = {slots[slot]}
        if slot < 2:
            banned.add(slots[1 - slot])
        allowed = [v for v in range(sizes[slot]) if v not in banned]
        slots[slot] = allowed[int(rng.integers(len(allowed)))]
    return Scene(*slots)


def swap_objects(scene: Scene) -> Scene:
    return Scene(scene.object_id, scene.subject_id, scene.attribute_id, scene.relation_id)


def edit_slot(scene: Scene, rng: np.random.Generator, kind: str, cfg: WorldConfig) -> Scene:
    if kind == "object_swap":
        return swap_objects(scene)
    slot = {"attribute": 2, "relation": 3}[kind]
    slots = list(scene.slots())
    size = _vocab_sizes(cfg)[slot]
    new = int(rng.integers(size - 1))
    if new >= slots[slot]:
        new += 1
    slots[slot] = new
    return Scene(*slots)


def _render(G: np.ndarray, code: np.ndarray, rng: np.random.Generator, sigma: float) -> np.ndarray:
    noise = rng.standard_normal(G.shape[0])
    return G @ code + sigma * noise


def render_image(scene: Scene, rng: np.random.Generator, world: World) -> np.ndarray:
    return _render(world.G_img, world.onehot(scene), rng, world.cfg.sigma_img)


def render_caption(scene: Scene, rng: np.random.Generator, world: World) -> np.ndarray:
    return _render(world.G_txt, world.onehot(scene), rng, world.cfg.sigma_txt)


def make_group(rng: np.random.Generator, world: World) -> SampleGroup:
    cfg = world.cfg
    base = sample_scene(rng, cfg)

    neg_easy = bool(rng.random() < cfg.p_easy_neg)
    neg = perturb(base, rng, 2 if neg_easy else 1, cfg)

    pos_bad = bool(rng.random() < cfg.p_bad_pos)
    pos = perturb(base, rng, 1, cfg) if pos_bad else base

    # one noise draw for all six renders: images (r, sn, sp) then captions (r, sn, sp)
    codes = np.stack([world.onehot(base), world.onehot(neg), world.onehot(pos)])
    noise = rng.standard_normal(3 * (cfg.dim_img + cfg.dim_txt))
    n_img = noise[: 3 * cfg.dim_img].reshape(3, cfg.dim_img)
    n_txt = noise[3 * cfg.dim_img :].reshape(3, cfg.dim_txt)
    imgs = codes @ world.G_img.T + cfg.sigma_img * n_img
    caps = codes @ world.G_txt.T + cfg.sigma_txt * n_txt

    return SampleGroup(
        img_r=imgs[0],
        cap_r=caps[0],
        img_sn=imgs[1],
        cap_sn=caps[1],
        img_sp=imgs[2],
        cap_sp=caps[2],
        diag_pos_corrupted=pos_bad,
        diag_neg_easy=neg_easy,
    )


def group_at(world: World, stream: int, index: int) -> SampleGroup:
    return make_group(make_rng(world.cfg.seed, stream, index), world)


def make_eval_set(
    rng: np.random.Generator, world: World, count: int, edit_kind: str | None = None
) -> list[EvalCase]:
    """Pos/neg caption pairs for one image each. Kinds round-robin when unspecified."""
    if count < 1:
        raise InvalidCount(f"count must be >= 1, got {count}")
    if edit_kind is not None and edit_kind not in EDIT_KINDS:
        raise InvalidConfig(f"unknown edit kind {edit_kind!r}")
    cases = []
    for i in range(count):
        kind = edit_kind or EDIT_KINDS[i % len(EDIT_KINDS)]
        scene = sample_scene(rng, world.cfg)
        neg = edit_slot(scene, rng, kind, world.cfg)
        cases.append(
            EvalCase(
                image=render_image(scene, rng, world),
                caption_pos=render_caption(scene, rng, world),
                caption_neg=render_caption(neg, rng, world),
                edit_kind=kind,
                scene_pos=scene,
                scene_neg=neg,
            )
        )
    return cases


# -- dataset files ---------------------------------------------------------


def write_dataset(path: str | os.PathLike, world: World, count: int) -> dict:
    """Write ``count`` groups from the dataset stream; returns the meta summary."""
    if count < 1:
        raise InvalidCount(f"count must be >= 1, got {count}")
    cfg = world.cfg
    groups = [group_at(world, STREAM_DATASET, i) for i in range(count)]
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "count": count,
        "dim_img": cfg.dim_img,
        "dim_txt": cfg.dim_txt,
        "fields": list(GROUP_FIELDS),
        "dtype": "f32le",
        "config": cfg.to_dict(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for g in groups:
            for name in GROUP_FIELDS:
                fh.write(np.asarray(getattr(g, name), dtype="<f4").tobytes())
    meta = {
        "count": count,
        "pos_corrupted": sum(g.diag_pos_corrupted for g in groups),
        "neg_easy": sum(g.diag_neg_easy for g in groups),
        "pos_corrupted_idx": [i for i, g in enumerate(groups) if g.diag_pos_corrupted],
        "neg_easy_idx": [i for i, g in enumerate(groups) if g.diag_neg_easy],
    }
    with open(meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def meta_path(path: str | os.PathLike) -> str:
    return os.fspath(path) + ".meta.json"


def read_dataset(path: str | os.PathLike) -> tuple[dict, list[SampleGroup]]:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorruptHeader(f"{path}: bad header line") from exc
        payload = fh.read()
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise CorruptHeader(f"{path}: not a toyworld dataset")
    try:
        count, di, dt = int(header["count"]), int(header["dim_img"]), int(header["dim_txt"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"{path}: incomplete header") from exc
    per_group = 3 * (di + dt)
    if len(payload) != 4 * count * per_group:
        raise CorruptHeader(f"{path}: payload size does not match header dims")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(count, per_group)

    flags_pos: set[int] = set()
    flags_neg: set[int] = set()
    if os.path.exists(meta_path(path)):
        with open(meta_path(path)) as fh:
            meta = json.load(fh)
        flags_pos = set(meta.get("pos_corrupted_idx", []))
        flags_neg = set(meta.get("neg_easy_idx", []))

    dims = [di, dt, di, dt, di, dt]
    offsets = np.cumsum([0] + dims)
    groups = []
    for i, row in enumerate(data):
        parts = {name: row[offsets[k] : offsets[k + 1]].copy() for k, name in enumerate(GROUP_FIELDS)}
        groups.append(SampleGroup(**parts, diag_pos_corrupted=i in flags_pos, diag_neg_easy=i in flags_neg))
    return header, groups


__all__ = [
    "SLOTS",
    "EDIT_KINDS",
    "WorldConfig",
    "Scene",
    "SampleGroup",
    "EvalCase",
    "World",
    "make_rng",
    "sample_scene",
    "perturb",
    "render_image",
    "render_caption",
    "make_group",
    "group_at",
    "make_eval_set",
    "write_dataset",
    "read_dataset",
]
